from dataclasses import dataclass
from enum import Enum
from math import inf
from typing import Any, Mapping, Sequence

import numpy as np

from nsf_falcon.errors import MisuseError, ScenarioError
from nsf_falcon.thermo import EosSpec, specific_entropy, specific_internal_energy
from nsf_falcon.verdicts import Verdict


# u_b·n がこれ以下なら壁とみなす
WALL_TOLERANCE: float = 1e-14


class FaceLabel(str, Enum):
    IN = "In"
    OUT = "Out"
    WALL = "Wall"


def classify_value(u_b_dot_n: float, wall: bool = False) -> FaceLabel:
    if wall or abs(u_b_dot_n) <= WALL_TOLERANCE:
        return FaceLabel.WALL
    return FaceLabel.IN if u_b_dot_n < 0.0 else FaceLabel.OUT


@dataclass(frozen=True)
class BoundaryFace:
    """
    One boundary face of the 1D domain.

    Args:
        pos (float): face coordinate
        normal (float): outer normal, -1 at the left end and +1 at the right end
        u_b (float): boundary velocity
        rho_b (float | None): inflow density, In faces only
        F_ib (float | None): inflow energy flux [rho_b e u_b + q]·n, In faces only
        wall (bool): force the Wall label whatever the sign of u_b·n
    """

    pos: float
    normal: float
    u_b: float
    rho_b: float | None = None
    F_ib: float | None = None
    wall: bool = False

    @property
    def u_b_dot_n(self) -> float:
        return 0.0 if self.wall else self.u_b * self.normal

    @property
    def label(self) -> FaceLabel:
        return classify_value(self.u_b * self.normal, self.wall)


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary data of a 1D domain: exactly one face at each end."""

    faces: tuple[BoundaryFace, BoundaryFace]

    @property
    def left(self) -> BoundaryFace:
        return self.faces[0]

    @property
    def right(self) -> BoundaryFace:
        return self.faces[1]

    @property
    def classification(self) -> tuple[FaceLabel, FaceLabel]:
        return self.left.label, self.right.label

    def faces_with(self, label: FaceLabel) -> list[BoundaryFace]:
        return [f for f in self.faces if f.label is label]

    @classmethod
    def closed_box(cls, x_left: float, x_right: float) -> "BoundarySpec":
        return cls(
            faces=(
                BoundaryFace(pos=x_left, normal=-1.0, u_b=0.0, wall=True),
                BoundaryFace(pos=x_right, normal=1.0, u_b=0.0, wall=True),
            )
        )

    @classmethod
    def from_block(cls, block: Mapping[str, Any], x_left: float, x_right: float) -> "BoundarySpec":
        """
        Build from the scenario block {"faces": [{"pos", "u_b", "rho_b", "F_ib", "wall"}, ...]}.

        Raises:
            ScenarioError: every problem in the block, with its field path
        """
        issues: list[tuple[str, str, str]] = []
        raw = block.get("faces") if isinstance(block, Mapping) else None
        if not isinstance(raw, list) or len(raw) != 2:
            raise ScenarioError([("boundary.faces", "I1", "exactly two faces (one per domain end) are required")])

        faces: dict[float, BoundaryFace] = {}
        for i, item in enumerate(raw):
            path = f"boundary.faces[{i}]"
            if not isinstance(item, Mapping):
                issues.append((path, "schema", "face entry must be an object"))
                continue
            try:
                pos = float(item["pos"])
                u_b = float(item.get("u_b", 0.0))
            except (KeyError, TypeError, ValueError) as e:
                issues.append((path, "schema", f"pos and u_b must be numbers: {e}"))
                continue
            if np.isclose(pos, x_left):
                normal = -1.0
            elif np.isclose(pos, x_right):
                normal = 1.0
            else:
                issues.append((f"{path}.pos", "I1", f"face at {pos} is not a domain end ({x_left}, {x_right})"))
                continue
            wall = bool(item.get("wall", False))
            label = classify_value(u_b * normal, wall)
            values: dict[str, float | None] = {}
            for key in ("rho_b", "F_ib"):
                value = item.get(key)
                try:
                    values[key] = None if value is None else float(value)
                except (TypeError, ValueError) as e:
                    issues.append((f"{path}.{key}", "schema", f"{key} must be a number: {e}"))
            if len(values) != 2:
                continue
            rho_b, F_ib = values["rho_b"], values["F_ib"]
            if label is FaceLabel.IN:
                if rho_b is None or not rho_b > 0.0:
                    issues.append((f"{path}.rho_b", "E1", "rho_b > 0 on Gamma_in"))
                if F_ib is None:
                    issues.append((f"{path}.F_ib", "i9", "F_ib must be prescribed on Gamma_in"))
            elif F_ib is not None or rho_b is not None:
                # 流入面以外では使われない
                print(f"Ignoring rho_b/F_ib on {label.value} face at x={pos}")
                rho_b = F_ib = None
            faces[normal] = BoundaryFace(
                pos=pos,
                normal=normal,
                u_b=u_b,
                rho_b=rho_b,
                F_ib=F_ib,
                wall=wall,
            )
        if not issues and len(faces) != 2:
            issues.append(("boundary.faces", "I1", "both domain ends need a face"))
        if issues:
            raise ScenarioError(issues)
        return cls(faces=(faces[-1.0], faces[1.0]))


def classify_faces(mesh: Any, u_b: Sequence[float] | Mapping[float, float]) -> list[FaceLabel]:
    """
    Label the two boundary faces of a 1D mesh by the sign of u_b·n.

    Args:
        mesh: object with x_left and x_right
        u_b: (left, right) values or a mapping face position -> value
    """
    if isinstance(u_b, Mapping):
        values = [float(u_b[mesh.x_left]), float(u_b[mesh.x_right])]
    else:
        values = [float(v) for v in u_b]
    return [classify_value(values[0] * -1.0), classify_value(values[1] * 1.0)]


def entropy_inflow_flux(eos: EosSpec, rho_b: float, theta: float, u_b_dot_n: float, F_ib: float) -> float:
    """S_ib = F_ib/theta + (s(rho_b, theta) - e(rho_b, theta)/theta) rho_b u_b·n."""
    if not u_b_dot_n < 0.0:
        raise MisuseError(f"entropy inflow flux is defined on Gamma_in only (u_b·n = {u_b_dot_n})")
    s = float(specific_entropy(eos, rho_b, theta))
    e = float(specific_internal_energy(eos, rho_b, theta))
    return F_ib / theta + (s - e / theta) * rho_b * u_b_dot_n


def entropy_boundary_flux(eos: EosSpec, rho_b: float, theta: float, u_b_dot_n: float, q_dot_n: float) -> float:
    """Convective plus conductive entropy flux rho_b s u_b·n + q·n/theta."""
    return rho_b * float(specific_entropy(eos, rho_b, theta)) * u_b_dot_n + q_dot_n / theta


def cold_heat_flux_split(eos: EosSpec, rho_b: float, u_b_dot_n: float, F_ib: float) -> tuple[float, float]:
    """
    Split F_ib into the cold flux (3/2) p_inf rho_b^{5/3} u_b·n and the heat part.

    Returns:
        tuple[float, float]: (cold_flux, F_tau) with F_tau = F_ib/u_b·n - (3/2) p_inf rho_b^{5/3}
    """
    if not u_b_dot_n < 0.0:
        raise MisuseError(f"the cold/heat split is defined on Gamma_in only (u_b·n = {u_b_dot_n})")
    cold_coef = 1.5 * eos.p_inf * rho_b ** (5.0 / 3.0)
    return cold_coef * u_b_dot_n, F_ib / u_b_dot_n - cold_coef


@dataclass(frozen=True)
class AdmissibilityVerdict:
    passed: bool
    margin: float
    face_margins: dict[float, float]
    verdicts: list[Verdict]


def admissibility_check(eos: EosSpec, spec: BoundarySpec) -> AdmissibilityVerdict:
    """
    Check the inflow data: rho_b > 0 (E1), F_ib < 0 (ws12) and
    sup over Gamma_in of F_ib/|u_b·n| + (3/2) p_inf rho_b^{5/3} < 0 (ws14bis).
    """
    margins: dict[float, float] = {}
    e1_ok = True
    ws12_ok = True
    for face in spec.faces_with(FaceLabel.IN):
        if face.rho_b is None or not face.rho_b > 0.0:
            e1_ok = False
            margins[face.pos] = inf
            continue
        F_ib = face.F_ib if face.F_ib is not None else 0.0
        ws12_ok = ws12_ok and F_ib < 0.0
        margins[face.pos] = F_ib / abs(face.u_b_dot_n) + 1.5 * eos.p_inf * face.rho_b ** (5.0 / 3.0)
    margin = max(margins.values()) if margins else -inf
    verdicts = [
        Verdict("E1 rho_b > 0 on Gamma_in", e1_ok),
        Verdict("ws12 F_ib < 0 on Gamma_in", ws12_ok),
        Verdict("ws14bis sup F_ib/|u_b·n| + 1.5 p_inf rho_b^(5/3) < 0", margin < 0.0, f"margin {margin:.6g}"),
    ]
    return AdmissibilityVerdict(
        passed=all(v.passed for v in verdicts),
        margin=margin,
        face_margins=margins,
        verdicts=verdicts,
    )


def face_velocity(face: BoundaryFace) -> float:
    # 壁面は u_b によらず速度 0
    return 0.0 if face.label is FaceLabel.WALL else face.u_b


def boundary_velocity(spec: BoundarySpec, x: np.ndarray) -> np.ndarray:
    """Linear extension of u_b into the domain."""
    xl, xr = spec.left.pos, spec.right.pos
    ul, ur = face_velocity(spec.left), face_velocity(spec.right)
    return ul + (ur - ul) * (np.asarray(x, dtype=float) - xl) / (xr - xl)


def boundary_velocity_gradient(spec: BoundarySpec) -> float:
    return (face_velocity(spec.right) - face_velocity(spec.left)) / (spec.right.pos - spec.left.pos)
