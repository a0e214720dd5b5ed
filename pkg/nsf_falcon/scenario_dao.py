import json
import os
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, NotRequired, TypedDict

import numpy as np
import sympy
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from nsf_falcon.boundary import BoundarySpec, admissibility_check
from nsf_falcon.errors import EosError, MisuseError, ScenarioError, ShapeError
from nsf_falcon.solver import FieldState, Mesh1D, SolverConfig, SourceHook
from nsf_falcon.thermo import EosSpec, TransportSpec, check_eos


class MeshParameters(TypedDict):
    x0: float
    x1: float
    n: int


class ConfigParameters(TypedDict, total=False):
    epsilon: float
    delta: float
    Gamma: float
    d: int
    cfl: float
    t_end: float
    g: float
    rho_floor: float
    theta_floor: float
    theta_bar: float


class TableParameters(TypedDict):
    z: list[float]
    p: list[float]


class EosParameters(TypedDict, total=False):
    shape: str
    a: float
    p_inf: float
    entropy_const: float
    third_law: bool
    table: TableParameters
    # 輸送係数を同じ文書に書いてもよい
    lambda_exp: float
    mu: float
    eta: float
    kappa: float


class OutputParameters(TypedDict, total=False):
    every: float
    times: list[float]


"""
Scenario document:
    {
        "name": "heat_plateaus",
        "mesh": {"x0": 0.0, "x1": 1.0, "n": 64},
        "eos": {"shape": "iconic", "a": 1.0, "p_inf": 1.0} or "eos/iconic.json",
        "transport": {"lambda_exp": 0.5, "mu": 0.01, "kappa": 0.01},
        "boundary": {"faces": [{"pos": 0.0, "u_b": 0.0}, {"pos": 1.0, "u_b": 0.0}]},
        "config": {"t_end": 0.5},
        "initial": {"rho": "1", "u": "0", "theta": "1 + 0.5*cos(pi*x)"},
        "outputs": {"every": 0.1}
    }
"""
class ScenarioDocument(TypedDict):
    name: NotRequired[str]
    mesh: MeshParameters
    eos: EosParameters | str
    transport: NotRequired[dict[str, Any]]
    boundary: dict[str, Any]
    config: NotRequired[ConfigParameters]
    initial: dict[str, str | float | list[float]]
    outputs: NotRequired[OutputParameters]


# 初期値の式で使える名前
EXPRESSION_NAMES: dict[str, Any] = {
    "x": sympy.Symbol("x"),
    "pi": sympy.pi,
    "e": sympy.E,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "exp": sympy.exp,
    "log": sympy.log,
}

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))")

INITIAL_FIELDS: tuple[str, ...] = ("rho", "u", "theta")


def compile_expression(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """
    Compile an initial-data expression over x.

    Grammar: numbers, x, pi, e, + - * / ^, parentheses, sin, cos, exp, log.

    Raises:
        ValueError: unknown token or malformed expression
    """
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ValueError(f"unexpected character {text[pos]!r} at offset {pos}")
        name = match.group("name")
        if name is not None and name not in EXPRESSION_NAMES:
            raise ValueError(f"unknown name '{name}'")
        pos = match.end()
    try:
        expr = parse_expr(
            text,
            local_dict=dict(EXPRESSION_NAMES),
            global_dict={"Integer": sympy.Integer, "Float": sympy.Float, "Rational": sympy.Rational, "Symbol": sympy.Symbol},
            transformations=standard_transformations + (convert_xor,),
        )
    except (SyntaxError, TypeError, ValueError, sympy.SympifyError) as e:
        raise ValueError(f"malformed expression '{text}': {e}") from e
    x = EXPRESSION_NAMES["x"]
    if expr.free_symbols - {x}:
        raise ValueError(f"expression '{text}' depends on {sorted(map(str, expr.free_symbols - {x}))}")
    fn = sympy.lambdify(x, expr, "numpy")
    return lambda xs: np.asarray(fn(xs), dtype=float) * np.ones_like(xs, dtype=float)


def eos_from_dict(doc: Mapping[str, Any]) -> EosSpec:
    """
    Raises:
        EosError: invalid document or violated hypothesis (message starts with its tag)
    """
    table = doc.get("table") or {}
    try:
        return EosSpec(
            p_inf=float(doc.get("p_inf", 1.0)),
            a=float(doc.get("a", 1.0)),
            entropy_const=float(doc.get("entropy_const", 0.0)),
            third_law=bool(doc.get("third_law", False)),
            shape=str(doc.get("shape", "iconic")),
            table_z=tuple(float(z) for z in table.get("z", ())),
            table_p=tuple(float(p) for p in table.get("p", ())),
        )
    except (TypeError, ValueError, AttributeError) as e:
        raise EosError(f"schema: invalid EOS document: {e}") from e


TRANSPORT_KEYS: frozenset[str] = frozenset(
    ("lambda_exp", "mu", "eta", "kappa", "mu_under", "mu_over", "eta_over", "kappa_under", "kappa_over")
)


def _transport_scalars(ts: TransportSpec) -> tuple[float, ...]:
    return (ts.lambda_exp, ts.mu_under, ts.mu_over, ts.eta_over, ts.kappa_under, ts.kappa_over)


def transport_from_dict(doc: Mapping[str, Any]) -> TransportSpec:
    """Envelope keys (mu_under, mu_over, eta_over, kappa_under, kappa_over) or power-law shorthands (mu, eta, kappa)."""
    try:
        lam = float(doc.get("lambda_exp", 0.5))
        mu = float(doc.get("mu", 1.0))
        eta = float(doc.get("eta", 0.0))
        kappa = float(doc.get("kappa", 1.0))
        return TransportSpec(
            lambda_exp=lam,
            mu_under=float(doc.get("mu_under", mu)),
            mu_over=float(doc.get("mu_over", mu)),
            eta_over=float(doc.get("eta_over", eta)),
            kappa_under=float(doc.get("kappa_under", kappa)),
            kappa_over=float(doc.get("kappa_over", kappa)),
        )
    except (TypeError, ValueError, AttributeError) as e:
        raise EosError(f"schema: invalid transport document: {e}") from e


def eos_to_dict(eos: EosSpec, ts: TransportSpec | None = None) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "shape": eos.shape,
        "a": eos.a,
        "p_inf": eos.p_inf,
        "entropy_const": eos.entropy_const,
        "third_law": eos.third_law,
    }
    if eos.shape == "table":
        doc["table"] = {"z": list(eos.table_z), "p": list(eos.table_p)}
    if ts is not None:
        doc.update(
            lambda_exp=ts.lambda_exp,
            mu_under=ts.mu_under,
            mu_over=ts.mu_over,
            eta_over=ts.eta_over,
            kappa_under=ts.kappa_under,
            kappa_over=ts.kappa_over,
        )
    return doc


def _read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ScenarioError([(path, "schema", "file not found")]) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ScenarioError([(path, "schema", f"invalid JSON: {e}")]) from e


def _eos_document(path: str) -> tuple[EosSpec, TransportSpec | None]:
    # 輸送係数のキーがなければ None
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ScenarioError([(path, "schema", "EOS document must be an object")])
    try:
        transport = transport_from_dict(doc) if TRANSPORT_KEYS & set(doc) else None
        return eos_from_dict(doc), transport
    except EosError as e:
        raise ScenarioError([(path, _tag(str(e)), str(e))]) from e


def load_eos_document(path: str) -> tuple[EosSpec, TransportSpec]:
    """Read an eos.json document (EOS keys plus optional transport keys)."""
    eos, transport = _eos_document(path)
    return eos, transport if transport is not None else transport_from_dict({})


def _tag(message: str) -> str:
    head = message.split(":", 1)[0].strip()
    return head if re.fullmatch(r"[A-Za-z]+\d*[a-z]*", head) else "schema"


@dataclass(frozen=True)
class Scenario:
    """
    Validated scenario. Construct through load_scenario or build_scenario.

    Args:
        name (str): label used in exported files
        mesh (Mesh1D): mesh
        eos (EosSpec): closure
        transport (TransportSpec): transport closures
        boundary (BoundarySpec): boundary data
        config (SolverConfig): solver configuration
        initial (dict[str, Any]): expression strings, constants or arrays per field
        output_times (tuple[float, ...]): output schedule including 0 and t_end
        source (SourceHook | None): volume sources (manufactured solutions only)
    """

    name: str
    mesh: Mesh1D
    eos: EosSpec
    transport: TransportSpec
    boundary: BoundarySpec
    config: SolverConfig
    initial: dict[str, Any]
    output_times: tuple[float, ...]
    source: SourceHook | None = field(default=None, compare=False)

    def _field(self, key: str) -> np.ndarray:
        value = self.initial[key]
        x = self.mesh.centers
        if callable(value):
            return np.asarray(value(x), dtype=float) * np.ones_like(x)
        if isinstance(value, str):
            return compile_expression(value)(x)
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full_like(x, float(arr))
        if arr.shape != x.shape:
            raise ShapeError(f"initial '{key}' has {arr.size} values, mesh has {x.size} cells")
        return arr.copy()

    def initial_state(self) -> FieldState:
        """Evaluate the initial data on the mesh; theta is clamped to [theta_floor, 1/theta_floor]."""
        floor = self.config.theta_floor
        theta = self._field("theta")
        clamped = np.clip(theta, floor, 1.0 / floor)
        clamps = int(np.count_nonzero(clamped != theta))
        if clamps:
            print(f"Clamped initial temperature in {clamps} cells to [{floor:g}, {1.0 / floor:g}]")
        return FieldState(rho=self._field("rho"), u=self._field("u"), theta=clamped, t=0.0)

    def with_resolution(self, n_cells: int) -> "Scenario":
        for key in INITIAL_FIELDS:
            value = self.initial[key]
            if not (callable(value) or isinstance(value, (str, int, float))):
                raise MisuseError(f"initial '{key}' is an array and cannot be resampled to {n_cells} cells")
        mesh = Mesh1D(self.mesh.x_left, self.mesh.x_right, n_cells)
        return replace(self, mesh=mesh)

    def with_config(self, **changes: Any) -> "Scenario":
        config = replace(self.config, **changes)
        return replace(self, config=config, output_times=_clip_outputs(self.output_times, config.t_end))


def _clip_outputs(times: tuple[float, ...], t_end: float) -> tuple[float, ...]:
    return tuple(sorted({t for t in times if t < t_end} | {0.0, t_end}))


def output_schedule(block: Mapping[str, Any] | None, t_end: float) -> tuple[float, ...]:
    """Output times from {"every": dt} or {"times": [...]}; default (0, t_end)."""
    if not block:
        return _clip_outputs((), t_end)
    if "every" in block:
        every = float(block["every"])
        if not every > 0.0:
            raise ValueError(f"outputs.every must be positive (got {every})")
        count = int(np.floor(t_end / every + 1e-9))
        return _clip_outputs(tuple(k * every for k in range(count + 1)), t_end)
    times = [float(t) for t in block.get("times", [])]
    bad = [t for t in times if not 0.0 <= t <= t_end]
    if bad:
        raise ValueError(f"output times {bad} lie outside [0, {t_end}]")
    return _clip_outputs(tuple(times), t_end)


def build_scenario(doc: Mapping[str, Any], base_dir: str = ".", eos_samples: int = 256, seed: int = 0) -> Scenario:
    """
    Validate a scenario document and build the Scenario. Every failure is collected.

    Raises:
        ScenarioError: all issues, each with a field path and the violated hypothesis
    """
    issues: list[tuple[str, str, str]] = []

    mesh = None
    try:
        block = doc["mesh"]
        mesh = Mesh1D(float(block["x0"]), float(block["x1"]), int(block["n"]))
    except (KeyError, TypeError, ValueError) as e:
        issues.append(("mesh", "schema", f"mesh needs numeric x0 < x1 and n >= 1: {e}"))

    eos = None
    eos_transport = None
    eos_doc = doc.get("eos", {})
    try:
        if isinstance(eos_doc, str):
            eos, eos_transport = _eos_document(os.path.join(base_dir, eos_doc))
        else:
            eos = eos_from_dict(eos_doc)
    except EosError as e:
        issues.append(("eos", _tag(str(e)), str(e)))
    except ScenarioError as e:
        issues.extend(e.issues)

    transport = None
    try:
        if "transport" in doc or eos_transport is None:
            transport = transport_from_dict(doc.get("transport", {}))
            if eos_transport is not None and _transport_scalars(eos_transport) != _transport_scalars(transport):
                print(f"Ignoring transport keys in {eos_doc}; the scenario transport block takes precedence")
        else:
            transport = eos_transport
    except EosError as e:
        issues.append(("transport", _tag(str(e)), str(e)))

    if eos is not None and transport is not None:
        for v in check_eos(eos, transport, seed=seed, samples=eos_samples):
            if not v.passed:
                issues.append(("transport" if v.name.startswith(("ws8", "ws9", "ws10")) else "eos", v.name.split()[0], v.line()))

    config = None
    try:
        config = SolverConfig(**dict(doc.get("config", {})))
    except (TypeError, ValueError) as e:
        issues.append(("config", "schema", str(e)))

    boundary = None
    if mesh is not None:
        try:
            boundary = BoundarySpec.from_block(doc.get("boundary", {}), mesh.x_left, mesh.x_right)
        except ScenarioError as e:
            issues.extend(e.issues)
    if boundary is not None and eos is not None:
        verdict = admissibility_check(eos, boundary)
        for v in verdict.verdicts:
            if not v.passed:
                issues.append(("boundary.faces", v.name.split()[0], v.line()))

    initial = dict(doc.get("initial", {}))
    for key in INITIAL_FIELDS:
        value = initial.get(key)
        path = f"initial.{key}"
        if value is None:
            issues.append((path, "E2", "initial data must give rho, u and theta"))
        elif isinstance(value, str):
            try:
                compile_expression(value)
            except ValueError as e:
                issues.append((path, "schema", str(e)))
        elif isinstance(value, list) and mesh is not None and len(value) != mesh.n_cells:
            issues.append((path, "schema", f"{len(value)} values for {mesh.n_cells} cells"))

    output_times: tuple[float, ...] = ()
    if config is not None:
        try:
            output_times = output_schedule(doc.get("outputs"), config.t_end)
        except (TypeError, ValueError) as e:
            issues.append(("outputs", "schema", str(e)))

    if issues:
        raise ScenarioError(issues)
    scenario = Scenario(
        name=str(doc.get("name", "scenario")),
        mesh=mesh,
        eos=eos,
        transport=transport,
        boundary=boundary,
        config=config,
        initial=initial,
        output_times=output_times,
    )
    state = scenario.initial_state()
    bad = [k for k, arr in (("rho", state.rho), ("theta", state.theta)) if not np.all(arr > 0.0)]
    if bad:
        raise ScenarioError([(f"initial.{k}", "E2", "initial density and temperature must be positive") for k in bad])
    return scenario


def load_scenario(path: str, eos_samples: int = 256, seed: int = 0) -> Scenario:
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ScenarioError([(path, "schema", "scenario must be a JSON object")])
    return build_scenario(doc, base_dir=os.path.dirname(os.path.abspath(path)), eos_samples=eos_samples, seed=seed)


def load_boundary(path: str) -> tuple[EosSpec, BoundarySpec]:
    """
    Read only the mesh ends, the EOS and the boundary block of a scenario.

    Used to report admissibility margins of data that load_scenario would reject.
    """
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ScenarioError([(path, "schema", "scenario must be a JSON object")])
    try:
        x0, x1 = float(doc["mesh"]["x0"]), float(doc["mesh"]["x1"])
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError([("mesh", "schema", f"mesh needs numeric x0 and x1: {e}")]) from e
    eos_doc = doc.get("eos", {})
    try:
        if isinstance(eos_doc, str):
            eos, _ = load_eos_document(os.path.join(os.path.dirname(os.path.abspath(path)), eos_doc))
        else:
            eos = eos_from_dict(eos_doc)
    except EosError as e:
        raise ScenarioError([("eos", _tag(str(e)), str(e))]) from e
    return eos, BoundarySpec.from_block(doc.get("boundary", {}), x0, x1)
