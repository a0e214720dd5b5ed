import csv
from dataclasses import dataclass, field
from math import inf, isfinite

import numpy as np

from nsf_falcon.errors import DomainError, ShapeError
from nsf_falcon.thermo import (
    ConservativeState,
    EosSpec,
    ThermoState,
    energy_gradient,
    extended_internal_energy,
    internal_energy_density,
    pressure,
    specific_entropy,
    specific_internal_energy,
    vector_norm_sq,
)


TRACE_COLUMNS: tuple[str, ...] = ("t", "rel_energy", "kinetic", "bregman")


@dataclass(frozen=True)
class RelEnergySample:
    """Pointwise relative energy split into its kinetic and internal Bregman parts."""

    value: float
    kinetic_part: float
    bregman_part: float


@dataclass
class RelEnergyTrace:
    """
    Mesh-integrated relative energy against a reference run at a sequence of times.

    Args:
        times (list[float]): increasing sample instants
        integrals (list[float]): relative energy integral per time
        kinetic (list[float]): kinetic part per time
        bregman (list[float]): internal Bregman part per time
        reference_label (str): provenance of the reference trio
    """

    times: list[float] = field(default_factory=list)
    integrals: list[float] = field(default_factory=list)
    kinetic: list[float] = field(default_factory=list)
    bregman: list[float] = field(default_factory=list)
    reference_label: str = ""

    def __post_init__(self):
        if not len(self.times) == len(self.integrals) == len(self.kinetic) == len(self.bregman):
            raise ShapeError("trace columns must have equal lengths")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("trace times must be strictly increasing")

    def append(self, t: float, kinetic: float, bregman: float) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError(f"trace time {t} does not follow {self.times[-1]}")
        self.times.append(t)
        self.kinetic.append(kinetic)
        self.bregman.append(bregman)
        self.integrals.append(kinetic + bregman)

    def to_csv(self, path: str) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(TRACE_COLUMNS)
                for row in zip(self.times, self.integrals, self.kinetic, self.bregman):
                    writer.writerow([format(v, ".17g") for v in row])
        except OSError as e:
            raise RuntimeError(f"Error writing relative energy trace to {path}: {e}") from e


def _densities(eos: EosSpec, rho: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(rho e, rho s) for rho >= 0; at rho = 0 only the radiation parts a theta^4 and (4a/3) theta^3 remain."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    energy = np.asarray(internal_energy_density(eos, rho, theta))
    safe = np.where(rho > 0.0, rho, 1.0)
    entropy = np.where(rho > 0.0, safe * np.asarray(specific_entropy(eos, safe, theta)), 4.0 * eos.a / 3.0 * theta**3)
    return energy, entropy


def _bregman_standard(
    eos: EosSpec, rho: np.ndarray, theta: np.ndarray, rho_r: np.ndarray, theta_r: np.ndarray
) -> np.ndarray:
    # H(rho, theta) = rho(e - theta_r s); dH/drho at the reference is e - theta s + p/rho by Gibbs
    energy, entropy = _densities(eos, rho, theta)
    energy_r, entropy_r = _densities(eos, rho_r, theta_r)
    e_r = np.asarray(specific_internal_energy(eos, rho_r, theta_r))
    s_r = np.asarray(specific_entropy(eos, rho_r, theta_r))
    p_r = np.asarray(pressure(eos, rho_r, theta_r))
    slope = e_r - theta_r * s_r + p_r / rho_r
    return energy - theta_r * entropy - slope * (rho - rho_r) - (energy_r - theta_r * entropy_r)


def relative_energy_standard(eos: EosSpec, state: ThermoState, ref: ThermoState) -> RelEnergySample:
    """
    Relative energy in standard variables.

    Raises:
        DomainError: the reference has no positive density or temperature
    """
    if not (ref.rho > 0.0 and ref.theta > 0.0):
        raise DomainError(f"reference state must be interior (got rho={ref.rho}, theta={ref.theta})")
    du = np.atleast_1d(np.asarray(state.u, dtype=float)) - np.atleast_1d(np.asarray(ref.u, dtype=float))
    kinetic = 0.5 * state.rho * float(np.sum(du**2))
    bregman = float(_bregman_standard(eos, state.rho, state.theta, ref.rho, ref.theta))
    return RelEnergySample(value=kinetic + bregman, kinetic_part=kinetic, bregman_part=bregman)


def relative_energy_conservative(eos: EosSpec, c: ConservativeState, cref: ConservativeState) -> RelEnergySample:
    """
    Bregman divergence of E(rho, m, S) = |m|^2/(2 rho) + E_int(rho, S) at c against the
    supporting plane at cref. States off the closure of the admissible set give +inf.
    """
    d_rho, u_r, theta_r = energy_gradient(eos, cref)
    m = np.atleast_1d(np.asarray(c.m, dtype=float))
    if c.rho < 0.0 or (c.rho == 0.0 and vector_norm_sq(m) > 0.0):
        return RelEnergySample(value=inf, kinetic_part=inf, bregman_part=inf)

    internal = extended_internal_energy(eos, c.rho, c.S)
    if not isfinite(internal):
        kinetic = 0.0 if c.rho == 0.0 else 0.5 * c.rho * float(np.sum((m / c.rho - u_r) ** 2))
        return RelEnergySample(value=inf, kinetic_part=kinetic, bregman_part=inf)

    internal_r = extended_internal_energy(eos, cref.rho, cref.S)
    kinetic_slope = -0.5 * float(np.sum(u_r**2))
    # d_rho は運動エネルギー分 -|u|^2/2 を含む
    internal_slope = d_rho - kinetic_slope
    bregman = internal - internal_r - internal_slope * (c.rho - cref.rho) - theta_r * (c.S - cref.S)
    kinetic = 0.0 if c.rho == 0.0 else 0.5 * c.rho * float(np.sum((m / c.rho - u_r) ** 2))
    return RelEnergySample(value=kinetic + bregman, kinetic_part=kinetic, bregman_part=bregman)


def relative_energy_parts(eos: EosSpec, fields, ref_fields, mesh) -> tuple[float, float]:
    """
    Midpoint-rule integrals (kinetic, bregman) of the relative energy of fields against ref_fields.

    Both arguments carry per-cell rho, u, theta arrays on the given mesh.

    Raises:
        ShapeError: the fields do not live on the mesh
    """
    n = mesh.n_cells
    for name, f in (("fields", fields), ("ref_fields", ref_fields)):
        sizes = {np.size(f.rho), np.size(f.u), np.size(f.theta)}
        if sizes != {n}:
            raise ShapeError(f"{name} has sizes {sorted(sizes)}, mesh has {n} cells")
    rho = np.asarray(fields.rho, dtype=float)
    rho_r = np.asarray(ref_fields.rho, dtype=float)
    theta_r = np.asarray(ref_fields.theta, dtype=float)
    if not (np.all(rho_r > 0.0) and np.all(theta_r > 0.0)):
        raise DomainError("reference fields must be interior (positive density and temperature)")
    kinetic = 0.5 * rho * (np.asarray(fields.u, dtype=float) - np.asarray(ref_fields.u, dtype=float)) ** 2
    bregman = _bregman_standard(eos, rho, np.asarray(fields.theta, dtype=float), rho_r, theta_r)
    # np.sum は pairwise 加算
    return mesh.h * float(np.sum(kinetic)), mesh.h * float(np.sum(bregman))


def relative_energy_integral(eos: EosSpec, fields, ref_fields, mesh) -> float:
    kinetic, bregman = relative_energy_parts(eos, fields, ref_fields, mesh)
    return kinetic + bregman


def ballistic_free_energy(eos: EosSpec, rho_b: float, theta_tilde: float, theta: float) -> float:
    """e(rho_b, theta_tilde) - theta s(rho_b, theta_tilde); minimal in theta_tilde at theta_tilde = theta."""
    e = float(specific_internal_energy(eos, rho_b, theta_tilde))
    s = float(specific_entropy(eos, rho_b, theta_tilde))
    return e - theta * s
