from dataclasses import asdict, dataclass, field
from math import exp, inf, log
from typing import Any

import numpy as np
from scipy.optimize import minimize_scalar

from nsf_falcon.boundary import BoundarySpec, boundary_velocity
from nsf_falcon.errors import MisuseError
from nsf_falcon.relent import RelEnergyTrace, relative_energy_parts
from nsf_falcon.settings import AUDIT_DEFAULTS
from nsf_falcon.solver import (
    ENERGY_LHS_TERMS,
    ENERGY_RHS_TERMS,
    ENTROPY_LHS_TERMS,
    ENTROPY_RHS_TERMS,
    FieldState,
    Trajectory,
)
from nsf_falcon.thermo import (
    EosSpec,
    TransportSpec,
    internal_energy_density,
    specific_entropy,
    temperature_from_entropy,
)
from nsf_falcon.verdicts import Verdict


@dataclass
class BudgetReport:
    """
    Discrete budgets of one time window.

    Args:
        window (tuple[float, float]): (t0, t1), both output times of the trajectory
        mass_residual (float): storage + boundary mass fluxes - sources
        energy_residual (float): LHS - RHS of the total energy balance, allowed <= tol
        entropy_production (float): LHS - RHS of the entropy inequality, required >= -tol
        dissipation (float): integrated dissipation term of the entropy balance
        boundary_terms (dict[str, float]): boundary integrals over the window
        energy_terms (dict[str, float]): every term of the energy balance
        entropy_terms (dict[str, float]): every term of the entropy balance
        apriori (dict[str, float]): monitored a-priori quantities at t1
        verdicts (list[Verdict]): PASS/FAIL per budget
    """

    window: tuple[float, float]
    mass_residual: float
    energy_residual: float
    entropy_production: float
    dissipation: float
    steps: int
    boundary_terms: dict[str, float] = field(default_factory=dict)
    energy_terms: dict[str, float] = field(default_factory=dict)
    entropy_terms: dict[str, float] = field(default_factory=dict)
    apriori: dict[str, float] = field(default_factory=dict)
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["window"] = list(self.window)
        data["verdicts"] = [{"name": v.name, "passed": v.passed, "detail": v.detail} for v in self.verdicts]
        return data


@dataclass(frozen=True)
class GronwallFit:
    """Envelope E(t) <= (E(0) + eta) exp(rate t) with the smallest value at the last time."""

    eta: float
    rate: float
    e0: float
    envelope_end: float


def _window_indices(trajectory: Trajectory, window: tuple[float, float] | None) -> tuple[int, int]:
    if window is None:
        return 0, len(trajectory.times) - 1
    t0, t1 = window
    try:
        i0, i1 = trajectory.index_of(t0), trajectory.index_of(t1)
    except KeyError as e:
        raise MisuseError(f"budget windows must start and end at output times: {e}") from e
    if i1 < i0:
        raise MisuseError(f"window ({t0}, {t1}) is reversed")
    return i0, i1


def _delta(trajectory: Trajectory, key: str, i0: int, i1: int) -> float:
    return trajectory.ledgers[i1][key] - trajectory.ledgers[i0][key]


def mass_storage(trajectory: Trajectory, state: FieldState) -> float:
    return trajectory.mesh.h * float(np.sum(state.rho))


def energy_storage(trajectory: Trajectory, boundary: BoundarySpec, state: FieldState) -> float:
    """Integral of (1/2) rho |u - u_b|^2 + rho e_delta + delta(rho^Gamma/(Gamma - 1) + rho^2)."""
    cfg = trajectory.config
    rho, theta = state.rho, state.theta
    ub = boundary_velocity(boundary, trajectory.mesh.centers)
    density = 0.5 * rho * (state.u - ub) ** 2 + np.asarray(internal_energy_density(trajectory.eos, rho, theta))
    if cfg.delta > 0.0:
        density = density + cfg.delta * (rho * theta + rho**cfg.Gamma / (cfg.Gamma - 1.0) + rho**2)
    return trajectory.mesh.h * float(np.sum(density))


def entropy_storage(trajectory: Trajectory, state: FieldState) -> float:
    """Integral of rho s_delta, s_delta = s + delta log(theta)."""
    cfg = trajectory.config
    density = state.rho * np.asarray(specific_entropy(trajectory.eos, state.rho, state.theta))
    if cfg.delta > 0.0:
        density = density + cfg.delta * state.rho * np.log(state.theta)
    return trajectory.mesh.h * float(np.sum(density))


def mass_budget(trajectory: Trajectory, boundary: BoundarySpec, window: tuple[float, float] | None = None) -> float:
    """[int rho] + inflow and outflow boundary integrals - volume sources over the window."""
    i0, i1 = _window_indices(trajectory, window)
    storage = mass_storage(trajectory, trajectory.states[i1]) - mass_storage(trajectory, trajectory.states[i0])
    return (
        storage
        + _delta(trajectory, "mass_in", i0, i1)
        + _delta(trajectory, "mass_out", i0, i1)
        - _delta(trajectory, "mass_source", i0, i1)
    )


def energy_budget(
    trajectory: Trajectory, boundary: BoundarySpec, window: tuple[float, float] | None = None
) -> tuple[float, dict[str, float]]:
    """
    Total energy balance with unit test function.

    Returns:
        tuple[float, dict[str, float]]: (LHS - RHS, every term including the storage change)
    """
    i0, i1 = _window_indices(trajectory, window)
    terms = {
        "storage": energy_storage(trajectory, boundary, trajectory.states[i1])
        - energy_storage(trajectory, boundary, trajectory.states[i0])
    }
    for key in ENERGY_LHS_TERMS + ENERGY_RHS_TERMS:
        terms[key] = _delta(trajectory, key, i0, i1)
    lhs = terms["storage"] + sum(terms[k] for k in ENERGY_LHS_TERMS)
    rhs = sum(terms[k] for k in ENERGY_RHS_TERMS)
    return lhs - rhs, terms


def entropy_budget(
    trajectory: Trajectory, boundary: BoundarySpec, window: tuple[float, float] | None = None
) -> tuple[float, dict[str, float]]:
    """
    Entropy inequality with unit test function.

    Returns:
        tuple[float, dict[str, float]]: (production = LHS - RHS, every term)
    """
    i0, i1 = _window_indices(trajectory, window)
    terms = {
        "storage": entropy_storage(trajectory, trajectory.states[i1]) - entropy_storage(trajectory, trajectory.states[i0])
    }
    for key in ENTROPY_LHS_TERMS + ENTROPY_RHS_TERMS:
        terms[key] = _delta(trajectory, key, i0, i1)
    lhs = terms["storage"] + sum(terms[k] for k in ENTROPY_LHS_TERMS)
    rhs = sum(terms[k] for k in ENTROPY_RHS_TERMS)
    return lhs - rhs, terms


def apriori_monitor(
    trajectory: Trajectory,
    boundary: BoundarySpec,
    upto: float | None = None,
    epsilon: float | None = None,
    delta: float | None = None,
) -> dict[str, float]:
    """
    Monitored a-priori quantities from the start of the run up to the output time upto.

    epsilon and delta override the weights of the regularisation terms (default: the run's levels).
    """
    cfg = trajectory.config
    theta_bar = cfg.theta_bar
    eps = cfg.epsilon if epsilon is None else epsilon
    dlt = cfg.delta if delta is None else delta
    _, i1 = _window_indices(trajectory, None if upto is None else (trajectory.times[0], upto))
    ledger = trajectory.ledgers[i1]

    sup_energy = -inf
    for state in trajectory.states[: i1 + 1]:
        value = energy_storage(trajectory, boundary, state) - theta_bar * entropy_storage(trajectory, state)
        sup_energy = max(sup_energy, value)

    return {
        "sup_energy_entropy": sup_energy,
        "dissipation": theta_bar * ledger["apriori_dissipation"],
        "inflow": ledger["apriori_in"],
        "outflow": ledger["apriori_out_e"] - theta_bar * ledger["apriori_out_s"],
        "delta_theta_m3": dlt * ledger["int_theta_m3"],
        "eps_theta_5": eps * ledger["int_theta_5"],
        "delta_out_potential": dlt * ledger["out_delta_pot"],
        "delta_in_square": dlt * ledger["in_delta_sq"],
        "eps_delta_gradient": eps * dlt * ledger["eps_delta_grad"],
    }


def audit(trajectory: Trajectory, boundary: BoundarySpec | None = None, window: tuple[float, float] | None = None) -> BudgetReport:
    """Evaluate every budget on one window and attach the verdicts."""
    boundary = boundary or trajectory.boundary
    i0, i1 = _window_indices(trajectory, window)
    t0, t1 = trajectory.times[i0], trajectory.times[i1]
    steps = trajectory.steps[i1] - trajectory.steps[i0]
    scale = trajectory.mesh.measure * max(t1 - t0, 0.0)

    mass_residual = mass_budget(trajectory, boundary, (t0, t1))
    energy_residual, energy_terms = energy_budget(trajectory, boundary, (t0, t1))
    production, entropy_terms = entropy_budget(trajectory, boundary, (t0, t1))

    mass_scale = max(1.0, mass_storage(trajectory, trajectory.states[i0]))
    mass_tol = AUDIT_DEFAULTS["mass_tol_per_step"] * max(steps, 1) * mass_scale
    entropy_tol = AUDIT_DEFAULTS["entropy_tol"] * scale
    energy_tol = AUDIT_DEFAULTS["energy_tol"] * scale
    verdicts = [
        Verdict("w1 mass balance", abs(mass_residual) <= mass_tol, f"residual {mass_residual:.3e} (tol {mass_tol:.1e})"),
        Verdict("w4 total energy balance", energy_residual <= energy_tol, f"residual {energy_residual:.3e} (tol {energy_tol:.1e})"),
        Verdict("w5 entropy inequality", production >= -entropy_tol, f"production {production:.3e} (tol {entropy_tol:.1e})"),
    ]
    boundary_terms = {
        "mass_in": _delta(trajectory, "mass_in", i0, i1),
        "mass_out": _delta(trajectory, "mass_out", i0, i1),
        "energy_in_F": energy_terms["energy_in_F"],
        "energy_out_int": energy_terms["energy_out_int"],
        "entropy_out": entropy_terms["entropy_out"],
        "entropy_in": entropy_terms["entropy_in"],
    }
    return BudgetReport(
        window=(t0, t1),
        mass_residual=mass_residual,
        energy_residual=energy_residual,
        entropy_production=production,
        dissipation=entropy_terms["dissipation"],
        steps=steps,
        boundary_terms=boundary_terms,
        energy_terms=energy_terms,
        entropy_terms=entropy_terms,
        apriori=apriori_monitor(trajectory, boundary, upto=t1),
        verdicts=verdicts,
    )


def windowed_audits(trajectory: Trajectory, boundary: BoundarySpec | None = None) -> list[BudgetReport]:
    """One report per pair of consecutive output times."""
    times = trajectory.times
    return [audit(trajectory, boundary, (a, b)) for a, b in zip(times, times[1:])]


def additivity_verdicts(
    trajectory: Trajectory, boundary: BoundarySpec | None = None, reports: list[BudgetReport] | None = None
) -> list[Verdict]:
    """Residuals of consecutive windows must add up to the residual over the whole run."""
    boundary = boundary or trajectory.boundary
    reports = windowed_audits(trajectory, boundary) if reports is None else reports
    whole = audit(trajectory, boundary)
    tol = AUDIT_DEFAULTS["additivity_tol"] * max(len(reports), 1)
    magnitudes = {
        "mass": max(1.0, mass_storage(trajectory, trajectory.states[0])),
        "energy": max([1.0] + [abs(v) for v in whole.energy_terms.values()]),
        "entropy": max([1.0] + [abs(v) for v in whole.entropy_terms.values()]),
    }
    verdicts = []
    for name, attr in (("mass", "mass_residual"), ("energy", "energy_residual"), ("entropy", "entropy_production")):
        gap = abs(sum(getattr(r, attr) for r in reports) - getattr(whole, attr))
        limit = tol * magnitudes[name]
        verdicts.append(Verdict(f"{name} window additivity", gap <= limit, f"gap {gap:.2e} (tol {limit:.1e})"))
    return verdicts


def gronwall_fit(times: list[float], values: list[float]) -> GronwallFit:
    """
    Fit E(t) <= (E(0) + eta) exp(L t), L >= 0, minimising the envelope at the last time.

    For a fixed eta the smallest admissible rate is max(0, max_t log(E(t)/(E(0) + eta))/t);
    eta is then chosen by a bounded search in log(eta).
    """
    t = np.asarray(times, dtype=float)
    e = np.maximum(np.asarray(values, dtype=float), 0.0)
    e0 = float(e[0])
    t_end = float(t[-1])
    later = t > 0.0
    if not np.any(e[later] > 0.0):
        return GronwallFit(eta=0.0, rate=0.0, e0=e0, envelope_end=e0)

    def rate(eta: float) -> float:
        base = e0 + eta
        ratios = e[later] / base
        with np.errstate(divide="ignore"):
            slopes = np.where(ratios > 0.0, np.log(np.where(ratios > 0.0, ratios, 1.0)) / t[later], -inf)
        return max(0.0, float(np.max(slopes)))

    def envelope(eta: float) -> float:
        return (e0 + eta) * exp(rate(eta) * t_end)

    candidates: list[float] = [0.0] if e0 > 0.0 else []
    scale = float(np.max(e))
    result = minimize_scalar(
        lambda x: log(envelope(exp(x))),
        bounds=(log(scale * 1e-12), log(scale * 1e3)),
        method="bounded",
    )
    candidates.append(float(exp(result.x)))
    # 上端（rate = 0 となる eta）も候補
    candidates.append(max(scale - e0, 0.0))
    best = min((c for c in candidates if e0 + c > 0.0), key=envelope)
    return GronwallFit(eta=best, rate=rate(best), e0=e0, envelope_end=envelope(best))


def _average_onto(eos: EosSpec, fine: FieldState, factor: int) -> FieldState:
    """Cell averages of (rho, m, S) over groups of fine cells, converted back to (rho, u, theta)."""
    rho = fine.rho.reshape(-1, factor)
    momentum = fine.momentum.reshape(-1, factor)
    entropy = (fine.rho * np.asarray(specific_entropy(eos, fine.rho, fine.theta))).reshape(-1, factor)
    rho_avg = rho.mean(axis=1)
    theta = temperature_from_entropy(eos, rho_avg, entropy.mean(axis=1), fine.theta.reshape(-1, factor).mean(axis=1))
    return FieldState(rho=rho_avg, u=momentum.mean(axis=1) / rho_avg, theta=theta, t=fine.t)


_TRANSPORT_SCALARS = ("lambda_exp", "mu_under", "mu_over", "eta_over", "kappa_under", "kappa_over")


def _same_transport(a: TransportSpec, b: TransportSpec) -> bool:
    # 閉包は同一性ではなく温度格子上の値で比べる
    if any(getattr(a, name) != getattr(b, name) for name in _TRANSPORT_SCALARS):
        return False
    grid = np.geomspace(1e-2, 1e2, 17)
    return all(
        np.allclose(np.broadcast_to(getattr(a, fn)(grid), grid.shape), np.broadcast_to(getattr(b, fn)(grid), grid.shape), rtol=1e-12, atol=0.0)
        for fn in ("mu_fn", "eta_fn", "kappa_fn")
    )


def _check_initial_data(coarse: FieldState, ref: FieldState, h: float) -> None:
    tol = AUDIT_DEFAULTS["initial_match_tol"]
    for name in ("rho", "u", "theta"):
        a, b = getattr(coarse, name), getattr(ref, name)
        gap = h * float(np.sum(np.abs(a - b)))
        scale = h * float(np.sum(np.abs(b)))
        if not gap <= tol * (1.0 + scale):
            raise MisuseError(f"weak-strong runs must start from the same initial data ({name}: L1 gap {gap:.3e})")


def weak_strong_trace(coarse_run: Trajectory, fine_run: Trajectory, eos: EosSpec | None = None) -> tuple[RelEnergyTrace, GronwallFit]:
    """
    Relative energy of the coarse run against the cell-averaged fine run at every common output time.

    Raises:
        MisuseError: the runs do not share scenario data or output times
    """
    eos = eos or coarse_run.eos
    cm, fm = coarse_run.mesh, fine_run.mesh
    if coarse_run.eos != fine_run.eos or eos != coarse_run.eos:
        raise MisuseError("weak-strong runs must share one EOS")
    if coarse_run.boundary != fine_run.boundary:
        raise MisuseError("weak-strong runs must share the boundary data")
    if not _same_transport(coarse_run.transport, fine_run.transport):
        raise MisuseError("weak-strong runs must share the transport closures")
    if coarse_run.config != fine_run.config:
        raise MisuseError(f"weak-strong runs must share the solver configuration ({coarse_run.config} vs {fine_run.config})")
    if not (np.isclose(cm.x_left, fm.x_left) and np.isclose(cm.x_right, fm.x_right)):
        raise MisuseError("weak-strong runs must share the domain")
    if fm.n_cells % cm.n_cells != 0:
        raise MisuseError(f"fine mesh ({fm.n_cells} cells) must refine the coarse mesh ({cm.n_cells} cells)")
    factor = fm.n_cells // cm.n_cells
    if coarse_run.states and fine_run.states:
        first = fine_run.states[0] if factor == 1 else _average_onto(eos, fine_run.states[0], factor)
        _check_initial_data(coarse_run.states[0], first, cm.h)

    trace = RelEnergyTrace(reference_label=f"cell average of a {fm.n_cells}-cell run (x{factor})")
    for t, state in zip(coarse_run.times, coarse_run.states):
        try:
            fine = fine_run.states[fine_run.index_of(t)]
        except KeyError as e:
            raise MisuseError(f"output time {t} is missing from the reference run") from e
        ref = fine if factor == 1 else _average_onto(eos, fine, factor)
        kinetic, bregman = relative_energy_parts(eos, state, ref, cm)
        trace.append(t, kinetic, bregman)
    return trace, gronwall_fit(trace.times, trace.integrals)
