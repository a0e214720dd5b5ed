from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import nan
from typing import Any, Callable

import numpy as np
import sympy

from nsf_falcon.boundary import BoundaryFace, BoundarySpec, admissibility_check
from nsf_falcon.budgets import GronwallFit, audit, weak_strong_trace
from nsf_falcon.errors import MisuseError, NsfError
from nsf_falcon.relent import RelEnergyTrace
from nsf_falcon.scenario_dao import Scenario
from nsf_falcon.settings import MMS_DEFAULTS
from nsf_falcon.solver import FieldState, Mesh1D, SolverConfig, Trajectory, run
from nsf_falcon.thermo import EosSpec, TransportSpec


T_SYM, X_SYM = sympy.symbols("t x", real=True)

MMS_KINDS: tuple[str, ...] = ("acoustic_smooth", "thermal_relaxation", "throughflow")

FIELDS: tuple[str, ...] = ("rho", "u", "theta")

# 製造解の定数（a = 1, p_inf = 1 の iconic EOS と弱い拡散）
MMS_EOS = EosSpec(p_inf=1.0, a=1.0)
MMS_TRANSPORT = TransportSpec.power_law(lambda_exp=0.5, mu=1e-2, eta=0.0, kappa=1e-2)
MMS_T_END: float = 0.25


def _closed_forms(eos: EosSpec, rho, theta):
    """Symbolic (p, rho e) for the iconic closure."""
    five_thirds = sympy.Rational(5, 3)
    z = rho / theta ** sympy.Rational(3, 2)
    shape = z + eos.p_inf * z**five_thirds
    p = theta ** sympy.Rational(5, 2) * shape + sympy.Float(eos.a) / 3 * theta**4
    energy = sympy.Rational(3, 2) * theta ** sympy.Rational(5, 2) * shape + sympy.Float(eos.a) * theta**4
    return p, energy


def _derive_sources(eos: EosSpec, ts: TransportSpec, cfg: SolverConfig, rho, u, theta) -> tuple:
    p, energy = _closed_forms(eos, rho, theta)
    u_x = sympy.diff(u, X_SYM)
    sigma = (ts.mu_fn(theta) * cfg.deviatoric_factor + ts.eta_fn(theta)) * u_x
    q = -ts.kappa_fn(theta) * sympy.diff(theta, X_SYM)
    f_rho = sympy.diff(rho, T_SYM) + sympy.diff(rho * u, X_SYM)
    f_m = sympy.diff(rho * u, T_SYM) + sympy.diff(rho * u**2 + p - sigma, X_SYM)
    f_energy = sympy.diff(energy, T_SYM) + sympy.diff(energy * u + q, X_SYM) - sigma * u_x + p * u_x
    return f_rho, f_m, f_energy


def _vectorise(expr) -> Callable[[float, np.ndarray], np.ndarray]:
    fn = sympy.lambdify((T_SYM, X_SYM), expr, "numpy")

    def evaluate(t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(fn(t, x), dtype=float), x.shape).copy()

    return evaluate


@dataclass(frozen=True)
class MmsCase:
    """
    Closed-form fields with the volume sources that make them exact solutions
    of the unregularised system, plus boundary data read off their traces.
    """

    kind: str
    eos: EosSpec
    transport: TransportSpec
    config: SolverConfig
    x_left: float
    x_right: float
    rho: Any
    u: Any
    theta: Any
    boundary: BoundarySpec
    sources: tuple = field(default=(), compare=False)

    @cached_property
    def _fields(self) -> tuple[Callable, Callable, Callable]:
        return _vectorise(self.rho), _vectorise(self.u), _vectorise(self.theta)

    @cached_property
    def _source_fns(self) -> tuple[Callable, Callable, Callable]:
        return tuple(_vectorise(s) for s in self.sources)

    def exact(self, t: float, x: np.ndarray) -> FieldState:
        rho, u, theta = (f(t, x) for f in self._fields)
        return FieldState(rho=rho, u=u, theta=theta, t=t)

    def source(self, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f_rho, f_m, f_energy = self._source_fns
        return f_rho(t, x), f_m(t, x), f_energy(t, x)

    def scenario(self, n_cells: int, t_end: float | None = None, cfl: float | None = None) -> Scenario:
        changes: dict[str, float] = {}
        if t_end is not None:
            changes["t_end"] = t_end
        if cfl is not None:
            changes["cfl"] = cfl
        config = replace(self.config, **changes)
        rho_fn, u_fn, theta_fn = self._fields
        return Scenario(
            name=f"mms_{self.kind}_{n_cells}",
            mesh=Mesh1D(self.x_left, self.x_right, n_cells),
            eos=self.eos,
            transport=self.transport,
            boundary=self.boundary,
            config=config,
            initial={
                "rho": lambda x: rho_fn(0.0, x),
                "u": lambda x: u_fn(0.0, x),
                "theta": lambda x: theta_fn(0.0, x),
            },
            output_times=(0.0, config.t_end) if config.t_end > 0.0 else (0.0,),
            source=self.source,
        )


def _wall_box(x_left: float, x_right: float) -> BoundarySpec:
    return BoundarySpec.closed_box(x_left, x_right)


def manufactured_case(kind: str) -> MmsCase:
    """
    Build a manufactured case and check its sources against the closed forms.

    Raises:
        MisuseError: unknown kind
        NsfError: the source residual check fails
    """
    t, x = T_SYM, X_SYM
    pi = sympy.pi
    tenth = sympy.Rational(1, 10)
    if kind == "thermal_relaxation":
        rho = sympy.Integer(1)
        u = sympy.Integer(0)
        theta = 1 + tenth * sympy.exp(-t) * sympy.cos(pi * x)
        boundary = _wall_box(0.0, 1.0)
    elif kind == "acoustic_smooth":
        wave = sympy.cos(pi * x) * sympy.cos(2 * pi * t)
        rho = 1 + tenth * wave
        theta = 1 + tenth * wave
        u = sympy.Rational(1, 20) * sympy.sin(pi * x) * sympy.sin(2 * pi * t)
        boundary = _wall_box(0.0, 1.0)
    elif kind == "throughflow":
        rho = 1 + tenth * sympy.sin(pi * x) * sympy.exp(-t)
        u = sympy.Integer(1)
        theta = 1 + tenth * sympy.exp(-t) * (1 - sympy.cos(pi * x))
        # x = 0 の痕跡: rho = theta = 1、熱流束 0
        _, energy = _closed_forms(MMS_EOS, sympy.Integer(1), sympy.Integer(1))
        boundary = BoundarySpec(
            faces=(
                BoundaryFace(pos=0.0, normal=-1.0, u_b=1.0, rho_b=1.0, F_ib=-float(energy)),
                BoundaryFace(pos=1.0, normal=1.0, u_b=1.0),
            )
        )
    else:
        raise MisuseError(f"unknown manufactured case '{kind}' (expected one of {MMS_KINDS})")

    config = SolverConfig(t_end=MMS_T_END)
    sources = _derive_sources(MMS_EOS, MMS_TRANSPORT, config, rho, u, theta)
    case = MmsCase(
        kind=kind,
        eos=MMS_EOS,
        transport=MMS_TRANSPORT,
        config=config,
        x_left=0.0,
        x_right=1.0,
        rho=rho,
        u=u,
        theta=theta,
        boundary=boundary,
        sources=sources,
    )
    residual = verify_mms(case)
    if residual > MMS_DEFAULTS["residual_tol"]:
        raise NsfError(f"manufactured case '{kind}' fails the source residual check: {residual:.3e}")
    return case


def _d4(fn: Callable[[np.ndarray], np.ndarray], s: np.ndarray, h: float) -> np.ndarray:
    # 4 次精度の中心差分
    return (fn(s - 2 * h) - 8 * fn(s - h) + 8 * fn(s + h) - fn(s + 2 * h)) / (12 * h)


def verify_mms(case: MmsCase, times: tuple[float, ...] = (0.1, 0.2), h: float = 1e-3) -> float:
    """
    Largest residual of the balance laws evaluated by finite differences on the closed
    forms plus the derived sources, over a sample grid of the configured size.
    """
    eos, ts, cfg = case.eos, case.transport, case.config
    rho_fn, u_fn, theta_fn = case._fields
    xs = np.linspace(case.x_left, case.x_right, MMS_DEFAULTS["residual_points"])
    worst = 0.0

    def thermo(t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        rho, theta = rho_fn(t, x), theta_fn(t, x)
        z = rho / theta**1.5
        shape = z + eos.p_inf * z ** (5.0 / 3.0)
        p = theta**2.5 * shape + eos.a / 3.0 * theta**4
        energy = 1.5 * theta**2.5 * shape + eos.a * theta**4
        return rho, theta, p, energy

    def stress(t: float, x: np.ndarray) -> np.ndarray:
        theta = theta_fn(t, x)
        u_x = _d4(lambda s: u_fn(t, s), x, h)
        return (ts.mu_fn(theta) * cfg.deviatoric_factor + ts.eta_fn(theta)) * u_x

    def heat(t: float, x: np.ndarray) -> np.ndarray:
        return -ts.kappa_fn(theta_fn(t, x)) * _d4(lambda s: theta_fn(t, s), x, h)

    for t in times:
        f_rho, f_m, f_energy = case.source(t, xs)
        _, _, p, _ = thermo(t, xs)
        u_x = _d4(lambda s: u_fn(t, s), xs, h)

        mass_t = _d4(lambda tau: thermo(float(tau[0]), xs)[0], np.array([t]), h)
        r_mass = mass_t + _d4(lambda s: rho_fn(t, s) * u_fn(t, s), xs, h) - f_rho

        mom_t = _d4(lambda tau: rho_fn(float(tau[0]), xs) * u_fn(float(tau[0]), xs), np.array([t]), h)
        mom_flux = _d4(lambda s: rho_fn(t, s) * u_fn(t, s) ** 2 + thermo(t, s)[2] - stress(t, s), xs, h)
        r_mom = mom_t + mom_flux - f_m

        energy_t = _d4(lambda tau: thermo(float(tau[0]), xs)[3], np.array([t]), h)
        energy_flux = _d4(lambda s: thermo(t, s)[3] * u_fn(t, s) + heat(t, s), xs, h)
        r_energy = energy_t + energy_flux - stress(t, xs) * u_x + p * u_x - f_energy

        worst = max(worst, float(np.max(np.abs(r_mass))), float(np.max(np.abs(r_mom))), float(np.max(np.abs(r_energy))))
    return worst


@dataclass
class ConvergenceReport:
    """
    L1 errors per field and resolution, least-squares observed orders and the energy residuals.

    energy_exact is set when every energy residual sits at roundoff; energy_order is NaN then.
    """

    kind: str
    resolutions: list[int]
    errors: dict[str, list[float]]
    orders: dict[str, float]
    energy_residuals: list[float]
    energy_order: float
    flagged: list[str] = field(default_factory=list)
    energy_exact: bool = False

    @property
    def monotone(self) -> bool:
        return not self.flagged


def observed_order(resolutions: list[int], errors: list[float]) -> float:
    """Least-squares slope of -log(error) against log(n); NaN when any error is below the floor."""
    e = np.asarray(errors, dtype=float)
    if np.any(e <= MMS_DEFAULTS["error_floor"]):
        return nan
    slope, _ = np.polyfit(np.log(np.asarray(resolutions, dtype=float)), np.log(e), 1)
    return float(-slope)


def _check_refinement(resolutions: list[int]) -> list[int]:
    ns = sorted(int(n) for n in resolutions)
    if len(ns) < 3 or any(b != 2 * a for a, b in zip(ns, ns[1:])):
        raise MisuseError(f"a study needs at least 3 resolutions, each refining by 2 (got {ns})")
    return ns


def _l1_errors(case: MmsCase, trajectory: Trajectory) -> dict[str, float]:
    state = trajectory.final
    exact = case.exact(state.t, trajectory.mesh.centers)
    h = trajectory.mesh.h
    return {name: h * float(np.sum(np.abs(getattr(state, name) - getattr(exact, name)))) for name in FIELDS}


def convergence_study(
    case: MmsCase,
    resolutions: list[int],
    t_end: float | None = None,
    cfl: float | None = None,
    max_workers: int | None = None,
) -> ConvergenceReport:
    """
    Run the case at every resolution (concurrently) and fit the observed orders.

    Non-monotone error sequences are reported in flagged, never silently fitted.
    """
    ns = _check_refinement(resolutions)

    def one(n: int) -> tuple[int, dict[str, float], float]:
        trajectory = run(case.scenario(n, t_end=t_end, cfl=cfl))
        report = audit(trajectory, case.boundary)
        return n, _l1_errors(case, trajectory), abs(report.energy_residual)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = {n: (errs, res) for n, errs, res in pool.map(one, ns)}

    errors = {name: [results[n][0][name] for n in ns] for name in FIELDS}
    energy_residuals = [results[n][1] for n in ns]
    # 丸め誤差の水準なら次数は定義しない
    energy_exact = all(r <= MMS_DEFAULTS["energy_roundoff"] for r in energy_residuals)
    floor = MMS_DEFAULTS["error_floor"]
    flagged: list[str] = []
    for name, seq in errors.items():
        if all(e <= floor for e in seq):
            continue
        if any(b >= a for a, b in zip(seq, seq[1:])):
            flagged.append(name)
            print(f"Non-monotone error sequence for {name} in {case.kind}: {[f'{e:.3e}' for e in seq]}")
    return ConvergenceReport(
        kind=case.kind,
        resolutions=ns,
        errors=errors,
        orders={name: observed_order(ns, seq) for name, seq in errors.items()},
        energy_residuals=energy_residuals,
        energy_order=nan if energy_exact else observed_order(ns, energy_residuals),
        flagged=flagged,
        energy_exact=energy_exact,
    )


@dataclass
class RegularizationReport:
    """L1 distance at t_end between (epsilon, delta) = (2^-k, 2^-k) runs and the unregularised run."""

    levels: list[int]
    distances: list[float]

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.distances, self.distances[1:]))


def _l1_distance(a: FieldState, b: FieldState, h: float) -> float:
    return h * sum(float(np.sum(np.abs(getattr(a, name) - getattr(b, name)))) for name in FIELDS)


def regularization_study(scenario: Scenario, levels: tuple[int, ...] = (2, 3, 4, 5), max_workers: int | None = None) -> RegularizationReport:
    levels = list(levels)
    base = scenario.with_config(epsilon=0.0, delta=0.0)
    runs = [base] + [scenario.with_config(epsilon=2.0**-k, delta=2.0**-k) for k in levels]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        finals = [trajectory.final for trajectory in pool.map(run, runs)]
    h = scenario.mesh.h
    distances = [_l1_distance(final, finals[0], h) for final in finals[1:]]
    report = RegularizationReport(levels=levels, distances=distances)
    if not report.monotone:
        print(f"Non-monotone regularization distances: {[f'{d:.3e}' for d in distances]}")
    return report


@dataclass
class WeakStrongResult:
    n_cells: int
    trace: RelEnergyTrace
    fit: GronwallFit


def weak_strong_study(
    scenario: Scenario, resolutions: list[int], factor: int = 4, max_workers: int | None = None
) -> list[WeakStrongResult]:
    """
    Relative energy between n-cell runs and factor*n-cell reference runs with identical data.

    Raises:
        MisuseError: inadmissible inflow data (the uniqueness hypotheses fail)
    """
    verdict = admissibility_check(scenario.eos, scenario.boundary)
    if not verdict.passed:
        raise MisuseError(f"inflow data are not admissible (margin {verdict.margin:.6g}); refusing the weak-strong experiment")
    if factor < 1:
        raise MisuseError(f"factor must be a positive integer (got {factor})")
    ns = sorted(int(n) for n in resolutions)
    meshes = sorted(set(ns) | {n * factor for n in ns})
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        runs = dict(zip(meshes, pool.map(lambda n: run(scenario.with_resolution(n)), meshes)))
    results = []
    for n in ns:
        trace, fit = weak_strong_trace(runs[n], runs[n * factor], scenario.eos)
        results.append(WeakStrongResult(n_cells=n, trace=trace, fit=fit))
    return results
