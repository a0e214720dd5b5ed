from dataclasses import dataclass
from functools import cached_property
from math import exp, inf, isfinite, log
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq, newton

from nsf_falcon.errors import BracketError, DomainError, EosError, NsfError, OutOfDomainError
from nsf_falcon.pressure_shapes import IconicPressure, PressureShape, TabulatedPressure
from nsf_falcon.settings import EOS_CHECK_DEFAULTS, EXTENSION_DEFAULTS, INVERSION_DEFAULTS
from nsf_falcon.verdicts import Verdict


ArrayLike = float | np.ndarray

SHAPES: tuple[str, ...] = ("iconic", "table")


@dataclass(frozen=True)
class EosSpec:
    """
    Constitutive closure p = theta^{5/2} P(Z) + (a/3) theta^4, Z = rho / theta^{3/2}.

    The entropy profile is normalised to entropy_const at Z = 1, or to zero at
    Z -> infinity when third_law is set (only shapes with a finite limit qualify).

    Args:
        p_inf (float): asymptote of P(Z)/Z^{5/3}
        a (float): radiation constant
        entropy_const (float): value of the entropy profile at Z = 1
        third_law (bool): normalise the entropy profile to vanish at infinity
        shape (str): "iconic" or "table"
        table_z (tuple[float, ...]): knots, table shape only
        table_p (tuple[float, ...]): values, table shape only
    """

    p_inf: float = 1.0
    a: float = 1.0
    entropy_const: float = 0.0
    third_law: bool = False
    shape: str = "iconic"
    table_z: tuple[float, ...] = ()
    table_p: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.p_inf > 0.0:
            raise EosError(f"ws6: p_inf must be positive (got {self.p_inf})")
        if not self.a >= 0.0:
            raise EosError(f"radiation constant a must be nonnegative (got {self.a})")
        if self.shape not in SHAPES:
            raise EosError(f"unknown pressure shape '{self.shape}' (expected one of {SHAPES})")
        # 表形式はここで検証される
        shape = self.pressure_shape
        if self.third_law and shape.entropy_at_infinity() is None:
            raise EosError(f"dod4: the {self.shape} entropy profile is unbounded at infinity; third_law is unattainable")

    @cached_property
    def pressure_shape(self) -> PressureShape:
        if self.shape == "iconic":
            return IconicPressure(self.p_inf)
        return TabulatedPressure(list(self.table_z), list(self.table_p), self.p_inf)

    @cached_property
    def entropy_offset(self) -> float:
        shape = self.pressure_shape
        if self.third_law:
            return -float(shape.entropy_at_infinity())
        return self.entropy_const - float(shape.entropy_primitive(1.0))

    @property
    def entropy_floor(self) -> float:
        """Limit of the entropy profile at Z -> infinity (-inf without the third law)."""
        return 0.0 if self.third_law else -inf


def _power_closure(coef: float, exponent: float) -> Callable:
    def closure(theta):
        return coef * (1.0 + theta**exponent)

    return closure


@dataclass(frozen=True)
class TransportSpec:
    """
    Transport closures mu(theta), eta(theta), kappa(theta) with their envelopes.

    When a closure is not supplied it defaults to the power law at the upper envelope,
    e.g. mu(theta) = mu_over (1 + theta^lambda_exp), kappa(theta) = kappa_over (1 + theta^3).
    Closures use arithmetic only, so they accept numpy arrays and sympy symbols alike.
    """

    lambda_exp: float = 0.5
    mu_under: float = 1.0
    mu_over: float = 1.0
    eta_over: float = 0.0
    kappa_under: float = 1.0
    kappa_over: float = 1.0
    mu_fn: Callable | None = None
    eta_fn: Callable | None = None
    kappa_fn: Callable | None = None

    def __post_init__(self):
        if not 0.4 < self.lambda_exp <= 1.0:
            raise EosError(f"ws8: lambda_exp must lie in (2/5, 1] (got {self.lambda_exp})")
        if not 0.0 < self.mu_under <= self.mu_over:
            raise EosError(f"ws8: need 0 < mu_under <= mu_over (got {self.mu_under}, {self.mu_over})")
        if not self.eta_over >= 0.0:
            raise EosError(f"ws9: eta_over must be nonnegative (got {self.eta_over})")
        if not 0.0 < self.kappa_under <= self.kappa_over:
            raise EosError(f"ws10: need 0 < kappa_under <= kappa_over (got {self.kappa_under}, {self.kappa_over})")
        if self.mu_fn is None:
            object.__setattr__(self, "mu_fn", _power_closure(self.mu_over, self.lambda_exp))
        if self.eta_fn is None:
            object.__setattr__(self, "eta_fn", _power_closure(self.eta_over, self.lambda_exp))
        if self.kappa_fn is None:
            object.__setattr__(self, "kappa_fn", _power_closure(self.kappa_over, 3.0))

    @classmethod
    def power_law(cls, lambda_exp: float = 0.5, mu: float = 1.0, eta: float = 0.0, kappa: float = 1.0) -> "TransportSpec":
        return cls(lambda_exp=lambda_exp, mu_under=mu, mu_over=mu, eta_over=eta, kappa_under=kappa, kappa_over=kappa)


@dataclass(frozen=True)
class ThermoState:
    """Standard variables; u is a scalar (1D) or a tuple of d components."""

    rho: float
    u: float | tuple[float, ...]
    theta: float

    def __post_init__(self):
        if not self.rho >= 0.0:
            raise DomainError(f"density must be nonnegative (got {self.rho})")
        if not self.theta > 0.0:
            raise DomainError(f"temperature must be positive (got {self.theta})")


@dataclass(frozen=True)
class ConservativeState:
    """Conservative-entropy variables (rho, m = rho u, S = rho s)."""

    rho: float
    m: float | tuple[float, ...]
    S: float


class ThermoPartials(NamedTuple):
    p: ArrayLike
    p_rho: ArrayLike
    p_theta: ArrayLike
    e: ArrayLike
    e_rho: ArrayLike
    e_theta: ArrayLike
    s: ArrayLike
    s_rho: ArrayLike
    s_theta: ArrayLike


def _out(x: np.ndarray) -> ArrayLike:
    return float(x) if np.ndim(x) == 0 else x


def _require_theta(theta: np.ndarray) -> None:
    if not np.all(theta > 0.0):
        raise DomainError(f"temperature must be positive (got {np.min(theta)})")


def _require_rho(rho: np.ndarray, strict: bool) -> None:
    ok = np.all(rho > 0.0) if strict else np.all(rho >= 0.0)
    if not ok:
        bound = "positive" if strict else "nonnegative"
        raise DomainError(f"density must be {bound} (got {np.min(rho)})")


def vector_norm_sq(u: float | tuple[float, ...] | np.ndarray) -> float:
    return float(np.sum(np.atleast_1d(np.asarray(u, dtype=float)) ** 2))


def entropy_shape(eos: EosSpec, z: ArrayLike) -> ArrayLike:
    """Normalised entropy profile S(Z)."""
    return _out(eos.pressure_shape.entropy_primitive(z) + eos.entropy_offset)


def entropy_shape_derivative(eos: EosSpec, z: ArrayLike) -> ArrayLike:
    """S'(Z) = -(3/2)((5/3)P - P'Z)/Z^2."""
    return _out(eos.pressure_shape.entropy_derivative(z))


def internal_energy_density(eos: EosSpec, rho: ArrayLike, theta: ArrayLike) -> ArrayLike:
    """rho e = (3/2) theta^{5/2} P(Z) + a theta^4, defined for rho >= 0."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z = rho / theta**1.5
    return _out(1.5 * theta**2.5 * eos.pressure_shape.value(z) + eos.a * theta**4)


def internal_energy_density_theta(eos: EosSpec, rho: ArrayLike, theta: ArrayLike) -> ArrayLike:
    """d(rho e)/d(theta) at fixed rho."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z = rho / theta**1.5
    return _out(2.25 * theta**1.5 * eos.pressure_shape.gap(z) + 4.0 * eos.a * theta**3)


def pressure(eos: EosSpec, rho: ArrayLike, theta: ArrayLike) -> ArrayLike:
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _require_theta(theta)
    _require_rho(rho, strict=False)
    z = rho / theta**1.5
    return _out(theta**2.5 * eos.pressure_shape.value(z) + eos.a / 3.0 * theta**4)


def specific_internal_energy(eos: EosSpec, rho: ArrayLike, theta: ArrayLike) -> ArrayLike:
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _require_theta(theta)
    _require_rho(rho, strict=True)
    return _out(np.asarray(internal_energy_density(eos, rho, theta)) / rho)


def specific_entropy(eos: EosSpec, rho: ArrayLike, theta: ArrayLike) -> ArrayLike:
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _require_theta(theta)
    _require_rho(rho, strict=True)
    z = rho / theta**1.5
    return _out(np.asarray(entropy_shape(eos, z)) + 4.0 * eos.a / 3.0 * theta**3 / rho)


def thermo_partials(eos: EosSpec, rho: ArrayLike, theta: ArrayLike) -> ThermoPartials:
    """Pressure, energy, entropy and their first partials, all in closed form."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _require_theta(theta)
    _require_rho(rho, strict=True)
    shape = eos.pressure_shape
    a = eos.a
    z = rho / theta**1.5
    big_p = shape.value(z)
    dp = shape.derivative(z)
    gap = shape.gap(z)
    return ThermoPartials(
        p=_out(theta**2.5 * big_p + a / 3.0 * theta**4),
        p_rho=_out(theta * dp),
        p_theta=_out(theta**1.5 * (2.5 * big_p - 1.5 * z * dp) + 4.0 * a / 3.0 * theta**3),
        e=_out((1.5 * theta**2.5 * big_p + a * theta**4) / rho),
        e_rho=_out((1.5 * theta**2.5 * (z * dp - big_p) - a * theta**4) / rho**2),
        e_theta=_out((2.25 * theta**1.5 * gap + 4.0 * a * theta**3) / rho),
        s=_out(shape.entropy_primitive(z) + eos.entropy_offset + 4.0 * a / 3.0 * theta**3 / rho),
        s_rho=_out(shape.entropy_derivative(z) / theta**1.5 - 4.0 * a / 3.0 * theta**3 / rho**2),
        s_theta=_out(2.25 * gap / (z * theta) + 4.0 * a * theta**2 / rho),
    )


def gibbs_residual(eos: EosSpec, rho: ArrayLike, theta: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    """
    Residual pair of the Gibbs relation.

    Every shape uses the closed-form partials (the tabulated entropy profile is
    exact on each cubic piece).

    Returns:
        tuple: (theta ds/dtheta - de/dtheta, theta ds/drho - de/drho + p/rho^2)
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = thermo_partials(eos, rho, theta)
    return (
        _out(theta * d.s_theta - d.e_theta),
        _out(theta * d.s_rho - d.e_rho + d.p / rho**2),
    )


def stability_margins(eos: EosSpec, rho: ArrayLike, theta: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    """(dp/drho at fixed theta, de/dtheta at fixed rho)."""
    d = thermo_partials(eos, rho, theta)
    return d.p_rho, d.e_theta


def sound_speed(eos: EosSpec, rho: ArrayLike, theta: ArrayLike, delta: float = 0.0, Gamma: float = 4.0) -> ArrayLike:
    """
    Full sound speed c^2 = dp/drho + p_theta^2 theta / (rho^2 e_theta), with the
    delta-regularised pressure rho-derivative and the delta term of e_delta.
    """
    rho = np.asarray(rho, dtype=float)
    d = thermo_partials(eos, rho, theta)
    p_rho = np.asarray(d.p_rho) + delta * (Gamma * rho ** (Gamma - 1.0) + 2.0 * rho)
    e_theta = np.asarray(d.e_theta) + delta
    c2 = p_rho + np.asarray(d.p_theta) ** 2 * theta / (rho**2 * e_theta)
    return _out(np.sqrt(c2))


def to_conservative(eos: EosSpec, s: ThermoState) -> ConservativeState:
    if not s.rho > 0.0:
        raise DomainError(f"to_conservative needs positive density (got {s.rho})")
    if isinstance(s.u, tuple):
        m = tuple(s.rho * ui for ui in s.u)
    else:
        m = s.rho * s.u
    return ConservativeState(rho=s.rho, m=m, S=s.rho * float(specific_entropy(eos, s.rho, s.theta)))


def _entropy_bracket(eos: EosSpec, rho: float, S: float) -> tuple[float, float]:
    lo = INVERSION_DEFAULTS["theta_min"]
    hi = INVERSION_DEFAULTS["theta_max"]
    f_lo = rho * float(specific_entropy(eos, rho, lo)) - S
    f_hi = rho * float(specific_entropy(eos, rho, hi)) - S
    if not (f_lo <= 0.0 <= f_hi):
        raise BracketError(f"cannot bracket the temperature of (rho={rho:.6g}, S={S:.6g})", lo, hi)
    return lo, hi


def temperature_from_entropy_scalar(eos: EosSpec, rho: float, S: float) -> float:
    """Bracketed root of rho s(rho, theta) = S, then a Newton polish."""
    lo, hi = _entropy_bracket(eos, rho, S)

    def in_log(tau: float) -> float:
        return rho * float(specific_entropy(eos, rho, exp(tau))) - S

    try:
        theta = exp(brentq(in_log, log(lo), log(hi), xtol=1e-15, rtol=1e-15, maxiter=500))
    except (RuntimeError, ValueError) as e:
        raise BracketError(f"temperature bisection failed: {e}", lo, hi) from e

    try:
        polished = newton(
            lambda t: rho * float(specific_entropy(eos, rho, t)) - S,
            theta,
            fprime=lambda t: rho * float(thermo_partials(eos, rho, t).s_theta),
            tol=INVERSION_DEFAULTS["newton_tol"],
            maxiter=INVERSION_DEFAULTS["newton_maxiter"],
        )
        if isfinite(polished) and polished > 0.0 and abs(polished - theta) <= 1e-6 * theta:
            theta = float(polished)
    except (RuntimeError, NsfError):
        pass
    return theta


def from_conservative(eos: EosSpec, c: ConservativeState) -> ThermoState:
    if not c.rho > 0.0:
        raise OutOfDomainError(f"(rho, S) = ({c.rho}, {c.S}) is not in the interior: vacuum")
    if not c.S > c.rho * eos.entropy_floor:
        raise OutOfDomainError(f"(rho, S) = ({c.rho}, {c.S}) is not in the interior: S <= 0 under the third law")
    theta = temperature_from_entropy_scalar(eos, c.rho, c.S)
    if isinstance(c.m, tuple):
        u = tuple(mi / c.rho for mi in c.m)
    else:
        u = c.m / c.rho
    return ThermoState(rho=c.rho, u=u, theta=theta)


def _solve_increasing(
    func: Callable[[np.ndarray, np.ndarray], np.ndarray],
    dfunc: Callable[[np.ndarray, np.ndarray], np.ndarray],
    rho: np.ndarray,
    target: np.ndarray,
    guess: np.ndarray,
) -> np.ndarray:
    """
    Cellwise root of func(theta, rho) = target for func increasing in theta.

    Vectorised Newton from the guess; cells where it fails fall back to a bracketed
    root in log(theta). Cells without a root in the bracket come back as NaN.
    """
    lo = INVERSION_DEFAULTS["theta_min"]
    hi = INVERSION_DEFAULTS["theta_max"]
    theta = np.full(target.shape, np.nan)
    ok = np.zeros(target.shape, dtype=bool)

    if target.size > 1:
        x0 = np.clip(guess, lo, hi)
        root, converged, _ = newton(
            lambda t: func(np.maximum(t, lo), rho) - target,
            x0,
            fprime=lambda t: dfunc(np.maximum(t, lo), rho),
            tol=INVERSION_DEFAULTS["newton_tol"],
            maxiter=INVERSION_DEFAULTS["newton_maxiter"],
            full_output=True,
            disp=False,
        )
        root = np.asarray(root, dtype=float)
        with np.errstate(invalid="ignore"):
            resid = func(np.clip(root, lo, hi), rho) - target
            ok = (
                np.asarray(converged, dtype=bool)
                & np.isfinite(root)
                & (root >= lo)
                & (root <= hi)
                & (np.abs(resid) <= 1e-9 * np.maximum(1.0, np.abs(target)))
            )
        theta = np.where(ok, root, np.nan)

    for i in np.flatnonzero(~ok):
        r = rho[i : i + 1]
        w = float(target[i])

        def g(tau: float) -> float:
            return float(func(np.exp(np.array([tau])), r)[0]) - w

        a_, b_ = log(lo), log(hi)
        if not (g(a_) <= 0.0 <= g(b_)):
            continue
        theta[i] = exp(brentq(g, a_, b_, xtol=1e-14, rtol=1e-15, maxiter=500))
    return theta


def temperature_from_internal_energy(
    eos: EosSpec, rho: np.ndarray, energy: np.ndarray, delta: float = 0.0, guess: np.ndarray | None = None
) -> np.ndarray:
    """Solve rho e_delta(rho, theta) = energy cellwise, e_delta = e + delta theta. NaN where impossible."""
    rho = np.asarray(rho, dtype=float).ravel()
    energy = np.asarray(energy, dtype=float).ravel()
    guess = np.ones_like(energy) if guess is None else np.asarray(guess, dtype=float).ravel()

    def func(t: np.ndarray, r: np.ndarray) -> np.ndarray:
        return np.asarray(internal_energy_density(eos, r, t)) + delta * r * t

    def dfunc(t: np.ndarray, r: np.ndarray) -> np.ndarray:
        return np.asarray(internal_energy_density_theta(eos, r, t)) + delta * r

    return _solve_increasing(func, dfunc, rho, energy, guess)


def temperature_from_entropy(eos: EosSpec, rho: np.ndarray, S: np.ndarray, guess: np.ndarray | None = None) -> np.ndarray:
    """Vectorised inverse of S = rho s(rho, theta) for rho > 0. NaN where impossible."""
    rho = np.asarray(rho, dtype=float).ravel()
    S = np.asarray(S, dtype=float).ravel()
    guess = np.ones_like(S) if guess is None else np.asarray(guess, dtype=float).ravel()
    shape = eos.pressure_shape

    def func(t: np.ndarray, r: np.ndarray) -> np.ndarray:
        z = r / t**1.5
        return r * (shape.entropy_primitive(z) + eos.entropy_offset) + 4.0 * eos.a / 3.0 * t**3

    def dfunc(t: np.ndarray, r: np.ndarray) -> np.ndarray:
        # rho ds/dtheta = (rho/theta) de/dtheta
        z = r / t**1.5
        return 2.25 * np.sqrt(t) * shape.gap(z) + 4.0 * eos.a * t**2

    return _solve_increasing(func, dfunc, rho, S, guess)


def _vacuum_energy(eos: EosSpec, S: float) -> float:
    # rho = 0 での拡張値
    if S < 0.0:
        return inf if eos.third_law else 0.0
    if S == 0.0:
        return 0.0
    if eos.a == 0.0:
        return inf
    return eos.a * (3.0 * S / (4.0 * eos.a)) ** (4.0 / 3.0)


def _interior_energy(eos: EosSpec, rho: float, S: float) -> float:
    theta = temperature_from_entropy_scalar(eos, rho, S)
    return float(internal_energy_density(eos, rho, theta))


def _ray_liminf(eos: EosSpec, rho: float, S: float) -> float:
    """liminf of E_int at a boundary point, approached from the anchor (1, S(1, 1))."""
    rho_a = 1.0
    s_a = float(specific_entropy(eos, 1.0, 1.0))
    rtol = EXTENSION_DEFAULTS["rtol"]
    overflow = EXTENSION_DEFAULTS["overflow"]
    previous: float | None = None
    for k in range(1, EXTENSION_DEFAULTS["max_halvings"] + 1):
        w = 0.5**k
        try:
            value = _interior_energy(eos, rho + w * (rho_a - rho), S + w * (s_a - S))
        except BracketError:
            break
        if value > overflow:
            return inf
        if previous is not None and abs(value - previous) <= rtol * max(abs(value), 1e-300):
            return value
        previous = value
    return inf if previous is None else previous


def extended_internal_energy(eos: EosSpec, rho: float, S: float) -> float:
    """
    Convex lower semicontinuous extension of E_int(rho, S) = rho e to the whole plane.

    Interior points invert the temperature; rho = 0 uses the closed vacuum limits;
    points with S = 0 under the third law take the liminf along a ray; everything
    outside the closure of the admissible set is +inf.
    """
    rho = float(rho)
    S = float(S)
    if rho < 0.0:
        return inf
    if rho == 0.0:
        return _vacuum_energy(eos, S)
    if S < rho * eos.entropy_floor:
        return inf
    if S == rho * eos.entropy_floor:
        return _ray_liminf(eos, rho, S)
    try:
        return _interior_energy(eos, rho, S)
    except BracketError:
        return _ray_liminf(eos, rho, S)


def total_energy(eos: EosSpec, c: ConservativeState) -> float:
    """E(rho, m, S) = |m|^2/(2 rho) + E_int(rho, S)."""
    m_sq = vector_norm_sq(c.m)
    if c.rho <= 0.0:
        return inf if m_sq > 0.0 or c.rho < 0.0 else extended_internal_energy(eos, 0.0, c.S)
    return 0.5 * m_sq / c.rho + extended_internal_energy(eos, c.rho, c.S)


def energy_gradient(eos: EosSpec, c: ConservativeState) -> tuple[float, np.ndarray, float]:
    """Supporting-plane coefficients (e - theta s + p/rho - |u|^2/2, u, theta) at an interior point."""
    state = from_conservative(eos, c)
    d = thermo_partials(eos, state.rho, state.theta)
    u = np.atleast_1d(np.asarray(state.u, dtype=float))
    d_rho = d.e - state.theta * d.s + d.p / state.rho - 0.5 * float(np.sum(u**2))
    return float(d_rho), u, state.theta


def transport_coefficients(ts: TransportSpec, theta: ArrayLike) -> tuple[ArrayLike, ArrayLike, ArrayLike]:
    theta = np.asarray(theta, dtype=float)
    _require_theta(theta)
    ones = np.ones_like(theta)
    return (
        _out(ts.mu_fn(theta) * ones),
        _out(ts.eta_fn(theta) * ones),
        _out(ts.kappa_fn(theta) * ones),
    )


def _transport_verdicts(ts: TransportSpec) -> list[Verdict]:
    theta = np.geomspace(1e-3, 1e3, 2001)
    mu, eta, kappa = (np.asarray(c) for c in transport_coefficients(ts, theta))
    lam = 1.0 + theta**ts.lambda_exp
    cube = 1.0 + theta**3
    slack = 1e-12
    dmu = np.gradient(mu, theta)
    return [
        Verdict(
            "ws8 shear viscosity envelope",
            bool(np.all(mu >= ts.mu_under * lam * (1 - slack)) and np.all(mu <= ts.mu_over * lam * (1 + slack)) and np.all(np.isfinite(dmu))),
            f"max|mu'| on grid = {np.max(np.abs(dmu)):.4g}",
        ),
        Verdict("ws9 bulk viscosity envelope", bool(np.all(eta >= 0.0) and np.all(eta <= ts.eta_over * lam * (1 + slack) + slack))),
        Verdict(
            "ws10 conductivity envelope",
            bool(np.all(kappa >= ts.kappa_under * cube * (1 - slack)) and np.all(kappa <= ts.kappa_over * cube * (1 + slack))),
        ),
    ]


def check_eos(eos: EosSpec, ts: TransportSpec | None = None, seed: int = 0, samples: int | None = None) -> list[Verdict]:
    """
    Check the constitutive hypotheses on grids and random samples.

    Args:
        eos (EosSpec): closure under test
        ts (TransportSpec | None): transport closures, envelopes checked when given
        seed (int): sampling seed
        samples (int | None): number of random states, defaults to the configured count

    Returns:
        list[Verdict]: one verdict per invariant
    """
    n = samples or EOS_CHECK_DEFAULTS["samples"]
    rng = np.random.default_rng(seed)
    shape = eos.pressure_shape
    z_lo, z_hi = EOS_CHECK_DEFAULTS["log_grid"]
    z = np.geomspace(z_lo, z_hi, 2001)
    verdicts: list[Verdict] = []

    p0 = float(shape.value(0.0))
    dp = shape.derivative(np.concatenate([[0.0], z]))
    verdicts.append(Verdict("ws7 P(0) = 0, P' > 0", p0 == 0.0 and bool(np.all(dp > 0.0)), f"P(0)={p0:.3g}, min P'={np.min(dp):.4g}"))

    gap_ratio = shape.gap(z) / z
    verdicts.append(
        Verdict(
            "ws5 0 < ((5/3)P - P'Z)/Z < c",
            bool(np.all(gap_ratio > 0.0) and np.all(np.isfinite(gap_ratio))),
            f"c >= {np.max(gap_ratio):.4g}",
        )
    )

    ratio = shape.value(z) / z ** (5.0 / 3.0)
    monotone = bool(np.all(np.diff(ratio) <= 1e-12 * np.abs(ratio[1:])))
    verdicts.append(
        Verdict(
            "ws6 P/Z^(5/3) nonincreasing towards p_inf",
            monotone and bool(ratio[-1] >= eos.p_inf * (1.0 - 1e-12)),
            f"P/Z^(5/3) at Z={z_hi:g}: {ratio[-1]:.6g}, p_inf={eos.p_inf:g}",
        )
    )

    zz = np.geomspace(0.01, 100.0, 401)
    h = 1e-8 * zz
    fd = (np.asarray(entropy_shape(eos, zz + h)) - entropy_shape(eos, zz - h)) / (2.0 * h)
    exact = np.asarray(entropy_shape_derivative(eos, zz))
    err = np.max(np.abs(fd - exact) / np.abs(exact))
    verdicts.append(Verdict("ws4 entropy profile ODE", bool(err <= 1e-6), f"max rel err {err:.2e}"))

    rho = rng.uniform(0.1, 10.0, n)
    theta = rng.uniform(0.1, 10.0, n)
    p_rho, e_theta = stability_margins(eos, rho, theta)
    verdicts.append(
        Verdict("i5a thermodynamic stability", bool(np.all(p_rho > 0.0) and np.all(e_theta > 0.0)), f"min margins {np.min(p_rho):.4g}, {np.min(e_theta):.4g}")
    )

    verdicts.append(_gibbs_verdict(eos, rho, theta))
    verdicts.extend(_transform_verdicts(eos, rng))
    verdicts.append(_convexity_verdict(eos, rng, n))

    if eos.third_law:
        tail = np.asarray(entropy_shape(eos, np.geomspace(1e6, 1e12, 7)))
        ok = bool(np.all(tail > 0.0) and np.all(np.diff(tail) < 0.0))
        verdicts.append(Verdict("dod4 third law S(Z) -> 0", ok, f"S(1e12) = {tail[-1]:.3e}"))
    else:
        verdicts.append(Verdict("entropy normalisation S(1) = entropy_const", True, "raw entropy values depend on entropy_const"))

    verdicts.append(Verdict("radiation constant a > 0", eos.a > 0.0, f"a = {eos.a:g}"))
    if ts is not None:
        verdicts.extend(_transport_verdicts(ts))
    return verdicts


def _gibbs_verdict(eos: EosSpec, rho: np.ndarray, theta: np.ndarray) -> Verdict:
    r1, r2 = (np.asarray(r) for r in gibbs_residual(eos, rho, theta))
    d = thermo_partials(eos, rho, theta)
    scale1 = np.abs(theta * d.s_theta) + np.abs(d.e_theta)
    scale2 = np.abs(theta * d.s_rho) + np.abs(d.e_rho) + np.abs(d.p / rho**2)
    worst = max(float(np.max(np.abs(r1) / scale1)), float(np.max(np.abs(r2) / scale2)))
    rtol = EOS_CHECK_DEFAULTS["gibbs_rtol"]
    return Verdict("i2 Gibbs relation", worst <= rtol, f"max rel residual {worst:.2e} (tol {rtol:g})")


def _transform_verdicts(eos: EosSpec, rng: np.random.Generator, count: int = 100) -> list[Verdict]:
    rho = rng.uniform(0.1, 10.0, count)
    theta = rng.uniform(0.1, 10.0, count)
    S = rho * np.asarray(specific_entropy(eos, rho, theta))
    energy = np.asarray(internal_energy_density(eos, rho, theta))
    h = 1e-4 * np.maximum(1.0, np.abs(S))

    # 固定 rho での dE/dS = theta
    e_plus = internal_energy_density(eos, rho, temperature_from_entropy(eos, rho, S + h, theta))
    e_minus = internal_energy_density(eos, rho, temperature_from_entropy(eos, rho, S - h, theta))
    dE_dS = (np.asarray(e_plus) - e_minus) / (2.0 * h)
    err_theta = float(np.max(np.abs(dE_dS - theta) / theta))

    # 固定 S での dE/drho = e - theta s + p/rho
    hr = 1e-4 * rho
    e_plus = internal_energy_density(eos, rho + hr, temperature_from_entropy(eos, rho + hr, S, theta))
    e_minus = internal_energy_density(eos, rho - hr, temperature_from_entropy(eos, rho - hr, S, theta))
    dE_drho = (np.asarray(e_plus) - e_minus) / (2.0 * hr)
    d = thermo_partials(eos, rho, theta)
    expected = energy / rho - theta * np.asarray(d.s) + np.asarray(d.p) / rho
    err_rho = float(np.max(np.abs(dE_drho - expected) / np.maximum(1.0, np.abs(expected))))
    return [
        Verdict("i5b temperature identity dE/dS = theta", err_theta <= 1e-6, f"max rel err {err_theta:.2e}"),
        Verdict("i5b pressure identity dE/drho = e - theta s + p/rho", err_rho <= 1e-6, f"max rel err {err_rho:.2e}"),
    ]


def _convexity_verdict(eos: EosSpec, rng: np.random.Generator, count: int) -> Verdict:
    tol = EOS_CHECK_DEFAULTS["convexity_tol"]
    rho = rng.uniform(0.1, 10.0, (2, count))
    theta = rng.uniform(0.1, 10.0, (2, count))
    S = rho * np.asarray(specific_entropy(eos, rho, theta))
    energy = np.asarray(internal_energy_density(eos, rho, theta))
    worst = -inf
    for lam in (0.25, 0.5, 0.75):
        rho_mid = lam * rho[0] + (1.0 - lam) * rho[1]
        s_mid = lam * S[0] + (1.0 - lam) * S[1]
        theta_mid = temperature_from_entropy(eos, rho_mid, s_mid, lam * theta[0] + (1.0 - lam) * theta[1])
        e_mid = np.asarray(internal_energy_density(eos, rho_mid, theta_mid))
        chord = lam * energy[0] + (1.0 - lam) * energy[1]
        excess = (e_mid - chord) / (1.0 + np.abs(energy[0]) + np.abs(energy[1]))
        worst = max(worst, float(np.nanmax(excess)))
        if np.any(np.isnan(theta_mid)):
            return Verdict("Conv convexity of E_int", False, "temperature inversion failed at a midpoint")
    return Verdict("Conv convexity of E_int", worst <= tol, f"max normalised excess {worst:.2e}")
