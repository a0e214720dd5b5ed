from dataclasses import dataclass, field, replace
from typing import Any, Callable, NamedTuple

import numpy as np

from nsf_falcon.boundary import (
    BoundaryFace,
    BoundarySpec,
    FaceLabel,
    boundary_velocity,
    boundary_velocity_gradient,
    face_velocity,
)
from nsf_falcon.errors import RunAborted, ShapeError, StepRejected
from nsf_falcon.settings import AUDIT_DEFAULTS, SOLVER_DEFAULTS
from nsf_falcon.thermo import (
    EosSpec,
    TransportSpec,
    internal_energy_density,
    internal_energy_density_theta,
    pressure,
    sound_speed,
    specific_entropy,
    temperature_from_internal_energy,
    transport_coefficients,
)


# (t, cell centers) -> (f_rho, f_m, f_E)
SourceHook = Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]

# 台帳（時間積分された境界・体積積分）の項目
MASS_TERMS: tuple[str, ...] = ("mass_in", "mass_out", "mass_source")
ENERGY_LHS_TERMS: tuple[str, ...] = ("energy_in_F", "energy_out_int", "energy_out_delta", "energy_in_delta")
ENERGY_RHS_TERMS: tuple[str, ...] = (
    "work_pressure",
    "work_kinetic",
    "work_viscous",
    "work_gravity",
    "reg_sources",
    "reg_inflow",
    "eps_correction",
    "mms_energy",
)
ENTROPY_LHS_TERMS: tuple[str, ...] = ("entropy_out",)
ENTROPY_RHS_TERMS: tuple[str, ...] = ("dissipation", "eps_delta_entropy", "eps_entropy_grad", "entropy_in", "mms_entropy")
APRIORI_TERMS: tuple[str, ...] = (
    "apriori_dissipation",
    "apriori_in",
    "apriori_out_e",
    "apriori_out_s",
    "int_theta_m3",
    "int_theta_5",
    "out_delta_pot",
    "in_delta_sq",
    "eps_delta_grad",
)
LEDGER_TERMS: tuple[str, ...] = (
    MASS_TERMS + ENERGY_LHS_TERMS + ENERGY_RHS_TERMS + ENTROPY_LHS_TERMS + ENTROPY_RHS_TERMS + APRIORI_TERMS
)


@dataclass(frozen=True)
class Mesh1D:
    """Uniform cell-centred mesh of [x_left, x_right]."""

    x_left: float
    x_right: float
    n_cells: int

    def __post_init__(self):
        if not self.n_cells >= 1:
            raise ShapeError(f"n_cells must be positive (got {self.n_cells})")
        if not self.x_right > self.x_left:
            raise ShapeError(f"x_right must exceed x_left (got {self.x_left}, {self.x_right})")

    @property
    def h(self) -> float:
        return (self.x_right - self.x_left) / self.n_cells

    @property
    def measure(self) -> float:
        return self.x_right - self.x_left

    @property
    def centers(self) -> np.ndarray:
        return self.x_left + (np.arange(self.n_cells) + 0.5) * self.h

    @property
    def faces(self) -> np.ndarray:
        return self.x_left + np.arange(self.n_cells + 1) * self.h


@dataclass(frozen=True)
class SolverConfig:
    """Regularisation levels, time stepping and safeguards. Unset values come from defaults.yml."""

    epsilon: float = SOLVER_DEFAULTS["epsilon"]
    delta: float = SOLVER_DEFAULTS["delta"]
    Gamma: float = SOLVER_DEFAULTS["Gamma"]
    d: int = SOLVER_DEFAULTS["d"]
    cfl: float = SOLVER_DEFAULTS["cfl"]
    t_end: float = 1.0
    g: float = SOLVER_DEFAULTS["gravity"]
    rho_floor: float = SOLVER_DEFAULTS["rho_floor"]
    theta_floor: float = SOLVER_DEFAULTS["theta_floor"]
    max_rejections: int = SOLVER_DEFAULTS["max_rejections"]
    theta_bar: float = AUDIT_DEFAULTS["theta_bar"]

    def __post_init__(self):
        if self.epsilon < 0.0 or self.delta < 0.0:
            raise ValueError(f"epsilon and delta must be nonnegative (got {self.epsilon}, {self.delta})")
        if not self.Gamma > 2.0:
            raise ValueError(f"Gamma must exceed 2 (got {self.Gamma})")
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3 (got {self.d})")
        if not 0.0 < self.cfl < 1.0:
            raise ValueError(f"cfl must lie in (0, 1) (got {self.cfl})")
        if self.t_end < 0.0:
            raise ValueError(f"t_end must be nonnegative (got {self.t_end})")
        if not (self.rho_floor > 0.0 and self.theta_floor > 0.0):
            raise ValueError("rho_floor and theta_floor must be positive")
        if not self.theta_bar > 0.0:
            raise ValueError(f"theta_bar must be positive (got {self.theta_bar})")

    @property
    def deviatoric_factor(self) -> float:
        return 2.0 * (1.0 - 1.0 / self.d)


@dataclass(frozen=True)
class FieldState:
    """Per-cell density, velocity and temperature at time t."""

    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        shapes = {np.shape(self.rho), np.shape(self.u), np.shape(self.theta)}
        if len(shapes) != 1 or np.ndim(self.rho) != 1:
            raise ShapeError(f"rho, u and theta must be 1D arrays of one length (got {sorted(shapes)})")

    @property
    def n_cells(self) -> int:
        return int(np.size(self.rho))

    @property
    def momentum(self) -> np.ndarray:
        return self.rho * self.u


class FaceFluxes(NamedTuple):
    """x-direction face fluxes, one entry per face (n_cells + 1)."""

    mass: np.ndarray
    mass_diffusive: np.ndarray
    momentum: np.ndarray
    energy: np.ndarray
    heat: np.ndarray
    entropy: np.ndarray


class RateBundle(NamedTuple):
    drho: np.ndarray
    dm: np.ndarray
    denergy: np.ndarray
    fluxes: FaceFluxes
    pressure_work: np.ndarray
    ledger: dict[str, float]


@dataclass(frozen=True)
class StepOutcome:
    state: FieldState
    dt: float
    rejections: int
    ledger: dict[str, float]


@dataclass
class Trajectory:
    """States at output times plus the cumulative ledger and step count at each of them."""

    mesh: Mesh1D
    eos: EosSpec
    transport: TransportSpec
    config: SolverConfig
    boundary: BoundarySpec
    times: list[float] = field(default_factory=list)
    states: list[FieldState] = field(default_factory=list)
    ledgers: list[dict[str, float]] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    floor_hits: int = 0

    def record(self, state: FieldState, ledger: dict[str, float], steps: int) -> None:
        self.times.append(state.t)
        self.states.append(state)
        self.ledgers.append(dict(ledger))
        self.steps.append(steps)

    @property
    def final(self) -> FieldState:
        return self.states[-1]

    def index_of(self, t: float) -> int:
        for i, ti in enumerate(self.times):
            if abs(ti - t) <= 1e-12 * max(1.0, abs(t)):
                return i
        raise KeyError(f"t={t} is not an output time of this trajectory")


def viscous_stress(ts: TransportSpec, cfg: SolverConfig, theta: np.ndarray, du_dx: np.ndarray) -> np.ndarray:
    """1D Newton stress (mu + delta theta) 2(1 - 1/d) u_x + eta u_x."""
    mu, eta, _ = transport_coefficients(ts, theta)
    shear = mu + cfg.delta * np.asarray(theta) if cfg.delta > 0.0 else mu
    return (shear * cfg.deviatoric_factor + eta) * du_dx


def heat_flux(ts: TransportSpec, cfg: SolverConfig, theta: np.ndarray, dtheta_dx: np.ndarray) -> np.ndarray:
    """Regularised Fourier flux -(kappa + delta(theta^Gamma + 1/theta)) theta_x."""
    _, _, kappa = transport_coefficients(ts, theta)
    if cfg.delta > 0.0:
        theta = np.asarray(theta)
        kappa = kappa + cfg.delta * (theta**cfg.Gamma + 1.0 / theta)
    return -kappa * dtheta_dx


class FiniteVolumeSolver:
    """
    First-order upwind finite volumes for the (epsilon, delta)-regularised system with
    SSP-RK2 time stepping. Conserved per cell: rho, m = rho u, rho e_delta.

    Args:
        mesh (Mesh1D): uniform mesh
        eos (EosSpec): constitutive closure
        transport (TransportSpec): transport closures
        config (SolverConfig): regularisation and time stepping
        boundary (BoundarySpec): face data, one face per domain end
        source (SourceHook | None): volume sources, used by manufactured solutions
    """

    def __init__(
        self,
        mesh: Mesh1D,
        eos: EosSpec,
        transport: TransportSpec,
        config: SolverConfig,
        boundary: BoundarySpec,
        source: SourceHook | None = None,
    ):
        self.mesh = mesh
        self.eos = eos
        self.transport = transport
        self.cfg = config
        self.boundary = boundary
        self.source = source
        self._centers = mesh.centers
        self._ub_cells = boundary_velocity(boundary, self._centers)
        self._dub = boundary_velocity_gradient(boundary)

    def _sides(self) -> list[tuple[BoundaryFace, int, int]]:
        # (面, 面番号, 隣接セル番号)
        n = self.mesh.n_cells
        return [(self.boundary.left, 0, 0), (self.boundary.right, n, n - 1)]

    def _check(self, state: FieldState) -> None:
        if state.n_cells != self.mesh.n_cells:
            raise ShapeError(f"state has {state.n_cells} cells, mesh has {self.mesh.n_cells}")

    def _ghosts(self, state: FieldState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays of length n + 2 with one ghost cell at each end."""
        rho = np.concatenate(([state.rho[0]], state.rho, [state.rho[-1]]))
        u = np.concatenate(([state.u[0]], state.u, [state.u[-1]]))
        theta = np.concatenate(([state.theta[0]], state.theta, [state.theta[-1]]))
        for face, face_idx, cell in self._sides():
            g = 0 if face_idx == 0 else -1
            # 速度は面で u_b となるよう鏡映
            u[g] = 2.0 * face_velocity(face) - state.u[cell]
            if face.label is FaceLabel.IN:
                rho[g] = face.rho_b
        return rho, u, theta

    def face_velocities(self, state: FieldState) -> np.ndarray:
        a = np.empty(self.mesh.n_cells + 1)
        a[1:-1] = 0.5 * (state.u[:-1] + state.u[1:])
        a[0] = face_velocity(self.boundary.left)
        a[-1] = face_velocity(self.boundary.right)
        return a

    def _energy_density(self, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.asarray(internal_energy_density(self.eos, rho, theta)) + self.cfg.delta * rho * theta

    def convective_fluxes(self, state: FieldState) -> FaceFluxes:
        """Upwind convective fluxes; heat and diffusive mass fluxes are left at zero."""
        return self._fluxes(state)[0]

    def _fluxes(self, state: FieldState) -> tuple[FaceFluxes, dict[str, np.ndarray]]:
        self._check(state)
        cfg = self.cfg
        h = self.mesh.h
        R, U, T = self._ghosts(state)
        W = self._energy_density(R, T)
        S = R * np.asarray(specific_entropy(self.eos, R, T))
        if cfg.delta > 0.0:
            S = S + cfg.delta * R * np.log(T)
        a = self.face_velocities(state)

        def upwind(q: np.ndarray) -> np.ndarray:
            return np.where(a > 0.0, q[:-1], q[1:])

        mass = a * upwind(R)
        momentum = a * upwind(R * U)
        energy = a * upwind(W)
        entropy = a * upwind(S)
        mass_diffusive = np.zeros_like(a)
        if cfg.epsilon > 0.0:
            mass_diffusive[1:-1] = -cfg.epsilon * (R[2:-1] - R[1:-2]) / h
            for face, face_idx, cell in self._sides():
                if face.label is FaceLabel.IN:
                    # Robin 条件: 外向き拡散流束 = (rho_b - rho)[u_b·n]^-
                    mass[face_idx] = a[face_idx] * state.rho[cell]
                    mass_diffusive[face_idx] = face.normal * (face.rho_b - state.rho[cell]) * face.u_b_dot_n
        fluxes = FaceFluxes(
            mass=mass,
            mass_diffusive=mass_diffusive,
            momentum=momentum,
            energy=energy,
            heat=np.zeros_like(a),
            entropy=entropy,
        )
        return fluxes, {"R": R, "U": U, "T": T, "W": W, "S": S, "a": a}

    def rates(self, state: FieldState) -> RateBundle:
        """Semi-discrete right-hand sides and the instantaneous ledger rates."""
        cfg = self.cfg
        eos = self.eos
        h = self.mesh.h
        delta, eps, Gamma = cfg.delta, cfg.epsilon, cfg.Gamma
        conv, ext = self._fluxes(state)
        R, U, T, W, S, a = ext["R"], ext["U"], ext["T"], ext["W"], ext["S"], ext["a"]
        rho, u, theta = state.rho, state.u, state.theta

        P = np.asarray(pressure(eos, R, T))
        P_delta = P + delta * (R**Gamma + R**2) if delta > 0.0 else P
        theta_f = 0.5 * (T[:-1] + T[1:])
        sigma_f = viscous_stress(self.transport, cfg, theta_f, (U[1:] - U[:-1]) / h)
        heat = heat_flux(self.transport, cfg, theta_f, (T[1:] - T[:-1]) / h)
        heat[0] = heat[-1] = 0.0
        for face, face_idx, _ in self._sides():
            if face.label is FaceLabel.IN:
                # 流入面の全エネルギー流束は F_ib
                heat[face_idx] = face.normal * face.F_ib - conv.energy[face_idx]

        mass_flux = conv.mass + conv.mass_diffusive
        momentum_flux = conv.momentum + 0.5 * (P_delta[:-1] + P_delta[1:]) - sigma_f
        energy_flux = conv.energy + heat

        div_u = (a[1:] - a[:-1]) / h
        sigma_c = viscous_stress(self.transport, cfg, theta, div_u)
        rho_x = (R[2:] - R[:-2]) / (2.0 * h)
        u_x = (U[2:] - U[:-2]) / (2.0 * h)
        p = P[1:-1]

        f_rho = f_m = f_E = np.zeros_like(rho)
        if self.source is not None:
            f_rho, f_m, f_E = (np.asarray(f, dtype=float) * np.ones_like(rho) for f in self.source(state.t, self._centers))

        pressure_work = -p * div_u
        energy_source = sigma_c * div_u + pressure_work
        if delta > 0.0:
            energy_source = energy_source + delta / theta**2
            if eps > 0.0:
                energy_source = energy_source + eps * delta * (Gamma * rho ** (Gamma - 2.0) + 2.0) * rho_x**2
        if eps > 0.0:
            energy_source = energy_source - eps * theta**5

        drho = -(mass_flux[1:] - mass_flux[:-1]) / h + f_rho
        dm = -(momentum_flux[1:] - momentum_flux[:-1]) / h + rho * cfg.g + f_m
        if eps > 0.0:
            dm = dm - eps * rho_x * u_x
        denergy = -(energy_flux[1:] - energy_flux[:-1]) / h + energy_source + f_E

        fluxes = conv._replace(heat=heat)
        ledger = self._ledger_rates(state, fluxes, ext, P, sigma_c, div_u, rho_x, u_x, heat, (f_rho, f_m, f_E))
        return RateBundle(drho, dm, denergy, fluxes, pressure_work, ledger)

    def _ledger_rates(
        self,
        state: FieldState,
        fluxes: FaceFluxes,
        ext: dict[str, np.ndarray],
        P: np.ndarray,
        sigma_c: np.ndarray,
        div_u: np.ndarray,
        rho_x: np.ndarray,
        u_x: np.ndarray,
        heat: np.ndarray,
        sources: tuple[np.ndarray, np.ndarray, np.ndarray],
    ) -> dict[str, float]:
        cfg = self.cfg
        eos = self.eos
        h = self.mesh.h
        delta, eps, Gamma = cfg.delta, cfg.epsilon, cfg.Gamma
        rho, u, theta = state.rho, state.u, state.theta
        R, T, W, S = ext["R"], ext["T"], ext["W"], ext["S"]
        ub = self._ub_cells
        dub = self._dub
        f_rho, f_m, f_E = sources
        r = dict.fromkeys(LEDGER_TERMS, 0.0)

        for face, face_idx, cell in self._sides():
            label = face.label
            un = face.u_b_dot_n
            rc, tc = rho[cell], theta[cell]
            if label is FaceLabel.IN:
                rb = face.rho_b
                r["mass_in"] += face.normal * (fluxes.mass[face_idx] + fluxes.mass_diffusive[face_idx])
                r["energy_in_F"] += face.F_ib
                if delta > 0.0:
                    g1 = Gamma - 1.0
                    r["energy_in_delta"] += -delta * (rb**Gamma / g1 - Gamma / g1 * rc**g1 * (rb - rc) - rc**Gamma / g1) * un
                    r["energy_in_delta"] += -delta * (rc - rb) ** 2 * un
                    r["reg_inflow"] += -delta * rb**Gamma / g1 * un
                e_b = float(internal_energy_density(eos, rb, tc)) / rb
                s_b = float(specific_entropy(eos, rb, tc))
                r["entropy_in"] += delta * rb * (1.0 - np.log(tc)) * un - face.F_ib / tc + (e_b / tc - s_b) * rb * un
                r["apriori_in"] += 1.0 / tc + tc**3 * abs(un)
                r["in_delta_sq"] += (rc - rb) ** 2 * abs(un)
            elif label is FaceLabel.OUT:
                w_c = W[cell + 1]
                s_c = S[cell + 1]
                r["mass_out"] += face.normal * (fluxes.mass[face_idx] + fluxes.mass_diffusive[face_idx])
                r["energy_out_int"] += float(internal_energy_density(eos, rc, tc)) * un
                pot = rc**Gamma / (Gamma - 1.0) + rc**2
                if delta > 0.0:
                    r["energy_out_delta"] += (delta * rc * tc + delta * pot) * un
                r["entropy_out"] += s_c * un
                r["apriori_out_e"] += w_c * un
                r["apriori_out_s"] += s_c * un
                r["out_delta_pot"] += pot * abs(un)

        v = u - ub
        r["mass_source"] = h * float(np.sum(f_rho))
        r["work_pressure"] = -h * float(np.sum(rho * u**2 + P[1:-1] + (delta * (rho**Gamma + rho**2) if delta > 0.0 else 0.0))) * dub
        r["work_kinetic"] = h * float(np.sum(rho * u * ub)) * dub
        r["work_viscous"] = h * float(np.sum(sigma_c)) * dub
        r["work_gravity"] = h * float(np.sum(rho * cfg.g * v))
        reg = np.zeros_like(theta)
        if delta > 0.0:
            reg = reg + delta / theta**2
        if eps > 0.0:
            reg = reg - eps * theta**5
        r["reg_sources"] = h * float(np.sum(reg))
        if eps > 0.0:
            r["eps_correction"] = eps * h * float(np.sum(rho_x * (u_x - dub) * ub))
        pot_rate = delta * (Gamma / (Gamma - 1.0) * rho ** (Gamma - 1.0) + 2.0 * rho) if delta > 0.0 else 0.0
        r["mms_energy"] = h * float(np.sum(v * f_m + f_rho * (0.5 * v**2 - v * u) + f_E + pot_rate * f_rho))

        # エントロピー散逸: 粘性はセル、熱伝導は内部面で評価
        T_l, T_r = T[1:-2], T[2:-1]
        conduction = float(np.sum(-heat[1:-1] * (T_r - T_l) / (T_l * T_r)))
        viscous = h * float(np.sum(sigma_c * div_u / theta))
        r["apriori_dissipation"] = viscous + conduction
        r["dissipation"] = viscous + conduction + (h * float(np.sum(delta / theta**3)) if delta > 0.0 else 0.0)
        if eps > 0.0:
            if delta > 0.0:
                r["eps_delta_entropy"] = eps * delta * h * float(np.sum(((Gamma * rho ** (Gamma - 2.0) + 2.0) * rho_x**2 - theta**4) / theta))
            potential = (W / R) / T - S / R + P / (R * T)
            r["eps_entropy_grad"] = eps * h * float(np.sum(rho_x * (potential[2:] - potential[:-2]) / (2.0 * h)))
        e_delta = W[1:-1] / rho
        s_delta = S[1:-1] / rho
        r["mms_entropy"] = h * float(np.sum(f_E / theta + (s_delta - e_delta / theta - P[1:-1] / (rho * theta)) * f_rho))

        r["int_theta_m3"] = h * float(np.sum(theta**-3))
        r["int_theta_5"] = h * float(np.sum(theta**5))
        r["eps_delta_grad"] = h * float(np.sum((Gamma * rho ** (Gamma - 2.0) + 2.0) * rho_x**2 / theta))
        return r

    def _recover(self, rho: np.ndarray, m: np.ndarray, energy: np.ndarray, guess: np.ndarray, t: float) -> FieldState:
        cfg = self.cfg
        bad = ~(rho >= cfg.rho_floor)
        if np.any(bad):
            x = self._centers[np.argmax(bad)]
            raise StepRejected(f"density below rho_floor near x={x:.6g} (min {np.nanmin(rho):.3e})")
        theta = temperature_from_internal_energy(self.eos, rho, energy, cfg.delta, guess)
        bad = ~(theta >= cfg.theta_floor)
        if np.any(bad):
            x = self._centers[np.argmax(bad)]
            raise StepRejected(f"temperature inversion failed or below theta_floor near x={x:.6g}")
        return FieldState(rho=rho, u=m / rho, theta=theta, t=t)

    def continuity_step(self, state: FieldState, dt: float) -> np.ndarray:
        rho = state.rho + dt * self.rates(state).drho
        if np.any(~(rho >= self.cfg.rho_floor)):
            raise StepRejected("density below rho_floor")
        return rho

    def momentum_step(self, state: FieldState, dt: float) -> np.ndarray:
        return state.momentum + dt * self.rates(state).dm

    def internal_energy_step(self, state: FieldState, dt: float, rho_new: np.ndarray | None = None) -> np.ndarray:
        """Forward-Euler update of rho e_delta; theta recovered at rho_new (default: the current density)."""
        energy = self._energy_density(state.rho, state.theta) + dt * self.rates(state).denergy
        rho = state.rho if rho_new is None else rho_new
        theta = temperature_from_internal_energy(self.eos, rho, energy, self.cfg.delta, state.theta)
        if np.any(~(theta >= self.cfg.theta_floor)):
            raise StepRejected("temperature inversion failed or below theta_floor")
        return theta

    def stable_dt(self, state: FieldState) -> float:
        cfg = self.cfg
        h = self.mesh.h
        rho, u, theta = state.rho, state.u, state.theta
        c = np.asarray(sound_speed(self.eos, rho, theta, cfg.delta, cfg.Gamma))
        mu, eta, kappa = (np.asarray(x) for x in transport_coefficients(self.transport, theta))
        nu = ((mu + cfg.delta * theta) * cfg.deviatoric_factor + eta) / rho
        heat_capacity = np.asarray(internal_energy_density_theta(self.eos, rho, theta)) + cfg.delta * rho
        chi = (kappa + cfg.delta * (theta**cfg.Gamma + 1.0 / theta)) / heat_capacity
        diffusivity = max(float(np.max(nu)), float(np.max(chi)), cfg.epsilon)
        dt = float(np.min(h / (np.abs(u) + c)))
        if diffusivity > 0.0:
            dt = min(dt, h**2 / (2.0 * diffusivity))
        return cfg.cfl * dt

    def _advance(self, state: FieldState, dt: float) -> tuple[FieldState, dict[str, float]]:
        r0 = self.rates(state)
        rho0, m0, e0 = state.rho, state.momentum, self._energy_density(state.rho, state.theta)
        stage = self._recover(rho0 + dt * r0.drho, m0 + dt * r0.dm, e0 + dt * r0.denergy, state.theta, state.t + dt)
        r1 = self.rates(stage)
        e1 = self._energy_density(stage.rho, stage.theta)
        new = self._recover(
            0.5 * (rho0 + stage.rho + dt * r1.drho),
            0.5 * (m0 + stage.momentum + dt * r1.dm),
            0.5 * (e0 + e1 + dt * r1.denergy),
            stage.theta,
            state.t + dt,
        )
        ledger = {k: 0.5 * dt * (r0.ledger[k] + r1.ledger[k]) for k in LEDGER_TERMS}
        return new, ledger

    def step(self, state: FieldState, dt: float) -> StepOutcome:
        """One SSP-RK2 step; rejected trials halve dt, too many in a row abort the run."""
        rejections = 0
        while True:
            try:
                with np.errstate(all="ignore"):
                    new, ledger = self._advance(state, dt)
                return StepOutcome(state=new, dt=dt, rejections=rejections, ledger=ledger)
            except StepRejected as e:
                rejections += 1
                if rejections >= self.cfg.max_rejections:
                    raise RunAborted(
                        f"{rejections} consecutive rejected steps at t={state.t:.6g}: {e}",
                        state_dump={"t": state.t, "dt": dt, "rho": state.rho.tolist(), "u": state.u.tolist(), "theta": state.theta.tolist()},
                    ) from e
                dt *= 0.5
                print(f"Step rejected at t={state.t:.6g}: {e}; retrying with dt={dt:.3e}")

    def temperature_subproblem_step(self, frozen: FieldState, theta: np.ndarray, dt: float) -> np.ndarray:
        """SSP-RK2 step of the internal energy equation alone, rho and u frozen."""
        rho = frozen.rho
        state = replace(frozen, theta=np.asarray(theta, dtype=float))
        e0 = self._energy_density(rho, state.theta)
        with np.errstate(all="ignore"):
            e1 = e0 + dt * self.rates(state).denergy
            theta1 = temperature_from_internal_energy(self.eos, rho, e1, self.cfg.delta, state.theta)
            if np.any(~(theta1 >= self.cfg.theta_floor)):
                raise StepRejected("temperature subproblem left the admissible range")
            stage = replace(state, theta=theta1, t=state.t + dt)
            e2 = 0.5 * (e0 + e1 + dt * self.rates(stage).denergy)
            theta2 = temperature_from_internal_energy(self.eos, rho, e2, self.cfg.delta, theta1)
        if np.any(~(theta2 >= self.cfg.theta_floor)):
            raise StepRejected("temperature subproblem left the admissible range")
        return theta2

    def run(self, initial: FieldState, t_end: float | None = None, output_times: list[float] | None = None) -> Trajectory:
        """
        Integrate to t_end, landing exactly on every output time.

        Raises:
            RunAborted: with the partial trajectory attached
        """
        t_end = self.cfg.t_end if t_end is None else t_end
        outputs = sorted({float(t) for t in (output_times or []) if 0.0 < t < t_end} | ({t_end} if t_end > 0.0 else set()))
        trajectory = Trajectory(self.mesh, self.eos, self.transport, self.cfg, self.boundary)
        cumulative = dict.fromkeys(LEDGER_TERMS, 0.0)
        steps = 0
        state = initial
        trajectory.record(state, cumulative, steps)
        for t_out in outputs:
            while t_out - state.t > 1e-12 * max(1.0, t_out):
                dt = min(self.stable_dt(state), t_out - state.t)
                try:
                    outcome = self.step(state, dt)
                except RunAborted as e:
                    e.trajectory = trajectory
                    raise
                trajectory.floor_hits += outcome.rejections
                state = outcome.state
                steps += 1
                for k, v in outcome.ledger.items():
                    cumulative[k] += v
            state = replace(state, t=t_out)
            trajectory.record(state, cumulative, steps)
        if trajectory.floor_hits:
            print(f"Floor hits during run: {trajectory.floor_hits}")
        return trajectory


def run(scenario: Any) -> Trajectory:
    """Run a validated scenario (mesh, eos, transport, config, boundary, initial state, outputs)."""
    solver = FiniteVolumeSolver(
        scenario.mesh,
        scenario.eos,
        scenario.transport,
        scenario.config,
        scenario.boundary,
        source=getattr(scenario, "source", None),
    )
    return solver.run(scenario.initial_state(), scenario.config.t_end, list(scenario.output_times))
