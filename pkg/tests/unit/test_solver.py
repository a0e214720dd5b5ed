import os
import unittest
from types import SimpleNamespace
from unittest.mock import patch

import numpy as np

from nsf_falcon.boundary import BoundaryFace, BoundarySpec
from nsf_falcon.errors import RunAborted, ShapeError, StepRejected
from nsf_falcon.scenario_dao import load_scenario
from nsf_falcon.solver import (
    LEDGER_TERMS,
    FieldState,
    FiniteVolumeSolver,
    Mesh1D,
    SolverConfig,
    heat_flux,
    run,
    viscous_stress,
)
from nsf_falcon.thermo import EosSpec, TransportSpec, internal_energy_density, pressure, sound_speed


ICONIC = EosSpec(p_inf=1.0, a=1.0)
WEAK = TransportSpec.power_law(0.5, mu=0.01, eta=0.0, kappa=0.01)
INVISCID = TransportSpec(mu_fn=lambda t: 0.0, eta_fn=lambda t: 0.0, kappa_fn=lambda t: 0.0)

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "..", "scenarios")


def _uniform(n: int, rho: float = 1.0, u: float = 0.0, theta: float = 1.0) -> FieldState:
    return FieldState(rho=np.full(n, rho), u=np.full(n, u), theta=np.full(n, theta))


def _solver(n: int = 16, transport: TransportSpec = WEAK, config: SolverConfig | None = None, boundary=None, mesh=None):
    mesh = mesh or Mesh1D(0.0, 1.0, n)
    boundary = boundary or BoundarySpec.closed_box(mesh.x_left, mesh.x_right)
    return FiniteVolumeSolver(mesh, ICONIC, transport, config or SolverConfig(), boundary)


class TestConstitutiveFluxes(unittest.TestCase):
    """
    応力と熱流束をテストします。
    テスト内容:
        - test_viscous_stress:
            μ=1, η=0, d=3 で 4/3、d=2, η=1 で 2、u_x=0 で 0。
        - test_heat_flux:
            κ=1+ϑ³, ϑ=1, ϑ_x=1 で -2、δ=1, Γ=3 で -4。
        - test_config_validation:
            負の ε、Γ <= 2、範囲外の cfl は ValueError。
    """

    def test_viscous_stress(self):
        ts = TransportSpec(mu_fn=lambda t: 1.0, eta_fn=lambda t: 0.0)
        self.assertAlmostEqual(float(viscous_stress(ts, SolverConfig(d=3), np.array(1.0), 1.0)), 4.0 / 3.0)
        self.assertEqual(float(viscous_stress(ts, SolverConfig(d=3), np.array(1.0), 0.0)), 0.0)
        ts = TransportSpec(mu_fn=lambda t: 1.0, eta_fn=lambda t: 1.0)
        self.assertAlmostEqual(float(viscous_stress(ts, SolverConfig(d=2), np.array(1.0), 1.0)), 2.0)

    def test_heat_flux(self):
        ts = TransportSpec()
        self.assertAlmostEqual(float(heat_flux(ts, SolverConfig(), np.array(1.0), 1.0)), -2.0)
        self.assertEqual(float(heat_flux(ts, SolverConfig(), np.array(1.0), 0.0)), 0.0)
        self.assertAlmostEqual(float(heat_flux(ts, SolverConfig(delta=1.0, Gamma=3.0), np.array(1.0), 1.0)), -4.0)

    def test_config_validation(self):
        for bad in ({"epsilon": -1.0}, {"Gamma": 2.0}, {"cfl": 1.5}, {"d": 4}, {"t_end": -1.0}):
            with self.assertRaises(ValueError):
                SolverConfig(**bad)
        self.assertEqual(SolverConfig().Gamma, 4.0)
        self.assertEqual(SolverConfig().theta_bar, 1.0)

    def test_mesh_validation(self):
        with self.assertRaises(ShapeError):
            Mesh1D(0.0, 1.0, 0)
        with self.assertRaises(ShapeError):
            Mesh1D(1.0, 0.0, 4)
        with self.assertRaises(ShapeError):
            FieldState(rho=np.ones(3), u=np.ones(2), theta=np.ones(3))
        mesh = Mesh1D(0.0, 2.0, 4)
        np.testing.assert_allclose(mesh.centers, [0.25, 0.75, 1.25, 1.75])
        self.assertEqual(mesh.measure, 2.0)


class TestRates(unittest.TestCase):
    """
    半離散右辺と流束をテストします。
    テスト内容:
        - test_rest_state_in_closed_box:
            一様静止状態・壁のみでは全ての右辺が 0 (流束は面ごとに等しく差分が消える)。
        - test_upwind_interior:
            内部面で u > 0 なら左セルの状態を使う。
        - test_inflow_mass_flux:
            u_b·n=-1, ρ_b=2 の流入面で外向き質量流束 2·u_b·n = -2。
        - test_robin_flux_vanishes:
            ε > 0 で ρ = ρ_b なら Robin 流束は 0。
        - test_delta_source:
            δ>0、一様な ϑ=1, ρ, u≡0 では ρe_δ が δ の速さで増える。
        - test_delta_pressure_constant_density:
            δ>0 でも一様密度なら運動量の右辺は 0。
        - test_uniform_compression_work:
            u = -x、圧力一様なら -p div u = +p。
        - test_shape_mismatch:
            セル数の違う状態は ShapeError。
    """

    def test_rest_state_in_closed_box(self):
        solver = _solver()
        r = solver.rates(_uniform(16))
        self.assertEqual(np.max(np.abs(r.drho)), 0.0)
        self.assertLess(np.max(np.abs(r.dm)), 1e-13)
        self.assertLess(np.max(np.abs(r.denergy)), 1e-13)
        np.testing.assert_allclose(r.fluxes.mass, 0.0)

    def test_upwind_interior(self):
        solver = _solver(n=4, boundary=BoundarySpec(faces=(BoundaryFace(0.0, -1.0, 1.0, 1.0, -4.0), BoundaryFace(1.0, 1.0, 1.0))))
        state = FieldState(rho=np.array([1.0, 2.0, 3.0, 4.0]), u=np.ones(4), theta=np.ones(4))
        fluxes = solver.convective_fluxes(state)
        np.testing.assert_allclose(fluxes.mass[1:-1], [1.0, 2.0, 3.0])
        self.assertAlmostEqual(fluxes.mass[-1], 4.0)

    def test_inflow_mass_flux(self):
        boundary = BoundarySpec(faces=(BoundaryFace(0.0, -1.0, 1.0, 2.0, -10.0), BoundaryFace(1.0, 1.0, 1.0)))
        solver = _solver(n=8, boundary=boundary)
        r = solver.rates(_uniform(8, u=1.0))
        self.assertAlmostEqual(r.fluxes.mass[0], 2.0)
        self.assertAlmostEqual(r.ledger["mass_in"], -2.0)
        self.assertAlmostEqual(r.ledger["mass_out"], 1.0)
        self.assertAlmostEqual(r.ledger["energy_in_F"], -10.0)

    def test_robin_flux_vanishes(self):
        boundary = BoundarySpec(faces=(BoundaryFace(0.0, -1.0, 1.0, 1.5, -10.0), BoundaryFace(1.0, 1.0, 1.0)))
        solver = _solver(n=8, boundary=boundary, config=SolverConfig(epsilon=0.01))
        fluxes = solver.rates(_uniform(8, rho=1.5, u=1.0)).fluxes
        self.assertEqual(fluxes.mass_diffusive[0], 0.0)
        np.testing.assert_allclose(fluxes.mass_diffusive[1:-1], 0.0)
        fluxes = solver.rates(_uniform(8, rho=1.0, u=1.0)).fluxes
        # 外向き拡散流束 = n (ρ_b - ρ) u_b·n
        self.assertAlmostEqual(fluxes.mass_diffusive[0], -1.0 * 0.5 * -1.0)

    def test_delta_source(self):
        delta = 0.1
        solver = _solver(config=SolverConfig(delta=delta))
        r = solver.rates(_uniform(16, rho=2.0))
        np.testing.assert_allclose(r.denergy, delta, rtol=1e-12)
        dt = 1e-3
        state = _uniform(16, rho=2.0)
        theta = solver.internal_energy_step(state, dt)
        energy = np.asarray(internal_energy_density(ICONIC, 2.0, theta)) + delta * 2.0 * theta
        before = float(internal_energy_density(ICONIC, 2.0, 1.0)) + delta * 2.0
        np.testing.assert_allclose(energy - before, delta * dt, rtol=1e-6)

    def test_delta_pressure_constant_density(self):
        solver = _solver(config=SolverConfig(delta=0.1))
        r = solver.rates(_uniform(16, rho=3.0))
        self.assertLess(np.max(np.abs(r.dm)), 1e-12)
        np.testing.assert_allclose(solver.momentum_step(_uniform(16, rho=3.0), 1e-3), 0.0, atol=1e-15)

    def test_uniform_compression_work(self):
        mesh = Mesh1D(-1.0, 1.0, 20)
        boundary = BoundarySpec(faces=(BoundaryFace(-1.0, -1.0, 1.0, 1.0, -10.0), BoundaryFace(1.0, 1.0, -1.0, 1.0, -10.0)))
        solver = _solver(mesh=mesh, boundary=boundary)
        state = FieldState(rho=np.ones(20), u=-mesh.centers, theta=np.ones(20))
        r = solver.rates(state)
        np.testing.assert_allclose(r.pressure_work, pressure(ICONIC, 1.0, 1.0), rtol=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            _solver(n=8).rates(_uniform(4))


class TestTimeStepping(unittest.TestCase):
    """
    時間刻みとステップ列をテストします。
    テスト内容:
        - test_acoustic_limit:
            u≡0、輸送係数 0、ε=δ=0 で dt = cfl h / c。
        - test_parabolic_scaling:
            拡散支配で h を半分にすると dt は 1/4。
        - test_equilibrium_fixed_point:
            平衡静止状態は 1 ステップで 1e-13 以内に不変。
        - test_continuity_unchanged_in_box:
            壁に囲まれた一様密度は連続の式で不変。
        - test_rejection_then_abort:
            棄却が続くと dt を半分にして再試行し、上限で RunAborted (状態ダンプ付き)。
        - test_temperature_subproblem:
            一様温度は不変、ϑ_under <= ϑ_over の順序が保たれる。
        - test_comparison_principle:
            ランダムな順序付きの 100 組が 200 ステップ順序を保ち、ϑ は初期値の範囲 [0.5, 1.5] に留まる。
    """

    def test_acoustic_limit(self):
        solver = _solver(transport=INVISCID)
        c = sound_speed(ICONIC, 1.0, 1.0)
        self.assertAlmostEqual(solver.stable_dt(_uniform(16)), 0.4 * (1.0 / 16) / c, places=14)

    def test_parabolic_scaling(self):
        viscous = TransportSpec.power_law(0.5, mu=100.0, kappa=100.0)
        coarse = _solver(n=32, transport=viscous).stable_dt(_uniform(32))
        fine = _solver(n=64, transport=viscous).stable_dt(_uniform(64))
        self.assertAlmostEqual(fine / coarse, 0.25, places=12)

    def test_equilibrium_fixed_point(self):
        solver = _solver()
        state = _uniform(16)
        outcome = solver.step(state, solver.stable_dt(state))
        self.assertEqual(outcome.rejections, 0)
        for name in ("rho", "u", "theta"):
            self.assertLess(np.max(np.abs(getattr(outcome.state, name) - getattr(state, name))), 1e-13)
        self.assertEqual(set(outcome.ledger), set(LEDGER_TERMS))

    def test_continuity_unchanged_in_box(self):
        solver = _solver()
        np.testing.assert_array_equal(solver.continuity_step(_uniform(16, rho=1.7), 1e-2), np.full(16, 1.7))

    @patch("builtins.print")
    def test_rejection_then_abort(self, mock_print):
        solver = _solver(config=SolverConfig(max_rejections=3))
        with patch.object(solver, "_advance", side_effect=StepRejected("density below rho_floor")):
            with self.assertRaises(RunAborted) as ctx:
                solver.step(_uniform(16), 0.01)
        self.assertEqual(mock_print.call_count, 2)
        mock_print.assert_any_call("Step rejected at t=0: density below rho_floor; retrying with dt=5.000e-03")
        self.assertEqual(ctx.exception.state_dump["dt"], 0.0025)
        self.assertEqual(len(ctx.exception.state_dump["rho"]), 16)

    @patch("builtins.print")
    def test_run_attaches_partial_trajectory(self, mock_print):
        solver = _solver(config=SolverConfig(max_rejections=2, t_end=0.1))
        with patch.object(solver, "_advance", side_effect=StepRejected("temperature inversion failed")):
            with self.assertRaises(RunAborted) as ctx:
                solver.run(_uniform(16), output_times=[0.05])
        self.assertEqual(ctx.exception.trajectory.times, [0.0])

    def test_temperature_subproblem(self):
        solver = _solver()
        frozen = _uniform(16)
        dt = solver.stable_dt(frozen)
        np.testing.assert_allclose(solver.temperature_subproblem_step(frozen, np.ones(16), dt), 1.0, atol=1e-13)
        x = solver.mesh.centers
        under = 1.0 + 0.1 * np.cos(np.pi * x)
        over = under + 0.05
        for _ in range(20):
            under = solver.temperature_subproblem_step(frozen, under, dt)
            over = solver.temperature_subproblem_step(frozen, over, dt)
            self.assertTrue(np.all(under <= over))

    def test_comparison_principle(self):
        solver = _solver()
        frozen = _uniform(16)
        dt = min(solver.stable_dt(_uniform(16, theta=t)) for t in (0.5, 1.5))
        rng = np.random.default_rng(0)
        for _ in range(100):
            under = 0.5 + 0.5 * rng.random(16)
            over = np.minimum(under + 0.5 * rng.random(16), 1.5)
            for _ in range(200):
                under = solver.temperature_subproblem_step(frozen, under, dt)
                over = solver.temperature_subproblem_step(frozen, over, dt)
                self.assertTrue(np.all(under <= over + 1e-12))
            # 壁で閉じた熱伝導なので初期値の範囲に収まる
            self.assertGreaterEqual(under.min(), 0.5 - 1e-12)
            self.assertLessEqual(over.max(), 1.5 + 1e-12)


class TestRun(unittest.TestCase):
    """
    run をテストします。
    テスト内容:
        - test_zero_end_time:
            t_end=0 なら初期状態だけの軌道。
        - test_rest_equilibrium:
            静止平衡は t_end まで 1e-10 以内で不変、出力時刻に正確に止まる。
        - test_scenario_run:
            シナリオ相当のオブジェクトから run できること。
        - test_index_of:
            出力時刻でない時刻は KeyError。
        - test_per_step_mass_identity:
            同梱シナリオ (throughflow を含む) の各ステップで質量の増分が境界流束と一致。
    """

    def test_zero_end_time(self):
        trajectory = _solver().run(_uniform(16), t_end=0.0)
        self.assertEqual(trajectory.times, [0.0])
        self.assertEqual(trajectory.steps, [0])

    def test_rest_equilibrium(self):
        solver = _solver(config=SolverConfig(t_end=0.2))
        trajectory = solver.run(_uniform(16), output_times=[0.05, 0.1])
        self.assertEqual(trajectory.times, [0.0, 0.05, 0.1, 0.2])
        for name in ("rho", "u", "theta"):
            self.assertLess(np.max(np.abs(getattr(trajectory.final, name) - 1.0 * (name != "u"))), 1e-10)
        self.assertEqual(trajectory.floor_hits, 0)
        self.assertEqual(trajectory.ledgers[-1]["mass_in"], 0.0)

    def test_scenario_run(self):
        mesh = Mesh1D(0.0, 1.0, 8)
        scenario = SimpleNamespace(
            mesh=mesh,
            eos=ICONIC,
            transport=WEAK,
            config=SolverConfig(t_end=0.01),
            boundary=BoundarySpec.closed_box(0.0, 1.0),
            initial_state=lambda: _uniform(8),
            output_times=(0.0, 0.01),
        )
        trajectory = run(scenario)
        self.assertEqual(trajectory.times, [0.0, 0.01])

    def test_index_of(self):
        trajectory = _solver().run(_uniform(16), t_end=0.01)
        self.assertEqual(trajectory.index_of(0.01), 1)
        with self.assertRaises(KeyError):
            trajectory.index_of(0.005)

    def test_per_step_mass_identity(self):
        for name in ("closed_box", "heat_plateaus", "throughflow"):
            scenario = load_scenario(os.path.join(SCENARIOS, f"{name}.json")).with_resolution(32)
            solver = FiniteVolumeSolver(scenario.mesh, scenario.eos, scenario.transport, scenario.config, scenario.boundary)
            state = scenario.initial_state()
            h = scenario.mesh.h
            for _ in range(50):
                outcome = solver.step(state, solver.stable_dt(state))
                ledger = outcome.ledger
                change = h * (float(np.sum(outcome.state.rho)) - float(np.sum(state.rho)))
                residual = change + ledger["mass_in"] + ledger["mass_out"] - ledger["mass_source"]
                self.assertLess(abs(residual), 1e-11 * max(1.0, h * float(np.sum(state.rho))), name)
                state = outcome.state


if __name__ == "__main__":
    unittest.main()
