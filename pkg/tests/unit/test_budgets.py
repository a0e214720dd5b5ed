import json
import unittest
from dataclasses import replace

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from nsf_falcon.boundary import BoundarySpec
from nsf_falcon.budgets import (
    additivity_verdicts,
    audit,
    energy_budget,
    entropy_budget,
    gronwall_fit,
    mass_budget,
    weak_strong_trace,
    windowed_audits,
)
from nsf_falcon.errors import MisuseError
from nsf_falcon.solver import FieldState, FiniteVolumeSolver, Mesh1D, SolverConfig
from nsf_falcon.thermo import EosSpec, TransportSpec


ICONIC = EosSpec(p_inf=1.0, a=1.0)
WEAK = TransportSpec.power_law(0.5, mu=0.01, eta=0.0, kappa=0.01)


def _box_run(n: int = 32, rho=None, theta=None, t_end: float = 0.02, outputs=(0.01,), transport=WEAK, **config):
    mesh = Mesh1D(0.0, 1.0, n)
    x = mesh.centers
    state = FieldState(
        rho=np.ones(n) if rho is None else rho(x),
        u=np.zeros(n),
        theta=np.ones(n) if theta is None else theta(x),
    )
    solver = FiniteVolumeSolver(mesh, ICONIC, transport, SolverConfig(t_end=t_end, **config), BoundarySpec.closed_box(0.0, 1.0))
    return solver.run(state, output_times=list(outputs))


def _bump(x):
    return 1.0 + 0.2 * np.exp(-50.0 * (x - 0.5) ** 2)


def _plateau(x):
    return 1.0 + 0.2 * np.cos(np.pi * x)


class TestBudgets(unittest.TestCase):
    """
    質量・エネルギー・エントロピー収支をテストします。
    テスト内容:
        - test_closed_box_mass:
            壁のみの箱で質量残差は 1e-12 未満、w1 は PASS。
        - test_rest_equilibrium:
            静止平衡では残差・生成項とも 0 近傍。
        - test_heat_plateaus_produce_entropy:
            温度差がある場合はエントロピー生成が正、散逸も正。
        - test_window_must_hit_output_times:
            出力時刻でない窓端は MisuseError。
        - test_reversed_window:
            逆向きの窓は MisuseError。
        - test_windowed_mass_additivity:
            窓ごとの質量残差の和は全区間の残差に一致。
        - test_windowed_energy_entropy_additivity:
            エネルギー・エントロピーも窓ごとの和が全区間に一致し、加法性の判定は PASS。
        - test_additivity_detects_mismatch:
            窓の残差をずらすとエネルギーの加法性だけが FAIL。
        - test_regularised_entropy_production:
            epsilon = delta = 1e-3 でも各窓のエントロピー生成は -1e-8 以上。
    """

    @classmethod
    def setUpClass(cls):
        cls.bump = _box_run(rho=_bump)
        cls.rest = _box_run()
        cls.plateau = _box_run(theta=_plateau)

    def test_closed_box_mass(self):
        boundary = self.bump.boundary
        self.assertLess(abs(mass_budget(self.bump, boundary)), 1e-12)
        report = audit(self.bump)
        self.assertTrue(report.verdicts[0].passed)
        self.assertEqual(report.boundary_terms["mass_in"], 0.0)
        self.assertEqual(report.boundary_terms["mass_out"], 0.0)

    def test_rest_equilibrium(self):
        boundary = self.rest.boundary
        energy, terms = energy_budget(self.rest, boundary)
        production, _ = entropy_budget(self.rest, boundary)
        self.assertLess(abs(energy), 1e-10)
        self.assertLess(abs(production), 1e-10)
        self.assertLess(abs(terms["storage"]), 1e-10)
        self.assertTrue(audit(self.rest).passed)

    def test_heat_plateaus_produce_entropy(self):
        report = audit(self.plateau)
        self.assertGreater(report.entropy_production, 0.0)
        self.assertGreater(report.dissipation, 0.0)
        self.assertTrue(report.verdicts[2].passed)

    def test_window_must_hit_output_times(self):
        with self.assertRaises(MisuseError):
            audit(self.bump, window=(0.0, 0.005))

    def test_reversed_window(self):
        with self.assertRaises(MisuseError):
            audit(self.bump, window=(0.02, 0.01))

    def test_windowed_mass_additivity(self):
        reports = windowed_audits(self.bump)
        self.assertEqual([r.window for r in reports], [(0.0, 0.01), (0.01, 0.02)])
        total = mass_budget(self.bump, self.bump.boundary)
        self.assertAlmostEqual(sum(r.mass_residual for r in reports), total, places=12)
        self.assertEqual(sum(r.steps for r in reports), self.bump.steps[-1])

    def test_windowed_energy_entropy_additivity(self):
        reports = windowed_audits(self.plateau)
        energy, energy_terms = energy_budget(self.plateau, self.plateau.boundary)
        production, entropy_terms = entropy_budget(self.plateau, self.plateau.boundary)
        energy_scale = max([1.0] + [abs(v) for v in energy_terms.values()])
        entropy_scale = max([1.0] + [abs(v) for v in entropy_terms.values()])
        self.assertLess(abs(sum(r.energy_residual for r in reports) - energy), 1e-12 * energy_scale)
        self.assertLess(abs(sum(r.entropy_production for r in reports) - production), 1e-12 * entropy_scale)
        verdicts = additivity_verdicts(self.plateau, reports=reports)
        self.assertEqual([v.name for v in verdicts], ["mass window additivity", "energy window additivity", "entropy window additivity"])
        self.assertTrue(all(v.passed for v in verdicts))

    def test_additivity_detects_mismatch(self):
        reports = windowed_audits(self.plateau)
        reports[0] = replace(reports[0], energy_residual=reports[0].energy_residual + 1e-6)
        verdicts = {v.name: v.passed for v in additivity_verdicts(self.plateau, reports=reports)}
        self.assertFalse(verdicts["energy window additivity"])
        self.assertTrue(verdicts["mass window additivity"])
        self.assertTrue(verdicts["entropy window additivity"])

    def test_regularised_entropy_production(self):
        run = _box_run(rho=_bump, theta=_plateau, outputs=(0.005, 0.01, 0.015), epsilon=1e-3, delta=1e-3)
        reports = windowed_audits(run)
        self.assertEqual(len(reports), 4)
        for report in reports:
            self.assertGreaterEqual(report.entropy_production, -1e-8, report.window)


class TestBudgetReport(unittest.TestCase):
    """
    BudgetReport をテストします。
    テスト内容:
        - test_to_dict:
            窓はリスト、判定は name/passed/detail の辞書で JSON にできる。
        - test_apriori_keys:
            監視量がすべて含まれる。
    """

    def test_to_dict(self):
        report = audit(_box_run(n=16, rho=_bump, t_end=0.01, outputs=()))
        data = report.to_dict()
        self.assertEqual(data["window"], [0.0, 0.01])
        self.assertEqual(set(data["verdicts"][0]), {"name", "passed", "detail"})
        self.assertEqual(data["verdicts"][0]["name"], "w1 mass balance")
        json.dumps(data)

    def test_apriori_keys(self):
        report = audit(_box_run(n=16, t_end=0.01, outputs=()))
        self.assertEqual(
            set(report.apriori),
            {
                "sup_energy_entropy",
                "dissipation",
                "inflow",
                "outflow",
                "delta_theta_m3",
                "eps_theta_5",
                "delta_out_potential",
                "delta_in_square",
                "eps_delta_gradient",
            },
        )


class TestWeakStrong(unittest.TestCase):
    """
    粗い解と細かい解の相対エネルギーをテストします。
    テスト内容:
        - test_self_comparison:
            同じ軌道同士の相対エネルギーは 0。
        - test_refined_reference:
            2 倍細かい参照解との相対エネルギーは非負。
        - test_mesh_must_refine:
            セル数が割り切れない組は MisuseError。
        - test_transport_must_match:
            輸送係数が異なる組は MisuseError、同じ値の閉包は通る。
        - test_config_must_match:
            解像度以外の設定 (epsilon, delta, cfl) が異なる組は MisuseError。
        - test_initial_data_must_match:
            平均化した初期値が一致しない組は MisuseError。
    """

    def test_self_comparison(self):
        run = _box_run(n=16, rho=_bump, t_end=0.01, outputs=(0.005,))
        trace, fit = weak_strong_trace(run, run)
        self.assertEqual(trace.times, [0.0, 0.005, 0.01])
        self.assertLess(max(abs(v) for v in trace.integrals), 1e-14)

    def test_refined_reference(self):
        coarse = _box_run(n=16, rho=_bump, t_end=0.01, outputs=())
        fine = _box_run(n=32, rho=_bump, t_end=0.01, outputs=())
        trace, _ = weak_strong_trace(coarse, fine)
        self.assertGreaterEqual(min(trace.integrals), 0.0)

    def test_mesh_must_refine(self):
        coarse = _box_run(n=16, t_end=0.0, outputs=())
        fine = _box_run(n=24, t_end=0.0, outputs=())
        with self.assertRaises(MisuseError):
            weak_strong_trace(coarse, fine)

    def test_transport_must_match(self):
        coarse = _box_run(n=8, t_end=0.0, outputs=())
        fine = _box_run(n=32, t_end=0.0, outputs=(), transport=TransportSpec.power_law(0.5, mu=5.0, eta=0.0, kappa=5.0))
        with self.assertRaises(MisuseError):
            weak_strong_trace(coarse, fine)
        # 別々に作った同じ閉包は一致とみなす
        same = _box_run(n=32, t_end=0.0, outputs=(), transport=TransportSpec.power_law(0.5, mu=0.01, eta=0.0, kappa=0.01))
        weak_strong_trace(coarse, same)

    def test_config_must_match(self):
        coarse = _box_run(n=8, t_end=0.0, outputs=())
        fine = _box_run(n=32, t_end=0.0, outputs=(), epsilon=0.5, delta=0.5)
        with self.assertRaises(MisuseError):
            weak_strong_trace(coarse, fine)
        with self.assertRaises(MisuseError):
            weak_strong_trace(coarse, _box_run(n=32, t_end=0.0, outputs=(), cfl=0.2))

    def test_initial_data_must_match(self):
        coarse = _box_run(n=8, t_end=0.0, outputs=())
        fine = _box_run(n=32, rho=lambda x: 2.0 + 0.0 * x, t_end=0.0, outputs=())
        with self.assertRaises(MisuseError):
            weak_strong_trace(coarse, fine)


class TestGronwallFit(unittest.TestCase):
    """
    Gronwall 包絡線の当てはめをテストします。
    テスト内容:
        - test_zero_trace:
            E ≡ 0 なら eta=0, rate=0。
        - test_exponential_growth:
            E = e^t は包絡線の下にあり、終端値は e^{t_end} を大きく超えない。
        - test_envelope_dominates:
            任意の非負列で包絡線が全点を覆い、rate >= 0。
    """

    def test_zero_trace(self):
        fit = gronwall_fit([0.0, 0.1, 0.2], [0.0, 0.0, 0.0])
        self.assertEqual((fit.eta, fit.rate, fit.envelope_end), (0.0, 0.0, 0.0))

    def test_exponential_growth(self):
        times = list(np.linspace(0.0, 1.0, 11))
        values = [float(np.exp(t)) for t in times]
        fit = gronwall_fit(times, values)
        self.assertEqual(fit.e0, 1.0)
        for t, v in zip(times, values):
            self.assertGreaterEqual((fit.e0 + fit.eta) * np.exp(fit.rate * t), v * (1.0 - 1e-9))
        self.assertLessEqual(fit.envelope_end, np.e * (1.0 + 1e-6))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.one_of(st.just(0.0), st.floats(min_value=1e-6, max_value=1e3)), min_size=2, max_size=8))
    def test_envelope_dominates(self, values):
        times = [0.1 * i for i in range(len(values))]
        fit = gronwall_fit(times, values)
        self.assertGreaterEqual(fit.rate, 0.0)
        self.assertGreaterEqual(fit.eta, 0.0)
        for t, v in zip(times, values):
            self.assertGreaterEqual((fit.e0 + fit.eta) * np.exp(fit.rate * t), v * (1.0 - 1e-9))


if __name__ == "__main__":
    unittest.main()
