# tests/test_harness.py
from __future__ import annotations
import os
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from cosserat_observer.config import TensionTable, config_from_dict, load_config
from cosserat_observer.errors import ConfigurationError
from cosserat_observer.harness import (
    SummedTensions,
    SweepConfig,
    TensionSchedule,
    _combine,
    check_sweep_shape,
    default_holding_wrench,
    energy_audit,
    initial_estimate,
    lateral_preload,
    mu_sweep,
    perturbed_state,
    realtime_trend,
    run_scenario,
    run_sweep,
    scenario_from_config,
    sweep_from_config,
    synthesize_ground_truth,
)
from cosserat_observer.observers import SettleRule
from cosserat_observer.rodmodel import RodParameters

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"
SLOW = os.environ.get("COSSERAT_SLOW_TESTS") == "1"


class TensionScheduleTestCase(unittest.TestCase):
    def test_interpolates_and_holds(self):
        sched = TensionSchedule.from_table(TensionTable(times_s=[0.0, 1.0], tensions_n=[[0.0, 2.0], [4.0, 2.0]]))
        np.testing.assert_allclose(sched(0.25), [1.0, 2.0])
        np.testing.assert_allclose(sched(5.0), [4.0, 2.0])
        np.testing.assert_allclose(sched(-1.0), [0.0, 2.0])
        self.assertIsNone(TensionSchedule.from_table(None))

    def test_combined_schedules(self):
        a = TensionSchedule(times=np.array([0.0]), values=np.array([[1.0, 0.0]]))
        b = TensionSchedule(times=np.array([0.0]), values=np.array([[0.0, 3.0]]))
        self.assertIsNone(_combine(None, None))
        self.assertIs(_combine(a, None), a)
        both = _combine(a, b)
        self.assertIsInstance(both, SummedTensions)
        np.testing.assert_allclose(both(0.3), [1.0, 3.0])


class MuSweepTestCase(unittest.TestCase):
    def test_scalar_tip_sweep_brackets_absorbing_gain(self):
        grid = np.round(np.arange(1, 81) * 0.05, 10)
        table = mu_sweep(np.array([[1.0]]), np.array([[3.0]]), 1.0, grid, which="tip", reference="identity")
        self.assertEqual(list(table.columns), ["gamma_scale", "mu_max", "singular_bracket"])
        self.assertEqual(len(table), 80)
        flagged = table[table["singular_bracket"]]["gamma_scale"].tolist()
        self.assertEqual(flagged, [1.75])
        self.assertAlmostEqual(float(table.loc[table["gamma_scale"] == 1.0, "mu_max"].iloc[0]), 1.1405, places=4)

    def test_scalar_base_sweep_brackets_absorbing_gain(self):
        grid = np.round(np.arange(1, 81) * 0.05, 10)
        table = mu_sweep(np.array([[1.0]]), np.array([[3.0]]), 1.0, grid, which="base", reference="identity")
        flagged = table[table["singular_bracket"]]["gamma_scale"].tolist()
        self.assertEqual(flagged, [0.6])
        mu = table["mu_max"].to_numpy()
        below, above = mu[:11], mu[11:]
        self.assertTrue(np.all(np.diff(below) > 0))
        self.assertTrue(np.all(np.diff(above) < 0))
        self.assertLess(mu[0], 0.2)
        # rho0 = (sqrt(3) g - 1) / (sqrt(3) g + 1) mirrors the tip table at g = 1
        self.assertAlmostEqual(float(table.loc[table["gamma_scale"] == 1.0, "mu_max"].iloc[0]), 1.1405, places=4)
        at_root = mu_sweep(np.array([[1.0]]), np.array([[3.0]]), 1.0, [1.0 / np.sqrt(3.0)], which="base")
        self.assertGreater(float(at_root["mu_max"].iloc[0]), 20.0)

    def test_optimal_reference_peaks_at_one(self):
        grid = [0.5, 0.9, 1.1, 2.0]
        table = mu_sweep(10.0 * np.eye(6), 1e4 * np.eye(6), 0.6, grid, which="base", reference="optimal")
        mu = table["mu_max"].to_numpy()
        self.assertGreater(mu[1], mu[0])
        self.assertGreater(mu[2], mu[3])
        self.assertTrue(bool(table["singular_bracket"].iloc[2]))

    def test_bad_arguments(self):
        with self.assertRaises(ConfigurationError):
            mu_sweep(np.eye(6), np.eye(6), 1.0, [1.0], which="middle")
        with self.assertRaises(ConfigurationError):
            mu_sweep(np.eye(6), np.eye(6), 1.0, [1.0], reference="random")


class SweepShapeTestCase(unittest.TestCase):
    # --- helpers -------------------------------------------------------------

    def table(self, settle):
        rows = []
        for variant, values in settle.items():
            for gamma, s in zip([0.2, 0.5, 1.0, 2.0, 4.0], values):
                rows.append({"variant": variant, "gamma": gamma, "settle_time": s})
        return pd.DataFrame(rows)

    # --- tests ---------------------------------------------------------------

    def test_convex_table_passes(self):
        shape = check_sweep_shape(self.table({
            "base": [0.9, 0.4, 0.2, 0.3, 0.6],
            "tipD": [0.8, 0.5, 0.25, 0.35, 0.7],
            "combined": [0.7, 0.3, 0.19, 0.3, 0.5],
        }))
        self.assertTrue(shape.ok, shape.messages)

    def test_monotone_table_fails(self):
        shape = check_sweep_shape(self.table({"base": [0.9, 0.7, 0.5, 0.3, 0.1]}))
        self.assertFalse(shape.ok)
        self.assertEqual(len(shape.messages), 2)

    def test_unsettled_rows_count_as_slowest(self):
        shape = check_sweep_shape(self.table({"base": [None, 0.4, 0.2, 0.3, None]}))
        self.assertTrue(shape.ok, shape.messages)

    def test_slow_combined_is_flagged(self):
        shape = check_sweep_shape(self.table({
            "base": [0.9, 0.4, 0.2, 0.3, 0.6],
            "combined": [0.9, 0.4, 0.25, 0.3, 0.6],
        }))
        self.assertFalse(shape.ok)


class ScenarioTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cfg = load_config(CONFIG_DIR / "balanced_rod.json")
        cls.scenario = scenario_from_config(cls.cfg)

    def test_scenario_from_balanced_config(self):
        sc = self.scenario
        self.assertEqual(sc.kind, "free_oscillation_release")
        self.assertIs(sc.observer_rod, sc.rod)
        np.testing.assert_allclose(sc.holding_tip_wrench, default_holding_wrench(sc.rod))
        sweep = sweep_from_config(self.cfg, sc)
        self.assertEqual(sweep.gain_scales, (0.2, 0.5, 1.0, 2.0, 4.0))
        np.testing.assert_allclose(sweep.tip_reference, 1e5 ** 0.5 * np.eye(6), rtol=1e-12, atol=1e-9)

    def test_stiffness_mismatch_reaches_observer_model(self):
        sc = scenario_from_config(load_config(CONFIG_DIR / "tendon_robot.json"))
        self.assertIsNot(sc.observer_rod, sc.rod)
        np.testing.assert_allclose(sc.observer_rod.K, 1.1 * sc.rod.K, rtol=1e-15)
        np.testing.assert_array_equal(sc.observer_rod.M, sc.rod.M)
        np.testing.assert_array_equal(sc.observer_rod.gravity_wrench, sc.rod.gravity_wrench)
        self.assertEqual(sc.observer_rod.tendon_count, 4)

    def test_default_holding_wrench(self):
        rod = self.scenario.rod
        expected = 0.05 * 0.6 / (0.6 ** 3 / 3e4 + 0.6 / 1e4)
        self.assertAlmostEqual(default_holding_wrench(rod)[3], expected, places=9)
        np.testing.assert_array_equal(default_holding_wrench(rod)[[0, 1, 2, 4, 5]], np.zeros(5))

    def test_lateral_preload_follows_base_x_axis(self):
        sc = self.scenario
        load = lateral_preload(sc.rod, sc.base_pose)
        self.assertEqual(load.shape, (sc.rod.node_count, 6))
        w = 8.0 * 1e4 * 0.05 * 0.6 / 0.6 ** 4
        np.testing.assert_allclose(load[3], [0, 0, 0, w, 0, 0], rtol=1e-12, atol=1e-12)

    def test_replay_without_unknown_tensions_is_rejected(self):
        doc = {
            "schema_version": 1,
            "rod": {"length_m": 0.6, "node_count": 10,
                    "section": {"inertia_diag": [10] * 6, "stiffness_diag": [1e4] * 6},
                    "tendons": [{"offset_radius_m": 0.01, "offset_angle_rad": 0.0}]},
            "scenario": {"kind": "unknown_input_replay", "duration_s": 1.0},
        }
        with self.assertRaises(ConfigurationError):
            scenario_from_config(config_from_dict(doc))
        doc["rod"].pop("tendons")
        doc["scenario"]["kind"] = "tendon_driven"
        with self.assertRaises(ConfigurationError):
            scenario_from_config(config_from_dict(doc))

    def test_perturbed_state_is_seeded(self):
        rod = RodParameters.uniform(0.6, 8, 10.0 * np.eye(6), 1e4 * np.eye(6))
        sc = replace(self.scenario, rod=rod, observer_rod=rod, duration=0.02, initial_state_rule="perturbed",
                     perturbation_magnitude=0.1)
        truth = synthesize_ground_truth(sc)
        a = initial_estimate(sc, truth)
        b = perturbed_state(rod, truth.states[0], 0.1, sc.seed)
        np.testing.assert_array_equal(a.xi, b.xi)
        np.testing.assert_array_equal(a.g[0], truth.states[0].g[0])
        self.assertGreater(float(np.abs(a.xi - truth.states[0].xi).max()), 0.0)
        np.testing.assert_allclose(a.lam, (a.xi - rod.reference_strain) @ rod.K[0].T, atol=1e-9)
        same = perturbed_state(rod, truth.states[0], 0.0, 1)
        np.testing.assert_array_equal(same.xi, truth.states[0].xi)


class ScenarioRunTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cfg = load_config(CONFIG_DIR / "balanced_rod.json")
        sc = scenario_from_config(cfg)
        rod = sc.rod.resampled(8)
        cls.scenario = replace(sc, rod=rod, observer_rod=rod, duration=0.1,
                               holding_tip_wrench=default_holding_wrench(rod))
        cls.truth = synthesize_ground_truth(cls.scenario)

    def test_ground_truth_stream(self):
        self.assertEqual(len(self.truth.states), 11)
        self.assertEqual(self.truth.stream.available, ["base_wrench", "tip_pose", "tip_twist"])
        np.testing.assert_array_equal(self.truth.stream.base_wrench[0], self.truth.states[0].lam[0])

    def test_run_scenario_report(self):
        report = run_scenario(self.scenario, "base", gamma=1.0, truth=self.truth,
                              settle_rule=SettleRule("length", 0.5, length=0.6))
        self.assertEqual(report.steps, 10)
        self.assertEqual(len(report.energy_trace), 11)
        self.assertEqual(len(report.error_energy_trace), 11)
        self.assertGreater(report.error_energy_trace[0], 0.0)
        self.assertGreater(report.real_time_factor, 0.0)
        row = report.to_row()
        for key in ("variant", "gamma", "settle_time", "position_pct_length", "rotation_rad",
                    "linear_m_per_s", "angular_rad_per_s", "tip_position_m", "real_time_factor"):
            self.assertIn(key, row)
        self.assertEqual(report.to_dict()["scenario"], "balanced_rod")

    def test_sweep_rows_and_seeds(self):
        sweep = SweepConfig(gain_scales=[2.0, 1.0], variants=["base", "tipD"],
                            base_reference=1e-5 ** 0.5 * np.eye(6), tip_reference=1e5 ** 0.5 * np.eye(6))
        table = run_sweep(self.scenario, sweep, workers=1, truth=self.truth)
        self.assertEqual(len(table), 4)
        self.assertEqual(table["gamma"].tolist(), [1.0, 2.0, 1.0, 2.0])
        self.assertEqual(table["seed"].tolist(), [7, 8, 9, 10])
        self.assertTrue(table["error"].isna().all())


@unittest.skipUnless(SLOW, "set COSSERAT_SLOW_TESTS=1")
class AcceptanceTestCase(unittest.TestCase):
    # --- helpers -------------------------------------------------------------

    def tendon_scenario(self, duration=None):
        cfg = load_config(CONFIG_DIR / "tendon_robot.json")
        scenario = scenario_from_config(cfg)
        if duration is not None:
            scenario = replace(scenario, duration=duration)
        return cfg, scenario

    # --- tests ---------------------------------------------------------------

    def test_base_observer_settles_quickly(self):
        scenario = scenario_from_config(load_config(CONFIG_DIR / "balanced_rod.json"))
        report = run_scenario(scenario, "base", gamma=1.0, settle_rule=SettleRule("relative", 0.02))
        self.assertIsNotNone(report.settle_time)
        self.assertLessEqual(report.settle_time, 0.3)

    def test_balanced_sweep_shape(self):
        cfg = load_config(CONFIG_DIR / "balanced_rod.json")
        scenario = scenario_from_config(cfg)
        table = run_sweep(scenario, sweep_from_config(cfg, scenario), workers=os.cpu_count() or 1)
        shape = check_sweep_shape(table)
        self.assertTrue(shape.ok, shape.messages)

    def test_proportional_term_lowers_steady_tip_error(self):
        cfg, scenario = self.tendon_scenario()
        self.assertEqual(scenario.observer_rod.node_count, 30)
        np.testing.assert_allclose(scenario.observer_rod.K, 1.1 * scenario.rod.K, rtol=1e-15)
        truth = synthesize_ground_truth(scenario)
        rule = SettleRule("length", 0.05, length=scenario.rod.length)
        runs = {
            variant: run_scenario(scenario, variant, truth=truth, settle_rule=rule, pd_ratio=cfg.observer.pd_ratio,
                                  combined_includes_proportional=cfg.observer.combined_includes_proportional)
            for variant in ("tipD", "tipPD", "combined")
        }
        tip = {v: r.average_errors["tip_position_m"] for v, r in runs.items()}
        self.assertLess(tip["tipPD"], tip["tipD"])
        self.assertLessEqual(tip["combined"], 1.1 * tip["tipPD"])

    def test_energy_audit(self):
        scenario = scenario_from_config(load_config(CONFIG_DIR / "soft_rod_energy.json"))
        conservative = energy_audit(scenario, dissipative=False)
        self.assertTrue(conservative.passes(), (conservative.drift, conservative.max_step_increase))
        damped = energy_audit(scenario, dissipative=True, duration=0.3)
        self.assertTrue(damped.passes())
        self.assertLess(damped.energy[-1], 0.5 * damped.energy[0])

    def test_base_observer_runs_in_real_time_at_30_nodes(self):
        _, scenario = self.tendon_scenario(duration=2.0)
        self.assertEqual(scenario.rod.node_count, 30)
        self.assertAlmostEqual(scenario.solver.dt, 1.0 / 30.0, places=12)
        report = run_scenario(scenario, "base", gamma=1.0)
        self.assertGreaterEqual(report.real_time_factor, 1.0)

    def test_realtime_factor_falls_with_node_count(self):
        _, scenario = self.tendon_scenario(duration=2.0)
        counts = [30, 35, 40, 45]
        trend = realtime_trend(scenario, counts)
        self.assertEqual(trend["node_count"].tolist(), counts)
        rtf = trend["real_time_factor"].to_numpy()
        # wall-clock noise: 10 % per step
        for a, b in zip(rtf[:-1], rtf[1:]):
            self.assertLess(b, 1.1 * a)
        self.assertLess(rtf[-1], rtf[0])


if __name__ == "__main__":
    unittest.main()
