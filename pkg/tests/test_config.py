# tests/test_config.py
from __future__ import annotations
import copy
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from cosserat_observer.config import build_rod, config_from_dict, load_config
from cosserat_observer.errors import ConfigurationError

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


class ConfigTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.doc = json.loads((CONFIG_DIR / "balanced_rod.json").read_text(encoding="utf-8"))

    # --- helpers -------------------------------------------------------------

    def edited(self, **scenario):
        doc = copy.deepcopy(self.doc)
        doc["scenario"].update(scenario)
        return doc

    # --- tests ---------------------------------------------------------------

    def test_shipped_configs_load(self):
        for path in sorted(CONFIG_DIR.glob("*.json")):
            with self.subTest(config=path.name):
                cfg = load_config(path)
                self.assertEqual(cfg.name, path.stem)
                rod = build_rod(cfg.rod, cfg.scenario.gravity_m_per_s2)
                self.assertEqual(rod.node_count, cfg.rod.node_count)

    def test_balanced_rod_values(self):
        cfg = config_from_dict(self.doc)
        self.assertEqual(cfg.solver.dt, 0.01)
        self.assertEqual(cfg.sweep.gain_scales, [0.2, 0.5, 1.0, 2.0, 4.0])
        self.assertEqual(cfg.observer.variant, "base")
        np.testing.assert_allclose(cfg.base_pose[:3, :3], np.diag([1.0, -1.0, -1.0]), atol=1e-15)
        rod = build_rod(cfg.rod, cfg.scenario.gravity_m_per_s2)
        np.testing.assert_array_equal(rod.K[0], 1e4 * np.eye(6))
        self.assertAlmostEqual(rod.gravity_wrench[0, 5], -98.1, places=12)

    def test_tendon_robot(self):
        cfg = load_config(CONFIG_DIR / "tendon_robot.json")
        rod = build_rod(cfg.rod, cfg.scenario.gravity_m_per_s2)
        self.assertEqual(rod.tendon_count, 4)
        self.assertEqual(rod.tendons[3].termination_node, 14)
        self.assertEqual(rod.tendons[0].termination_node, 29)
        self.assertEqual(cfg.scenario.model_mismatch_stiffness_factor, 1.1)
        self.assertEqual(len(cfg.scenario.unknown_tensions.times_s), 5)

    def test_sweep_scales_are_sorted(self):
        doc = copy.deepcopy(self.doc)
        doc["sweep"]["gain_scales"] = [4.0, 0.5, 1.0]
        self.assertEqual(config_from_dict(doc).sweep.gain_scales, [0.5, 1.0, 4.0])

    def test_wrong_schema_version(self):
        doc = copy.deepcopy(self.doc)
        doc["schema_version"] = 2
        with self.assertRaises(ConfigurationError):
            config_from_dict(doc)

    def test_schema_violations(self):
        bad_docs = [
            self.edited(kind="hover"),
            self.edited(duration_s=-1.0),
            self.edited(gravity_m_per_s2=[0.0, -9.81]),
        ]
        doc = copy.deepcopy(self.doc)
        doc["rod"]["node_count"] = 1
        bad_docs.append(doc)
        doc = copy.deepcopy(self.doc)
        doc["rod"]["section"]["stiffness_diag"][2] = 0.0
        bad_docs.append(doc)
        doc = copy.deepcopy(self.doc)
        doc["extra"] = True
        bad_docs.append(doc)
        for i, doc in enumerate(bad_docs):
            with self.subTest(case=i):
                with self.assertRaises(ConfigurationError):
                    config_from_dict(doc)

    def test_tension_tables_need_tendons(self):
        doc = self.edited(tensions={"times_s": [0.0], "tensions_n": [[1.0]]})
        with self.assertRaises(ConfigurationError):
            config_from_dict(doc)

    def test_tension_table_shape(self):
        doc = json.loads((CONFIG_DIR / "tendon_robot.json").read_text(encoding="utf-8"))
        doc["scenario"]["tensions"] = {"times_s": [0.0, 1.0], "tensions_n": [[0, 0, 0, 0], [1, 0, 0]]}
        with self.assertRaises(ConfigurationError):
            config_from_dict(doc)
        doc["scenario"]["tensions"] = {"times_s": [1.0, 0.0], "tensions_n": [[0, 0, 0, 0], [1, 0, 0, 0]]}
        with self.assertRaises(ConfigurationError):
            config_from_dict(doc)

    def test_solver_settings_errors_surface_as_config_errors(self):
        doc = copy.deepcopy(self.doc)
        doc["solver"]["time_rule"] = "rk4"
        with self.assertRaises(ConfigurationError):
            config_from_dict(doc)

    def test_missing_and_malformed_files(self):
        with self.assertRaises(ConfigurationError):
            load_config("/nonexistent/config.json")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.json"
            path.write_text("{not json", encoding="utf-8")
            with self.assertRaises(ConfigurationError):
                load_config(path)


if __name__ == "__main__":
    unittest.main()
