# tests/test_cli.py
from __future__ import annotations
import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path

import pandas as pd

import cli
from cosserat_observer import __version__
from cosserat_observer.reports import load_run_records

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.ledger = self.tmp / "runs.jsonl"

    def tearDown(self):
        self._tmp.cleanup()

    # --- helpers -------------------------------------------------------------

    def run_cli(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = cli.main(list(argv) + ["--out", str(self.tmp / "out"), "--ledger", str(self.ledger),
                                          "--log-level", "WARNING"])
        return code, out.getvalue(), err.getvalue()

    # --- tests ---------------------------------------------------------------

    def test_gains_command(self):
        code, out, _ = self.run_cli("gains", "--config", str(CONFIG_DIR / "balanced_rod.json"))
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn("wave speeds", out)
        mu = pd.read_csv(self.tmp / "out" / "mu.csv")
        self.assertEqual(sorted(mu["which"].unique()), ["base", "tip"])
        gains = json.loads((self.tmp / "out" / "gains.json").read_text(encoding="utf-8"))
        self.assertAlmostEqual(gains["tip_optimal"][0][0], 1e5 ** 0.5, places=6)
        self.assertAlmostEqual(gains["finite_time_both_s"], 0.6 / 1000 ** 0.5, places=9)
        records = load_run_records(self.ledger)
        self.assertEqual(len(records), 1)
        self.assertEqual(records[0]["command"], "gains")
        self.assertEqual(records[0]["exit_code"], 0)

    def test_static_simulate_command(self):
        code, out, _ = self.run_cli("simulate", "--config", str(CONFIG_DIR / "steel_cantilever.json"))
        self.assertEqual(code, cli.EXIT_OK)
        states = pd.read_csv(self.tmp / "out" / "states.csv")
        self.assertEqual(states["node"].max(), 29)
        self.assertTrue((self.tmp / "out" / "stream.csv").exists())
        report = json.loads((self.tmp / "out" / "report.json").read_text(encoding="utf-8"))
        self.assertEqual(report["kind"], "static_equilibrium")
        self.assertLess(report["tip_position_final_m"][2], 0.0)

    def test_configuration_error_exit_code(self):
        bad = self.tmp / "bad.json"
        bad.write_text(json.dumps({"schema_version": 99}), encoding="utf-8")
        code, _, err = self.run_cli("gains", "--config", str(bad))
        self.assertEqual(code, cli.EXIT_CONFIG)
        self.assertIn("CONFIG ERROR", err)
        record = load_run_records(self.ledger)[0]
        self.assertEqual(record["exit_code"], cli.EXIT_CONFIG)
        self.assertIn("schema_version", record["error"])

    def test_solver_error_exit_code(self):
        doc = json.loads((CONFIG_DIR / "steel_cantilever.json").read_text(encoding="utf-8"))
        doc["solver"]["max_newton_iterations"] = 1
        path = self.tmp / "stiff.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        code, _, err = self.run_cli("simulate", "--config", str(path))
        self.assertEqual(code, cli.EXIT_SOLVER)
        self.assertIn("SOLVER ERROR", err)

    def test_version_flag(self):
        out = io.StringIO()
        with contextlib.redirect_stdout(out), self.assertRaises(SystemExit) as ctx:
            cli.main(["--version"])
        self.assertEqual(ctx.exception.code, 0)
        self.assertEqual(out.getvalue().strip(), __version__)

    def test_unknown_command(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                cli.main(["fly", "--config", "x.json"])


if __name__ == "__main__":
    unittest.main()
