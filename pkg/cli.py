#!/usr/bin/env python3
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from cosserat_observer.config import AppConfig, load_config
from cosserat_observer.errors import ConfigurationError, DivergenceError, NonconvergenceError, RodObserverError
from cosserat_observer.gains import finite_time_bound, optimal_gains, riemann_setup
from cosserat_observer.harness import (
    check_sweep_shape,
    energy_audit,
    mu_sweep,
    reference_gains,
    run_scenario,
    run_sweep,
    scenario_from_config,
    sweep_from_config,
    synthesize_ground_truth,
)
from cosserat_observer.observers import SettleRule, variant_gains
from cosserat_observer.reports import append_run_record, dump_json_atomic, write_states_csv, write_table_csv
from cosserat_observer.streams import save_stream_csv
from cosserat_observer.version import __version__

logger = logging.getLogger("cosserat_observer.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def _print_table(df, limit=50):
    if df.empty:
        print("No result.")
        return
    cols = list(df.columns)
    rows = [["" if v is None else (f"{v:.4g}" if isinstance(v, float) else str(v)) for v in r]
            for r in df.itertuples(index=False)]
    widths = [max(len(c), *(len(r[i]) for r in rows[:limit])) for i, c in enumerate(cols)]
    print(" | ".join(c.ljust(widths[i]) for i, c in enumerate(cols)))
    print("-+-".join("-" * w for w in widths))
    for r in rows[:limit]:
        print(" | ".join(v.ljust(widths[i]) for i, v in enumerate(r)))
    if len(rows) > limit:
        print(f"... ({len(rows)} rows total)")


# --------------------------------------------
# Subcommands
# --------------------------------------------

def cmd_simulate(args, cfg, out: Path):
    scenario = scenario_from_config(cfg)
    truth = synthesize_ground_truth(scenario)
    write_states_csv(truth.states, out / "states.csv")
    save_stream_csv(truth.stream, out / "stream.csv")
    report = {"scenario": scenario.name, "kind": scenario.kind, "steps": len(truth.states) - 1,
              "tip_position_final_m": truth.states[-1].positions[-1], "base_wrench_initial": truth.states[0].lam[0]}
    dump_json_atomic(out / "report.json", report)
    print(f"simulated {report['steps']} steps -> {out}")
    return {"steps": report["steps"]}


def cmd_observe(args, cfg, out: Path):
    scenario = scenario_from_config(cfg)
    variant = args.variant or cfg.observer.variant
    gamma = args.gamma if args.gamma is not None else cfg.observer.gain_scale
    G0, G1 = reference_gains(scenario.observer_rod, cfg.observer.gain_reference)
    gains = variant_gains(variant, gamma, G0, G1, cfg.observer.pd_ratio, cfg.observer.combined_includes_proportional)
    rule = SettleRule(kind=cfg.sweep.settle_kind, fraction=cfg.sweep.settle_fraction, length=scenario.rod.length)
    report = run_scenario(scenario, variant, gains=gains, gamma=gamma, settle_rule=rule, seed=args.seed,
                          states_path=out / "states.csv")
    dump_json_atomic(out / "report.json", report.to_dict())
    print(f"variant={variant} gamma={gamma:g} settle={report.settle_time} rtf={report.real_time_factor:.2f}")
    for k, v in report.average_errors.items():
        print(f"  {k}: {v:.4g}")
    return {"variant": variant, "gamma": gamma, "settle_time": report.settle_time,
            "real_time_factor": report.real_time_factor}


def cmd_sweep(args, cfg, out: Path):
    scenario = scenario_from_config(cfg)
    sweep = sweep_from_config(cfg, scenario)
    table = run_sweep(scenario, sweep, workers=args.workers)
    write_table_csv(table, out / "sweep.csv")
    _print_table(table)
    shape = check_sweep_shape(table)
    for msg in shape.messages:
        print("shape:", msg)
    return {"rows": len(table), "shape_ok": shape.ok}


def cmd_gains(args, cfg, out: Path):
    scenario = scenario_from_config(cfg)
    rod = scenario.observer_rod
    M, K, L = rod.M[0], rod.K[0], rod.length
    G0, G1 = optimal_gains(M, K)
    analysis = riemann_setup(M, K)
    grid = np.round(np.arange(1, 201) * 0.02, 10)
    tables = []
    for which in ("tip", "base"):
        t = mu_sweep(M, K, L, grid, which=which, reference="optimal")
        t.insert(0, "which", which)
        tables.append(t)
    mu = pd.concat(tables, ignore_index=True)
    write_table_csv(mu, out / "mu.csv")
    dump_json_atomic(out / "gains.json", {
        "wave_speeds": analysis.speeds, "base_optimal": G0, "tip_optimal": G1,
        "finite_time_one_s": finite_time_bound(analysis.Sigma, L, "one"),
        "finite_time_both_s": finite_time_bound(analysis.Sigma, L, "both"),
    })
    print("wave speeds:", np.array2string(analysis.speeds, precision=4))
    print("Gamma_0* diag:", np.array2string(np.diag(G0), precision=4))
    print("Gamma_1* diag:", np.array2string(np.diag(G1), precision=4))
    return {"rows": len(mu)}


def cmd_energy(args, cfg, out: Path):
    scenario = scenario_from_config(cfg)
    rows = []
    for dissipative in (False, True):
        audit = energy_audit(scenario, dissipative=dissipative)
        rows.append(pd.DataFrame({"dissipative": dissipative, "t": audit.times, "energy": audit.energy}))
        print(f"{'dissipative' if dissipative else 'conservative'}: drift={audit.drift:.3e} "
              f"max_step_increase={audit.max_step_increase:.3e} pass={audit.passes()}")
    write_table_csv(pd.concat(rows, ignore_index=True), out / "energy.csv")
    return {}


COMMANDS = {"simulate": cmd_simulate, "observe": cmd_observe, "sweep": cmd_sweep,
            "gains": cmd_gains, "energy": cmd_energy}


def main(argv=None):
    app = AppConfig()
    ap = argparse.ArgumentParser(description="Cosserat rod boundary observers")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=app.out_dir)
    ap.add_argument("--variant", choices=["none", "base", "tipD", "tipPD", "combined"])
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int, default=app.workers)
    ap.add_argument("--ledger", default=app.ledger_path)
    ap.add_argument("--log-level", default=app.log_level)
    ap.add_argument("--version", action="version", version=__version__)
    args = ap.parse_args(argv)
    _setup_logging(args.log_level)

    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](args, cfg, out)
        code = EXIT_OK
    except ConfigurationError as exc:
        print("CONFIG ERROR:", exc, file=sys.stderr)
        summary, code = {"error": str(exc)}, EXIT_CONFIG
    except (NonconvergenceError, DivergenceError) as exc:
        print("SOLVER ERROR:", exc, file=sys.stderr)
        summary, code = {"error": str(exc)}, EXIT_SOLVER
    except RodObserverError as exc:
        print("ERROR:", exc, file=sys.stderr)
        summary, code = {"error": str(exc)}, EXIT_CONFIG
    record = {"config": args.config, "variant": args.variant, "gamma": args.gamma, "seed": args.seed}
    record.update(summary)
    append_run_record(args.ledger, args.command, exit_code=code, **record)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
