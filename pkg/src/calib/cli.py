"""Command-line entry point: ``calib run|oracle|compare|plot-data``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, tomllib
from .experiment import (ExperimentSpec, KINDS, compare, emit_plot_data, format_table, oracle, run_experiment,
                         write_compare)
from .loop import History

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parse_set(items) -> dict:
    """``section.key=value`` pairs, values in TOML syntax."""
    out: dict = {}
    for item in items or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        lhs, rhs = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        try:
            value = tomllib.loads(f"v = {rhs.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = rhs.strip()
        out.setdefault(section, {})[key] = value
    return out


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = _parse_set(getattr(args, "set", None))
    run = over.setdefault("run", {})
    for flag, key in (("iterations", "iterations"), ("engine_time", "engine_time")):
        val = getattr(args, flag, None)
        if val is not None:
            run[key] = val
    return cfg.with_overrides(**over)


def cmd_run(args) -> int:
    cfg = load_config(args)
    kinds = args.kind or [cfg.run.kind]
    seeds = args.seed if args.seed is not None else [cfg.run.seed]
    spec = ExperimentSpec(cfg, kinds, seeds, Path(args.out))

    def progress(kind, seed, d):
        s = json.loads((d / "summary.json").read_text())
        print(f"{kind} seed={seed} best_gie={s['best_gie']} t_conv={s['convergence_time']} -> {d}")

    run_experiment(spec, resume=not args.fresh, progress=progress)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = load_config(args)
    summ, path, computed = oracle(cfg, Path(args.out), args.resolution)
    print(f"{'computed' if computed else 'cached'}: {path}")
    print(f"BR*={summ.br:.5f} SOI*={summ.soi_di:.3f} GIE*={summ.gie:.6f} Q*={summ.q_fuel:.2f} J*={summ.cost:.6g}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows, medians = compare(args.runs, args.oracle_dir)
    if not rows:
        print(f"no runs found below {args.runs}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out) if args.out else Path(args.runs) / "compare.csv"
    write_compare(rows, medians, out)
    print(format_table(medians))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_plot_data(args) -> int:
    records = History.read_csv(args.history)
    for p in emit_plot_data(records, args.out):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calib", description="Bayesian-optimisation engine calibration on a surrogate plant.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML configuration file (defaults are used when omitted)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config field")

    r = sub.add_parser("run", help="run calibrations for one or more kinds and seeds")
    common(r)
    r.add_argument("--kind", nargs="+", choices=KINDS, help="acquisition kind(s)")
    r.add_argument("--seed", nargs="+", type=int, help="seed(s)")
    r.add_argument("--iterations", type=int, help="BO iteration budget")
    r.add_argument("--engine-time", type=float, help="engine-time budget [s]")
    r.add_argument("--out", default="runs", help="output directory")
    r.add_argument("--fresh", action="store_true", help="ignore checkpoints and start over")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="grid oracle of the noiseless plant (cached by config hash)")
    common(o)
    o.add_argument("--resolution", type=int, default=50)
    o.add_argument("--out", default="oracle")
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("compare", help="per-run deltas against the oracle and per-kind medians")
    c.add_argument("--runs", required=True)
    c.add_argument("--oracle-dir", help="oracle cache directory (default RUNS/oracle)")
    c.add_argument("--out", help="aggregate CSV path (default RUNS/compare.csv)")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("plot-data", help="long-format CSVs from a history file")
    d.add_argument("--history", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
