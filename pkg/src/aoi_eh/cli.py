"""Command line entry point: ``solve``, ``run``, ``sweep`` and ``plot-data``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness


def _list(text: str | None, cast=str):
    if text is None:
        return None
    items = [x.strip() for x in text.split(",") if x.strip()]
    if cast is int:
        out = []
        for x in items:
            if "-" in x[1:]:
                lo, hi = x.split("-", 1)
                out += list(range(int(lo), int(hi) + 1))
            else:
                out.append(int(x))
        return out
    return items


def _config(args) -> harness.ExperimentConfig:
    return harness.resolve_config(args.config)


def cmd_solve(args) -> int:
    cfg = _config(args)
    if cfg.scenario != "stationary_single":
        print(f"solve needs a stationary_single config, got {cfg.scenario}", file=sys.stderr)
        return 2
    res = harness.run_experiment(cfg, out_dir=args.out)
    for lam, tab in res.tables.items():
        print(f"lambda={lam:g} threshold_in_K={tab['in_K']} threshold_in_p={tab['in_p']}")
    if args.out:
        print(f"wrote threshold tables to {args.out}")
    return 0


def _run(args, single: bool) -> int:
    cfg = _config(args)
    algos = _list(args.algo) or list(cfg.algorithms)
    if single:
        algos = algos[:1]
    res = harness.run_experiment(cfg, out_dir=args.out, algorithms=algos,
                                 seeds=_list(args.seeds, int), progress=print)
    for algo, v in res.final_means().items():
        print(f"{algo}: mean final cumulative cost {v:.6g}")
    return 0


def cmd_run(args) -> int:
    return _run(args, single=True)


def cmd_sweep(args) -> int:
    return _run(args, single=False)


def cmd_plot_data(args) -> int:
    out = Path(args.out)
    agg_path = out / "aggregate.csv"
    if agg_path.exists():
        curve = harness.read_aggregate(agg_path)
        res = harness.AggregateResult(curve, curve.iloc[0:0])
        for p in harness.emit_plot_data(res, "cumcost_curve", out):
            print(f"wrote {p}")
        return 0
    if args.config is None:
        print(f"no aggregate.csv in {out}; pass --config for threshold tables", file=sys.stderr)
        return 2
    cfg = _config(args)
    res = harness.run_experiment(cfg, out_dir=None)
    for p in harness.emit_plot_data(res, "threshold_table", out):
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aoi-eh", description="AoI minimisation with energy-harvesting sources")
    sub = ap.add_subparsers(dest="command", required=True)
    specs = {
        "solve": (cmd_solve, "stationary threshold tables"),
        "run": (cmd_run, "one algorithm of a scenario"),
        "sweep": (cmd_sweep, "every algorithm of a scenario"),
        "plot-data": (cmd_plot_data, "emit tidy plotting files"),
    }
    for name, (fn, help_) in specs.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=name != "plot-data",
                       help="YAML file or bundled preset name (fig2, fig3, fig4)")
        p.add_argument("--out", required=name == "plot-data", help="output directory")
        p.add_argument("--seeds", help="comma list or ranges, e.g. 0-9")
        p.add_argument("--algo", help="comma list of algorithm names")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
