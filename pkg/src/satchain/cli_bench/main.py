"""``satchain`` command line: validate, simulate, dp-solve, train-maql, optimize-cache, benchmark."""
from __future__ import annotations

import argparse
import inspect
import logging
import os
import sys

from ..dp_solver import InstanceTooLarge, value_iteration
from . import pipelines as pl
from .presets import PRESET_SCENARIOS, PRESETS
from .scenario import ScenarioError, build_scenario, dump_scenario, load_scenario, read_scenario_text, validate

log = logging.getLogger("satchain")


def _out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _scenario(args):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    return sc


def cmd_validate(args) -> int:
    with open(args.scenario) as fh:
        data, lines = read_scenario_text(fh.read())
    diags = validate(data, lines)
    for d in diags:
        print(f"{args.scenario}: {d}", file=sys.stderr)
    if not diags:
        print(f"{args.scenario}: ok")
    return 1 if diags else 0


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args.out)
    report, sim = pl.simulate(sc, args.policy, slots=args.slots, record_trace=True)
    pl.write_rows(os.path.join(out, "report.csv"), [report.row()])
    if sim is not None:
        sim.write_trace(os.path.join(out, "trace.csv"))
    if report.series:
        pl.write_series(os.path.join(out, "convergence.csv"), report.series)
    pl.write_manifest(out, "simulate", sc.seed, [sc], {"policy": args.policy})
    print(f"{sc.name} {args.policy}: serving rate {report.serving_rate:.4f}")
    return 0


def cmd_dp_solve(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args.out)
    table = value_iteration(sc.config, max_states=sc.run["dp_max_states"])
    table.dump(os.path.join(out, "value_table.csv"))
    report = pl.dp_report(sc, sc.seed, args.slots or sc.run["slots"], table)
    pl.write_rows(os.path.join(out, "report.csv"), [report.row()])
    pl.write_manifest(out, "dp-solve", sc.seed, [sc], {"sweeps": table.sweeps})
    print(f"{sc.name}: {table.num_states} states, value {table.start_value():.6g}, "
          f"serving rate {report.serving_rate:.4f}")
    return 0


def cmd_train_maql(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args.out)
    res = pl.train_maql(sc, episodes=args.episodes)
    sim = res.agents.evaluate(args.slots or sc.run["slots"], sc.seed, record_trace=True)
    report = pl.RunReport(sc.name, "maql", sc.seed, pl._stats_metrics(sim.stats), res.trace)
    pl.write_rows(os.path.join(out, "report.csv"), [report.row()])
    pl.write_series(os.path.join(out, "convergence.csv"), res.trace)
    res.agents.write_tables(os.path.join(out, "q_tables.csv"))
    sim.write_trace(os.path.join(out, "trace.csv"))
    pl.write_manifest(out, "train-maql", sc.seed, [sc], {"episodes": args.episodes or sc.run["episodes"],
                                                         "decayed_at": res.decayed_at})
    print(f"{sc.name} maql: serving rate {report.serving_rate:.4f}")
    return 0


def cmd_optimize_cache(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args.out)
    res = pl.optimize_cache(sc, args.method, args.acq)
    res.write_history(os.path.join(out, "history.csv"))
    row = {"scenario": sc.name, "method": args.method, "acq": args.acq if args.method == "bo" else "",
           "seed": sc.seed, "theta": sc.space.format(res.theta), "serving_rate": res.value,
           "evaluations": res.evaluations, "distinct_strategies": res.distinct}
    pl.write_rows(os.path.join(out, "report.csv"), [row])
    pl.write_manifest(out, "optimize-cache", sc.seed, [sc], {"method": args.method, "acq": args.acq})
    print(f"{sc.name} {args.method}: {sc.space.format(res.theta)} serves {res.value:.4f} "
          f"after {res.evaluations} evaluations")
    return 0


def cmd_benchmark(args) -> int:
    if args.dump_scenario:
        print(dump_scenario(PRESET_SCENARIOS[args.preset]()), end="")
        return 0
    out = _out_dir(args.out)
    fn, _ = PRESETS[args.preset]
    kw = {}
    params = inspect.signature(fn).parameters
    if args.seeds is not None:
        base = args.seed or 0
        kw["seeds"] = tuple(range(base, base + args.seeds))
    elif args.seed is not None:
        kw["seeds"] = (args.seed,)
    if args.episodes is not None:
        if "episodes" not in params:
            raise ValueError(f"preset {args.preset} has no episode count")
        kw["episodes"] = args.episodes
    tables = fn(**kw)
    for name, rows in tables.items():
        pl.write_rows(os.path.join(out, f"{name}.csv"), rows)
    scenarios = [build_scenario(PRESET_SCENARIOS[args.preset]())]
    pl.write_manifest(out, f"benchmark {args.preset}", kw.get("seeds", (0,))[0], scenarios,
                      {"preset": args.preset, "options": {k: list(v) if isinstance(v, tuple) else v
                                                         for k, v in kw.items()}})
    for row in tables.get("results", tables.get("baselines", [])):
        log.info(", ".join(f"{k}={pl._fmt(v)}" for k, v in row.items() if k not in ("theta",)))
    print(f"benchmark {args.preset}: wrote {', '.join(sorted(tables))} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satchain", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--scenario", required=True, help="scenario YAML file")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    sp = sub.add_parser("validate", help="check a scenario file")
    sp.add_argument("--scenario", required=True)
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("simulate", help="run one placement policy")
    common(sp)
    sp.add_argument("--policy", choices=pl.POLICIES, default="greedy")
    sp.add_argument("--slots", type=int, default=None)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("dp-solve", help="solve the placement DP exactly")
    common(sp)
    sp.add_argument("--slots", type=int, default=None, help="slots to replay the optimal policy for")
    sp.set_defaults(fn=cmd_dp_solve)

    sp = sub.add_parser("train-maql", help="train the multi-agent Q-learning policy")
    common(sp)
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--slots", type=int, default=None, help="evaluation slots")
    sp.set_defaults(fn=cmd_train_maql)

    sp = sub.add_parser("optimize-cache", help="search caching strategies")
    common(sp)
    sp.add_argument("--method", choices=("bo", "cd", "ps", "popularity"), default="bo")
    sp.add_argument("--acq", choices=pl.ACQUISITIONS, default="pi")
    sp.set_defaults(fn=cmd_optimize_cache)

    sp = sub.add_parser("benchmark", help="run a named experiment preset")
    sp.add_argument("preset", choices=sorted(PRESETS))
    sp.add_argument("--out", default=None)
    sp.add_argument("--seed", type=int, default=None, help="first seed")
    sp.add_argument("--seeds", type=int, default=None, help="number of consecutive seeds")
    sp.add_argument("--episodes", type=int, default=None, help="training episodes for learning policies")
    sp.add_argument("--dump-scenario", action="store_true", help="print the preset's base scenario and exit")
    sp.set_defaults(fn=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "benchmark" and not args.dump_scenario and not args.out:
        print("benchmark: --out is required", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"{getattr(args, 'scenario', '')}: {d}", file=sys.stderr)
        return 1
    except InstanceTooLarge as exc:
        print(f"dp-solve: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
