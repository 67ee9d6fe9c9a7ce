#!/usr/bin/env python3
"""
SharesSkew workbench CLI

Subcommands:
  gen          generate relation files from a generator config
  plan         detect heavy hitters and write a join plan
  run          execute a plan on data and report shuffle metrics
  compare      naive vs SharesSkew vs Shares over reducer budgets (k) or capacities (q)
  closed-form  closed-form costs for 2-way, chain and symmetric joins
  oracle       brute-force join of the data
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from joins.closed_forms import (
    chain_arbitrary_cost,
    chain_equal_cost,
    naive_two_way_cost,
    symmetric_cost,
    symmetric_shares,
    two_way_lower_bound,
)
from joins.executor import ShuffleSimulator
from joins.hh_stats import HeavyHitterCatalog, HeavyHitterThreshold, detect_heavy_hitters
from joins.join_model import JoinSpec
from joins.mapper import HashFamily
from joins.oracle import brute_force_join
from joins.planner import ALGORITHM_SHARES, ALGORITHM_SHARESSKEW, MODE_K, MODE_Q, JoinPlan, JoinPlanner
from utils.config_manager import ConfigManager, get_config
from utils.error_handler import EXIT_OK, ConfigurationError, ErrorReporter
from utils.log_setup import setup_logger
from workbench.experiments import ALGORITHM_NAIVE, ALGORITHMS, ExperimentRunner, ExperimentSweep
from workbench.generator import DataGenerator, GeneratorConfig
from workbench.tuple_io import load_store


def _int_list(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _float_list(text: str) -> List[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="SharesSkew join planning and shuffle simulation workbench")
    parser.add_argument("--config", type=str, default=None, help="Settings JSON (defaults to config/settings.json)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate relation files")
    gen.add_argument("--spec", required=True)
    gen.add_argument("--generator", required=True, help="Generator config JSON")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", type=str, default=None, help="Output directory (defaults to the data dir)")

    plan = sub.add_parser("plan", help="Build a join plan")
    plan.add_argument("--spec", required=True)
    plan.add_argument("--data-dir", type=str, default=None)
    plan.add_argument("--k", type=int, default=None, help="Reducer budget per residual join")
    plan.add_argument("--q", type=float, default=None, help="Reducer capacity (sizing and HH threshold)")
    plan.add_argument("--tau", type=float, default=None, help="HH threshold as a fraction of relation size")
    plan.add_argument("--catalog", type=str, default=None, help="Catalog file to reuse or create")
    plan.add_argument("--cap", type=int, default=None, help="Cap on the number of combinations of types")
    plan.add_argument("--algorithm", choices=[ALGORITHM_SHARESSKEW, ALGORITHM_SHARES], default=ALGORITHM_SHARESSKEW)
    plan.add_argument("--out", type=str, default=None, help="Plan JSON output (stdout summary otherwise)")

    run = sub.add_parser("run", help="Execute a plan")
    run.add_argument("--plan", required=True)
    run.add_argument("--spec", type=str, default=None, help="Join spec; must match the plan's")
    run.add_argument("--data-dir", type=str, default=None)
    run.add_argument("--seed", type=int, default=None, help="Master hash seed")
    run.add_argument("--out", type=str, default=None, help="Metrics JSON output")
    run.add_argument("--csv", type=str, default=None, help="Per-residual metrics CSV output")
    run.add_argument("--spill", type=str, default=None, help="Write emitted pairs to this TSV file")
    run.add_argument("--shuffle-only", action="store_true", help="Skip the reduce phase")

    compare = sub.add_parser("compare", help="Compare algorithms over k values or capacities")
    compare.add_argument("--spec", required=True)
    compare.add_argument("--data-dir", type=str, default=None)
    compare.add_argument("--mode", choices=[MODE_K, MODE_Q], default=MODE_K,
                         help="Sweep reducer budgets (k) or reducer capacities (q)")
    compare.add_argument("--k", type=_int_list, default=None, help="k mode: comma-separated, strictly increasing")
    compare.add_argument("--capacities", type=_float_list, default=None,
                         help="q mode: comma-separated capacities, strictly increasing")
    compare.add_argument("--q", type=float, default=None, help="HH threshold capacity")
    compare.add_argument("--tau", type=float, default=None)
    compare.add_argument("--seed", type=int, default=None)
    compare.add_argument("--algorithms", type=lambda s: tuple(a for a in s.split(",") if a), default=ALGORITHMS)
    compare.add_argument("--with-output", action="store_true", help="Also run reducers and count outputs")
    compare.add_argument("--out", type=str, default=None, help="CSV output")

    closed = sub.add_parser("closed-form", help="Closed-form costs")
    closed.add_argument("form", choices=["two-way", "chain", "chain-equal", "symmetric"])
    closed.add_argument("--k", type=float, required=True)
    closed.add_argument("--r", type=float, default=None)
    closed.add_argument("--s", type=float, default=None)
    closed.add_argument("--n", type=int, default=None)
    closed.add_argument("--d", type=int, default=None)
    closed.add_argument("--sizes", type=_float_list, default=None)
    closed.add_argument("--hh", type=_int_list, default=[], help="Heavy attribute positions in the chain")

    oracle = sub.add_parser("oracle", help="Brute-force join")
    oracle.add_argument("--spec", required=True)
    oracle.add_argument("--data-dir", type=str, default=None)
    oracle.add_argument("--cap", type=int, default=None)
    oracle.add_argument("--out", type=str, default=None)

    return parser.parse_args(argv)


def _emit(payload: Any, out: Optional[str], logger: logging.Logger) -> None:
    text = json.dumps(payload, indent=2, default=str)
    if out:
        out_path = Path(out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")
        logger.info(f"Written to: {out_path}")
    else:
        print(text)


def _data_dir(args: argparse.Namespace, config: ConfigManager) -> Path:
    return Path(args.data_dir) if args.data_dir else config.get_data_dir()


def _master_seed(args: argparse.Namespace, config: ConfigManager) -> int:
    if args.seed is not None:
        return args.seed
    return int(config.get_hashing_settings().get("master_seed", 1729))


def _threshold(args: argparse.Namespace, config: ConfigManager) -> HeavyHitterThreshold:
    if args.tau is not None:
        return HeavyHitterThreshold(tau=args.tau)
    if args.q is not None:
        return HeavyHitterThreshold(capacity_q=args.q)
    return HeavyHitterThreshold.from_settings(config.get_heavy_hitter_settings())


def cmd_gen(args: argparse.Namespace, config: ConfigManager, logger: logging.Logger) -> int:
    spec = JoinSpec.load(Path(args.spec))
    gen_config = GeneratorConfig.load(Path(args.generator),
                                      default_seed=int(config.get_workbench_settings().get("seed", 7)))
    if args.seed is not None:
        gen_config.seed = args.seed
    out_dir = Path(args.out) if args.out else config.get_data_dir()
    paths = DataGenerator(gen_config).generate(spec, out_dir)
    _emit({name: str(path) for name, path in paths.items()}, None, logger)
    return EXIT_OK


def cmd_plan(args: argparse.Namespace, config: ConfigManager, logger: logging.Logger) -> int:
    spec = JoinSpec.load(Path(args.spec))
    store = load_store(spec, _data_dir(args, config))
    if args.cap is not None:
        config.set("planner.combination_cap", args.cap)

    catalog = HeavyHitterCatalog.empty()
    if args.algorithm == ALGORITHM_SHARESSKEW:
        catalog_path = Path(args.catalog) if args.catalog else None
        if catalog_path is not None and catalog_path.exists():
            catalog = HeavyHitterCatalog.load(catalog_path)
            logger.info(f"Catalog reused from {catalog_path}")
        else:
            catalog = detect_heavy_hitters(store, spec, _threshold(args, config),
                                           config.get("heavy_hitters.workers", 1))
            if catalog_path is not None:
                catalog.save(catalog_path)

    k = args.k
    q = args.q if k is None else None
    if k is None and q is None:
        q = config.get("planner.capacity_q")
    plan = JoinPlanner(config).plan(spec, store, catalog, k=k, q=q, algorithm=args.algorithm)
    for residual in plan.infeasible_residuals:
        logger.warning(f"Residual {residual.label} is infeasible: {residual.note}")

    if args.out:
        plan.save(Path(args.out))
        logger.info(f"Plan written to: {args.out}")
    _emit({
        "total_reducers": plan.total_reducers,
        "predicted_cost": plan.predicted_cost,
        "residuals": plan.summary_rows(),
    }, None, logger)
    return EXIT_OK


def cmd_run(args: argparse.Namespace, config: ConfigManager, logger: logging.Logger) -> int:
    plan = JoinPlan.load(Path(args.plan))
    if args.spec:
        spec = JoinSpec.load(Path(args.spec))
        if spec.relation_names != plan.spec.relation_names:
            raise ConfigurationError("Join spec does not match the plan",
                                     context={"spec": list(spec.relation_names),
                                              "plan": list(plan.spec.relation_names)})
    store = load_store(plan.spec, _data_dir(args, config))
    seed = _master_seed(args, config)
    simulator = ShuffleSimulator.from_config(plan.spec, config)
    _, stats = simulator.run_job(store, plan, HashFamily(seed), compute_output=not args.shuffle_only,
                                 spill_path=Path(args.spill) if args.spill else None)
    if args.csv:
        stats.save_csv(Path(args.csv))
        logger.info(f"Metrics CSV written to: {args.csv}")
    if args.out:
        stats.save_json(Path(args.out))
        logger.info(f"Metrics written to: {args.out}")
    else:
        _emit(stats.to_dict(), None, logger)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, config: ConfigManager, logger: logging.Logger) -> int:
    values = args.k if args.mode == MODE_K else args.capacities
    if not values:
        flag = "--k" if args.mode == MODE_K else "--capacities"
        raise ConfigurationError(f"compare in {args.mode} mode needs {flag}", context={"mode": args.mode})
    spec = JoinSpec.load(Path(args.spec))
    store = load_store(spec, _data_dir(args, config))
    seed = _master_seed(args, config)
    algorithms = tuple(args.algorithms)
    if ALGORITHM_NAIVE in algorithms and (len(spec.relations) != 2 or args.mode == MODE_Q):
        logger.warning("Naive baseline skipped: it needs a 2-way join and a reducer count")
        algorithms = tuple(a for a in algorithms if a != ALGORITHM_NAIVE)
    runner = ExperimentRunner(spec, store, config, _threshold(args, config), HashFamily(seed),
                              compute_output=args.with_output)
    frame = runner.sweep(ExperimentSweep(values=values, algorithms=algorithms, mode=args.mode,
                                         output_path=Path(args.out) if args.out else None))
    if not args.out:
        print(frame.to_csv(index=False), end="")
    return EXIT_OK


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigurationError(f"closed-form {args.form} needs {' '.join(missing)}")


def cmd_closed_form(args: argparse.Namespace, config: ConfigManager, logger: logging.Logger) -> int:
    report: Dict[str, Any] = {"form": args.form, "k": args.k}
    if args.form == "two-way":
        _require(args, "r", "s")
        report.update(lower_bound=two_way_lower_bound(args.r, args.s, args.k),
                      naive=naive_two_way_cost(args.r, args.s, args.k))
    elif args.form == "chain":
        _require(args, "sizes")
        result = chain_arbitrary_cost(args.sizes, args.k)
        report.update(cost=result.cost, shares=result.shares, feasible=result.feasible, method=result.method)
    elif args.form == "chain-equal":
        _require(args, "n", "r")
        allocation = chain_equal_cost(args.n, args.r, args.hh, args.k)
        report.update(cost=allocation.cost, subchain_lengths=allocation.subchain_lengths,
                      k_parts=allocation.k_parts)
    else:
        _require(args, "n", "d", "sizes")
        shares = symmetric_shares(args.n, args.d, args.sizes, args.k)
        report.update(cost=symmetric_cost(args.n, args.d, args.sizes, args.k), shares=shares.shares,
                      feasible=shares.feasible, method=shares.method)
    _emit(report, None, logger)
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace, config: ConfigManager, logger: logging.Logger) -> int:
    spec = JoinSpec.load(Path(args.spec))
    store = load_store(spec, _data_dir(args, config))
    cap = args.cap if args.cap is not None else config.get_oracle_settings().get("result_cap", 10_000_000)
    result = brute_force_join(store, spec, cap)
    logger.info(f"Oracle produced {len(result)} tuple(s)")
    payload = {"attributes": list(result.attributes), "count": len(result)}
    if args.out:
        payload["rows"] = [list(row) for row in result.rows]
    _emit(payload, args.out, logger)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "plan": cmd_plan,
    "run": cmd_run,
    "compare": cmd_compare,
    "closed-form": cmd_closed_form,
    "oracle": cmd_oracle,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    reporter = ErrorReporter()
    try:
        config = get_config(args.config)
        if args.verbose:
            config.set("logging.level", "DEBUG")
            for logger_name in list(logging.root.manager.loggerDict):
                logging.getLogger(logger_name).setLevel(logging.DEBUG)
        logger = setup_logger("SkewWorkbench")
        reporter.logger = logger
        return COMMANDS[args.command](args, config, logger)
    except Exception as exc:
        print(reporter.error_line(exc), file=sys.stderr)
        return reporter.handle(exc)


if __name__ == "__main__":
    raise SystemExit(main())
