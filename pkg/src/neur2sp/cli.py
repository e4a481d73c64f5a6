"""Command-line entry point tying the pipeline together.

Subcommands mirror the pipeline stages: gen-instance, gen-data, train,
solve, solve-ef, eval, report, and run (the whole experiment from a TOML
config).  The MILP backend can be overridden with the NEUR2SP_SOLVER
environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import problems as problems_mod
from .datagen import DatagenConfig, generate_dataset, load_mc_dataset, load_sc_dataset
from .experiment import (ExperimentConfig, load_report_rows, render_report,
                         run_experiment, solve_ef, write_report_csv)
from .milp import SolveParams
from .nn_core import TrainedNetwork
from .scenario_embedding import SingleCutNet
from .surrogate import SurrogateSpec, solve_and_evaluate
from .training import (LinearModel, default_space, random_search,
                       train_linear_baseline, write_leaderboard)


def _add_gen_instance(sub, common):
    p = sub.add_parser("gen-instance", parents=[common], help="generate a problem instance file")
    p.add_argument("--problem", required=True, choices=["cflp", "sslp", "invp"])
    p.add_argument("--size", default=None,
                   help="cflp: facilities,customers; sslp: servers,clients")
    p.add_argument("--variant", default="B_E", help="invp variant, e.g. B_E")
    p.add_argument("--ratio", type=float, default=None,
                   help="cflp capacity/demand ratio (default 2.0)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_instance)


def cmd_gen_instance(args) -> int:
    params = {}
    if args.problem in ("cflp", "sslp"):
        if not args.size:
            raise SystemExit("--size is required for cflp/sslp")
        a, b = (int(v) for v in args.size.split(","))
        if args.problem == "cflp":
            params = {"n_facilities": a, "n_customers": b}
            if args.ratio is not None:
                params["ratio"] = args.ratio
        else:
            params = {"n_servers": a, "m_clients": b}
    else:
        params = {"variant": args.variant}
    instance = problems_mod.generate_instance(args.problem, seed=args.seed, **params)
    instance.save(args.out)
    print(f"wrote {args.out} ({getattr(instance, 'problem_id', args.problem)})")
    return 0


def _add_gen_data(sub, common):
    p = sub.add_parser("gen-data", parents=[common], help="generate a labeled dataset (JSONL)")
    p.add_argument("--instance", required=True)
    p.add_argument("--mode", required=True, choices=["mc", "sc"])
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--kprime-max", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)


def cmd_gen_data(args) -> int:
    instance = problems_mod.load(args.instance)
    stats = generate_dataset(instance, DatagenConfig(
        args.mode, args.samples, args.kprime_max, args.seed, args.workers),
        args.out)
    print(f"wrote {stats.written}/{stats.requested} samples to {stats.path}"
          + (f" ({stats.skipped} skipped)" if stats.skipped else ""))
    return 0


def _add_train(sub, common):
    p = sub.add_parser("train", parents=[common], help="random-search train a model on a dataset")
    p.add_argument("--mode", required=True, choices=["mc", "sc", "lr"])
    p.add_argument("--data", required=True)
    p.add_argument("--configs", type=int, default=100)
    p.add_argument("--epochs", type=int, default=None,
                   help="override the search-space epoch count")
    p.add_argument("--out", required=True)
    p.add_argument("--leaderboard", default=None)
    p.set_defaults(func=cmd_train)


def cmd_train(args) -> int:
    if args.mode == "lr":
        x, y = load_mc_dataset(args.data)
        model = train_linear_baseline(x, y)
        model.save(args.out)
        print(f"wrote {args.out} (train MAE "
              f"{float(np.mean(np.abs(model.predict(x) - y))):.4f})")
        return 0
    dataset = load_mc_dataset(args.data) if args.mode == "mc" \
        else load_sc_dataset(args.data)
    space = default_space(args.mode, epochs=args.epochs)
    model, board = random_search(dataset, space, args.configs,
                                 seed=args.seed, workers=args.workers)
    model.save(args.out)
    if args.leaderboard:
        write_leaderboard(args.leaderboard, board)
    print(f"wrote {args.out} (val MAE {model.meta['val_mae']:.4f}, "
          f"config {model.meta['config_id']})")
    return 0


def _add_solve(sub, common):
    p = sub.add_parser("solve", parents=[common], help="build + solve a surrogate, price it exactly")
    p.add_argument("--mode", required=True, choices=["sc", "mc", "lr"])
    p.add_argument("--model", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--scenarios", type=int, required=True)
    p.add_argument("--scenario-seed", type=int, default=7)
    p.add_argument("--time-limit", type=float, default=600.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve)


def _load_model(mode: str, path):
    loaders = {"mc": TrainedNetwork, "sc": SingleCutNet, "lr": LinearModel}
    return loaders[mode].load(path)


def cmd_solve(args) -> int:
    instance = problems_mod.load(args.instance)
    scen_set = instance.sample_scenarios(args.scenarios, args.scenario_seed)
    spec = SurrogateSpec(args.mode, _load_model(args.mode, args.model), instance,
                         scen_set, SolveParams(time_limit=args.time_limit,
                                               seed=args.seed))
    result = solve_and_evaluate(spec, workers=args.workers)
    payload = result.to_dict()
    payload.update({"problem": getattr(instance, "problem_id", instance.name),
                    "k": args.scenarios, "scenario_seed": args.scenario_seed})
    text = json.dumps(payload, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _add_solve_ef(sub, common):
    p = sub.add_parser("solve-ef", parents=[common], help="solve the extensive form under a time limit")
    p.add_argument("--instance", required=True)
    p.add_argument("--scenarios", type=int, required=True)
    p.add_argument("--scenario-seed", type=int, default=7)
    p.add_argument("--time-limit", type=float, default=600.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve_ef)


def cmd_solve_ef(args) -> int:
    instance = problems_mod.load(args.instance)
    scen_set = instance.sample_scenarios(args.scenarios, args.scenario_seed)
    payload = solve_ef(instance, scen_set, args.time_limit, args.seed)
    payload.update({"problem": getattr(instance, "problem_id", instance.name),
                    "k": args.scenarios, "scenario_seed": args.scenario_seed})
    text = json.dumps(payload, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _add_eval(sub, common):
    p = sub.add_parser("eval", parents=[common], help="price a first-stage vector on a scenario set")
    p.add_argument("--instance", required=True)
    p.add_argument("--x", required=True, help="comma-separated first-stage vector")
    p.add_argument("--scenarios", type=int, required=True)
    p.add_argument("--scenario-seed", type=int, default=7)
    p.set_defaults(func=cmd_eval)


def cmd_eval(args) -> int:
    instance = problems_mod.load(args.instance)
    x = np.array([float(v) for v in args.x.split(",")])
    if not instance.check_first_stage(x):
        raise SystemExit("x is not feasible for the instance's first stage")
    scen_set = instance.sample_scenarios(args.scenarios, args.scenario_seed)
    value = instance.evaluate_true_objective(x, scen_set, workers=args.workers)
    print(f"{value:.6f}")
    return 0


def _add_report(sub, common):
    p = sub.add_parser("report", parents=[common], help="render raw result JSONs into a table")
    p.add_argument("results", nargs="+")
    p.add_argument("--out-prefix", default=None,
                   help="also write <prefix>.csv and <prefix>.txt")
    p.set_defaults(func=cmd_report)


def cmd_report(args) -> int:
    rows = load_report_rows(args.results)
    text = render_report(rows)
    if args.out_prefix:
        write_report_csv(args.out_prefix + ".csv", rows)
        Path(args.out_prefix + ".txt").write_text(text)
    print(text, end="")
    return 0


def _add_run(sub, common):
    p = sub.add_parser("run", parents=[common], help="run a full experiment from a TOML config")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_run)


def cmd_run(args) -> int:
    if not args.config:
        raise SystemExit("run requires --config pointing at a TOML file")
    config = ExperimentConfig.from_toml(args.config)
    if args.out_dir:
        config.out_dir = args.out_dir
    if args.workers != 1:
        config.workers = args.workers
    out = run_experiment(config)
    print(f"experiment artifacts in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML experiment config")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(
        prog="neur2sp",
        description="learned second-stage surrogates for two-stage programs")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_gen_instance, _add_gen_data, _add_train, _add_solve,
                _add_solve_ef, _add_eval, _add_report, _add_run):
        add(sub, common)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
