"""End-to-end experiment harness and report rendering.

One experiment fixes a base instance, trains one model per mode on
datasets generated from it, and then sweeps scenario-set sizes: for every
size it solves the extensive form under a time limit (capturing the
incumbent trajectory) plus each surrogate, prices all first-stage
solutions exactly on the same scenarios, and persists the raw outcome
before any aggregation.  Reports are pure views over those raw files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import problems as problems_mod
from .datagen import (DatagenConfig, generate_dataset, load_mc_dataset,
                      load_sc_dataset)
from .milp import SolveParams, solve
from .nn_core import TrainedNetwork
from .problems import TwoStageProblem
from .scenario_embedding import SingleCutNet
from .surrogate import (SurrogateSpec, solve_and_evaluate, time_to_match)
from .training import (LinearModel, default_space, random_search,
                       train_linear_baseline, write_leaderboard)

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    problem: str = "cflp"
    problem_params: dict = field(default_factory=dict)  # sizes, generator seed
    scenario_counts: list[int] = field(default_factory=lambda: [100, 500])
    scenario_seed: int = 7
    modes: list[str] = field(default_factory=lambda: ["sc", "mc", "lr"])
    mc_samples: int = 10000
    sc_samples: int = 5000
    k_prime_max: int = 100
    n_configs: int = 25
    mc_epochs: int | None = None
    sc_epochs: int | None = None
    ef_time_limit: float = 600.0
    surrogate_time_limit: float = 600.0
    seed: int = 0
    workers: int = 1
    out_dir: str = "experiment_out"

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _ensure_instance(config: ExperimentConfig, out: Path) -> TwoStageProblem:
    path = out / "instance.json"
    if path.exists():
        return problems_mod.load(path)
    instance = problems_mod.generate_instance(
        config.problem, seed=config.problem_params.get("seed", config.seed),
        **{k: v for k, v in config.problem_params.items() if k != "seed"})
    instance.save(path)
    return instance


def _ensure_dataset(config: ExperimentConfig, instance, mode: str, out: Path) -> Path:
    path = out / f"data_{mode}.jsonl"
    if path.exists():
        return path
    n = config.mc_samples if mode == "mc" else config.sc_samples
    log.info("generating %s dataset (%d samples)", mode, n)
    stats = generate_dataset(instance, DatagenConfig(
        mode, n, config.k_prime_max, base_seed=config.seed,
        workers=config.workers), path)
    if stats.skipped:
        log.warning("%d samples skipped during datagen", stats.skipped)
    return path


def _ensure_model(config: ExperimentConfig, instance, mode: str, out: Path):
    path = out / f"model_{mode}.json"
    loaders = {"mc": TrainedNetwork, "sc": SingleCutNet, "lr": LinearModel}
    if path.exists():
        return loaders[mode].load(path), path
    data_path = _ensure_dataset(config, instance, "mc" if mode == "lr" else mode, out)
    log.info("training %s model", mode)
    if mode == "lr":
        x, y = load_mc_dataset(data_path)
        model = train_linear_baseline(x, y)
    elif mode == "mc":
        dataset = load_mc_dataset(data_path)
        space = default_space("mc", epochs=config.mc_epochs)
        model, board = random_search(dataset, space, config.n_configs,
                                     seed=config.seed, workers=config.workers)
        write_leaderboard(out / "leaderboard_mc.csv", board)
    else:
        dataset = load_sc_dataset(data_path)
        space = default_space("sc", epochs=config.sc_epochs)
        model, board = random_search(dataset, space, config.n_configs,
                                     seed=config.seed, workers=config.workers)
        write_leaderboard(out / "leaderboard_sc.csv", board)
    model.save(path)
    return model, path


def _model_hash(path: Path) -> str:
    import hashlib
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def solve_ef(instance: TwoStageProblem, scen_set, time_limit: float,
             seed: int = 0) -> dict:
    model = instance.build_ef(scen_set)
    result = solve(model, SolveParams(time_limit=time_limit, seed=seed))
    return {"status": result.status, "objective": result.objective,
            "wall_time": result.wall_time, "mip_gap": result.mip_gap,
            "incumbents": [list(p) for p in result.incumbents],
            "columns": model.n_variables, "rows": model.n_constraints,
            "binaries": model.n_binaries}


def run_experiment(config: ExperimentConfig) -> Path:
    """Run the full pipeline; returns the directory with raw + report files."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    instance = _ensure_instance(config, out)
    problem_id = getattr(instance, "problem_id", instance.name)

    models = {}
    hashes = {}
    for mode in config.modes:
        if mode == "ef":
            continue
        models[mode], model_path = _ensure_model(config, instance, mode, out)
        hashes[mode] = _model_hash(model_path)

    rows = []
    for k in config.scenario_counts:
        scen_set = instance.sample_scenarios(k, config.scenario_seed)
        log.info("solving EF for %s, K=%d", problem_id, k)
        ef = solve_ef(instance, scen_set, config.ef_time_limit, config.seed)
        raw = {"problem": problem_id, "k": k,
               "instance_hash": instance.instance_hash(),
               "scenario_seed": config.scenario_seed, "ef": ef, "methods": {}}
        for mode in config.modes:
            if mode == "ef":
                continue
            log.info("solving %s surrogate for K=%d", mode, k)
            spec = SurrogateSpec(mode, models[mode], instance, scen_set,
                                 SolveParams(time_limit=config.surrogate_time_limit,
                                             seed=config.seed))
            res = solve_and_evaluate(spec, workers=config.workers)
            entry = res.to_dict()
            entry["model_hash"] = hashes[mode]
            matched = time_to_match(ef["incumbents"], res.true_objective)
            entry["ef_time_to_match"] = matched if matched is not None \
                else ef["wall_time"]
            entry["ef_match_failed"] = matched is None
            raw["methods"][mode] = entry
        raw_path = out / f"raw_{problem_id}_{k}.json"
        raw_path.write_text(json.dumps(raw, indent=1))
        rows.append(raw)

    report_rows = [report_row(raw) for raw in rows]
    (out / "report.json").write_text(json.dumps(report_rows, indent=1))
    write_report_csv(out / "report.csv", report_rows)
    (out / "report.txt").write_text(render_report(report_rows))
    (out / "config.json").write_text(json.dumps(asdict(config), indent=1))
    return out


def report_row(raw: dict) -> dict:
    """Flatten one raw result into the reporting schema.

    Objective difference is 100 * (method_true - ef_true) / |ef_true| for
    minimization: negative means the method beat the time-limited EF.
    """
    ef_obj = raw["ef"].get("objective")
    row = {"problem": f"{raw['problem']}_{raw['k']}",
           "ef_objective": ef_obj,
           "ef_time": raw["ef"]["wall_time"],
           "ef_status": raw["ef"]["status"]}
    for mode, entry in raw["methods"].items():
        prefix = mode
        true_obj = entry["true_objective"]
        row[f"{prefix}_true_objective"] = true_obj
        row[f"{prefix}_surrogate_objective"] = entry["surrogate_objective"]
        row[f"{prefix}_time"] = entry["wall_time"]
        if ef_obj is not None:
            row[f"{prefix}_obj_diff_pct"] = 100.0 * (true_obj - ef_obj) / abs(ef_obj)
        else:
            row[f"{prefix}_obj_diff_pct"] = None
        row[f"{prefix}_ef_time_to"] = entry["ef_time_to_match"]
        row[f"{prefix}_ef_match_failed"] = entry["ef_match_failed"]
        row[f"{prefix}_model_hash"] = entry["model_hash"]
    return row


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def write_report_csv(path, rows: list[dict]) -> None:
    import csv
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("-" if row.get(k) is None else row.get(k))
                             for k in keys})


def render_report(rows: list[dict]) -> str:
    """Aligned text table, grouped by problem class, '-' for missing cells."""
    if not rows:
        raise ValueError("no result rows to report")
    modes = sorted({key.split("_")[0] for key in rows[0]
                    if key.endswith("_true_objective")})
    headers = ["problem"]
    for mode in modes:
        headers += [f"{mode}_diff_pct", f"{mode}_time", f"{mode}_ef_time_to"]
    headers += ["ef_objective", "ef_time"]

    def sort_key(row):
        return row["problem"]

    lines = []
    for row in sorted(rows, key=sort_key):
        cells = [row["problem"]]
        for mode in modes:
            cells.append(_fmt(row.get(f"{mode}_obj_diff_pct")))
            cells.append(_fmt(row.get(f"{mode}_time")))
            to = row.get(f"{mode}_ef_time_to")
            failed = row.get(f"{mode}_ef_match_failed")
            cells.append("-" if to is None else
                         f"{_fmt(to)}{' (fail)' if failed else ''}")
        cells.append(_fmt(row.get("ef_objective")))
        cells.append(_fmt(row.get("ef_time")))
        lines.append(cells)

    widths = [max(len(h), *(len(line[i]) for line in lines))
              for i, h in enumerate(headers)]
    def render_line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    text = [render_line(headers), render_line(["-" * w for w in widths])]
    text += [render_line(line) for line in lines]
    return "\n".join(text) + "\n"


def load_report_rows(paths) -> list[dict]:
    rows = []
    for path in paths:
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict) or "methods" not in data:
            raise ValueError(f"{path}: not a raw experiment result file")
        rows.append(report_row(data))
    return rows
