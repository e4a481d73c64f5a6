"""Labeled-sample generation for value-function learning.

Each sample pairs a random feasible first-stage decision with uncertainty:
a single scenario labeled by the second-stage optimum (multi-cut mode), or
a random-cardinality scenario set labeled by the probability-weighted mean
of per-scenario optima (single-cut mode).  Sample i is a pure function of
(base_seed, i), so the dataset content does not depend on worker count or
scheduling.  Samples whose subproblem solve fails are skipped and logged.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .problems import SecondStageError, TwoStageProblem

log = logging.getLogger(__name__)


@dataclass
class DatagenConfig:
    mode: str  # "mc" | "sc"
    n_samples: int
    k_prime_max: int = 100
    base_seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if self.mode not in ("mc", "sc"):
            raise ValueError(f"mode must be 'mc' or 'sc', got {self.mode!r}")
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if self.k_prime_max < 1:
            raise ValueError("k_prime_max must be >= 1")


@dataclass
class DatagenStats:
    requested: int
    written: int
    skipped: int
    path: str


def sample_record(problem: TwoStageProblem, mode: str, base_seed: int,
                  index: int, k_prime_max: int = 100) -> dict | None:
    """Build sample ``index`` deterministically; None if labeling failed."""
    rng = np.random.default_rng([base_seed, index])
    x = problem.sample_first_stage(rng)
    try:
        if mode == "mc":
            xi = problem.sample_scenario(rng)
            return {"x": x.tolist(), "xi": xi.tolist(),
                    "y": problem.second_stage_value(x, xi)}
        k = int(rng.integers(1, k_prime_max + 1))
        xis = np.stack([problem.sample_scenario(rng) for _ in range(k)])
        probs = np.full(k, 1.0 / k)
        values = [problem.second_stage_value(x, xis[j]) for j in range(k)]
        return {"x": x.tolist(), "xis": xis.tolist(), "p": probs.tolist(),
                "y": float(probs @ np.array(values))}
    except SecondStageError as exc:
        log.warning("sample %d skipped: %s", index, exc)
        return None


def _record_job(job) -> dict | None:
    problem, mode, base_seed, index, k_prime_max = job
    return sample_record(problem, mode, base_seed, index, k_prime_max)


def generate_dataset(problem: TwoStageProblem, config: DatagenConfig,
                     out_path) -> DatagenStats:
    """Write a JSONL dataset; embarrassingly parallel over samples."""
    config.validate()
    jobs = [(problem, config.mode, config.base_seed, i, config.k_prime_max)
            for i in range(config.n_samples)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(_record_job, jobs, chunksize=16))
    else:
        records = [_record_job(job) for job in jobs]

    written = 0
    with open(out_path, "w") as fh:
        for record in records:
            if record is None:
                continue
            fh.write(json.dumps(record) + "\n")
            written += 1
    skipped = config.n_samples - written
    if skipped:
        log.warning("%d/%d samples skipped", skipped, config.n_samples)
    return DatagenStats(config.n_samples, written, skipped, str(out_path))


def load_mc_dataset(path):
    """Return (features, labels) with features = [x, xi] per row."""
    xs, ys = [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            xs.append(np.concatenate([rec["x"], rec["xi"]]))
            ys.append(rec["y"])
    if not xs:
        raise ValueError(f"dataset {path} is empty")
    return np.stack(xs), np.asarray(ys, dtype=float)


def load_sc_dataset(path):
    """Return a list of (x, scenarios, probs, label) tuples."""
    samples = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            samples.append((np.asarray(rec["x"], dtype=float),
                            np.atleast_2d(np.asarray(rec["xis"], dtype=float)),
                            np.asarray(rec["p"], dtype=float), float(rec["y"])))
    if not samples:
        raise ValueError(f"dataset {path} is empty")
    return samples
