"""Replicated runs of the exact samplers with per-replication random streams."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dcfp import sample_stationary_kw
from ..distributions import ModelSpec, drift_constant_at, model_from_config
from ..errors import ExactQueueError, InsufficientData
from ..extensions import HarrisConfig, harris_sample_c2
from ..rng import Streams
from ..sandwich import sample_stationary_sandwich
from .oracles import mean_ci

ALGORITHMS = ("empty-ra", "sandwich", "harris")

# pilot runs use replication indices far above any real experiment
PILOT_OFFSET = 1 << 40


@dataclass
class ExperimentConfig:
    model: dict
    algorithm: str = "empty-ra"
    n: int = 1000
    seed: int = 0
    workers: int = 1
    out: str | None = None
    kappa0: int = 16
    budget: int | None = None
    mode: str = "envelope"
    a: float | None = None
    truncate: float | str | None = None
    eps: float | None = None
    timing: bool = False
    first_replication: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.n < 1:
            raise ValueError("sample count must be at least 1")
        if self.workers < 1:
            raise ValueError("need at least one worker")


def draw_one(model: ModelSpec, cfg: ExperimentConfig, replication: int):
    """One exact sample for ``replication``; returns the SampleRecord."""
    streams = Streams.from_seed(cfg.seed, replication)
    if cfg.algorithm == "empty-ra":
        _, rec, _ = sample_stationary_kw(model, streams, mode=cfg.mode, a=cfg.a, truncate=cfg.truncate,
                                         budget=cfg.budget, seed=cfg.seed)
    elif cfg.algorithm == "sandwich":
        rec = sample_stationary_sandwich(model, streams, kappa0=cfg.kappa0, mode=cfg.mode, a=cfg.a,
                                         truncate=cfg.truncate, budget=cfg.budget, seed=cfg.seed).record
    else:
        _, rec, _ = harris_sample_c2(model, HarrisConfig(cfg.eps), streams, seed=cfg.seed,
                                     budget=cfg.budget, a=cfg.a)
    return rec


def _run_chunk(args):
    cfg, reps = args
    model = model_from_config(cfg.model)
    out = []
    for r in reps:
        try:
            rec = draw_one(model, cfg, r).to_json()
        except ExactQueueError as exc:
            rec = {"seed": cfg.seed, "algorithm": cfg.algorithm, "error": type(exc).__name__,
                   "message": str(exc)}
        rec["replication"] = int(r)
        if not cfg.timing and "runtime_ms" in rec:
            rec["runtime_ms"] = None
        out.append(rec)
    return out


@dataclass
class Report:
    config: ExperimentConfig
    records: list
    summary: dict = field(default_factory=dict)
    tests: dict = field(default_factory=dict)

    @property
    def ok(self) -> list:
        return [r for r in self.records if "error" not in r]

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.ok], dtype=float)

    def table_row(self, metric: str = "backward_arrivals") -> dict:
        m = model_from_config(self.config.model)
        mean, half = mean_ci(self.column(metric))
        return {"lambda": m.arrival_rate, "rho": m.rho / m.servers, "algorithm": self.config.algorithm,
                "mean_backward_arrivals": mean, "ci_halfwidth": half, "n": len(self.ok)}


def summarize(records: list) -> dict:
    ok = [r for r in records if "error" not in r]
    out = {"n": len(records), "errors": len(records) - len(ok)}
    if not ok:
        return out
    for key in ("Q0", "N", "backward_arrivals"):
        x = np.array([r[key] for r in ok], dtype=float)
        try:
            out[key] = mean_ci(x)
        except InsufficientData:
            out[key] = (float(x.mean()), math.nan)
    W = np.array([r["W0"] for r in ok], dtype=float)
    out["W0_mean"] = W.mean(axis=0).tolist()
    rt = [r["runtime_ms"] for r in ok if r.get("runtime_ms") is not None]
    if rt:
        out["runtime_ms"] = float(np.mean(rt))
    return out


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Run ``cfg.n`` replications and write JSON-lines records if ``cfg.out`` is set.

    Replication ``r`` always draws from the streams keyed by ``(seed, r)``, so
    the records do not depend on the worker count.  Sampler errors are kept as
    error records.
    """
    reps = np.arange(cfg.first_replication, cfg.first_replication + cfg.n)
    if cfg.workers == 1:
        records = _run_chunk((cfg, reps))
    else:
        chunks = [(cfg, part) for part in np.array_split(reps, cfg.workers * 4) if part.size]
        with ProcessPoolExecutor(cfg.workers) as pool:
            records = [rec for part in pool.map(_run_chunk, chunks) for rec in part]
    records.sort(key=lambda r: r["replication"])
    report = Report(cfg, records, summarize(records))
    if cfg.out:
        write_records(records, cfg.out)
    return report


def write_records(records: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_summary_csv(rows: list, path) -> None:
    cols = ["lambda", "rho", "algorithm", "mean_backward_arrivals", "ci_halfwidth", "n"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def write_plot_csv(samples, pmf, path) -> None:
    """Empirical frequency next to the reference pmf, one row per integer bin."""
    x = np.asarray(samples, dtype=np.int64)
    K = max(len(pmf) - 1, int(x.max()))
    freq = np.bincount(x, minlength=K + 1) / x.size
    ref = np.zeros(K + 1)
    ref[: len(pmf)] = pmf
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "empirical_freq", "analytic_pmf"])
        for k in range(K + 1):
            w.writerow([k, freq[k], ref[k]])


def tune_drift_constant(cfg: ExperimentConfig, fractions=(0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5),
                        pilot: int = 100, metric: str = "backward_arrivals") -> tuple[float, dict]:
    """Pick the drift constant with the smallest mean ``metric`` over pilot runs.

    Pilot runs use replication indices disjoint from any experiment, so the
    choice does not reuse the randomness of the runs it is applied to.
    """
    model = model_from_config(cfg.model)
    costs = {}
    for frac in fractions:
        a = drift_constant_at(model, frac)
        pc = ExperimentConfig(**{**asdict(cfg), "a": a, "n": pilot, "out": None,
                                 "first_replication": PILOT_OFFSET})
        rep = run_experiment(pc)
        costs[float(frac)] = float(rep.column(metric).mean()) if rep.ok else math.inf
    best = min(costs, key=costs.get)
    return drift_constant_at(model, best), costs
