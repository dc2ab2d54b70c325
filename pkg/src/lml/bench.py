"""Wall-clock timing of the batched forward and backward passes."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .core import SolverConfig, lml_backward, lml_project

FIELDS = ["n", "k", "pass", "trials", "mean_ns", "p50_ns", "p95_ns"]


@dataclass
class BenchRecord:
    n: int
    k: int
    pass_: str
    trials: int
    mean_ns: int
    p50_ns: int
    p95_ns: int

    def row(self) -> list:
        return [self.n, self.k, self.pass_, self.trials, self.mean_ns, self.p50_ns, self.p95_ns]


def _summarize(n, k, which, samples) -> BenchRecord:
    a = np.asarray(samples, dtype=np.float64)
    return BenchRecord(n, k, which, len(a), int(round(a.mean())),
                       int(round(np.percentile(a, 50))), int(round(np.percentile(a, 95))))


def bench_lml(n_list, k_list, trials: int = 50, batch: int = 256, seed: int = 0,
              cfg: SolverConfig | None = None) -> list:
    """Time one batch of ``batch`` projections (and their backward pass) per trial.

    Inputs are standard normal scores drawn once per ``(n, k)``; one untimed
    warm-up call precedes the trials.
    """
    if trials < 1 or batch < 1:
        raise ValueError("trials and batch must be positive")
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng(seed)
    records = []
    for n in n_list:
        for k in k_list:
            X = rng.normal(size=(batch, n))
            G = rng.normal(size=(batch, n))
            point = lml_project(X, k, cfg)
            lml_backward(point, G)

            fwd = []
            for _ in range(trials):
                t0 = time.perf_counter_ns()
                point = lml_project(X, k, cfg)
                fwd.append(time.perf_counter_ns() - t0)
            bwd = []
            for _ in range(trials):
                t0 = time.perf_counter_ns()
                lml_backward(point, G)
                bwd.append(time.perf_counter_ns() - t0)
            records.append(_summarize(n, k, "forward", fwd))
            records.append(_summarize(n, k, "backward", bwd))
    return records


def write_bench_csv(records, f, parallel: int | None = None) -> None:
    """Write records to an open text file; ``parallel`` adds a ``workers`` column."""
    w = csv.writer(f)
    w.writerow(FIELDS + (["workers"] if parallel else []))
    for r in records:
        w.writerow(r.row() + ([parallel] if parallel else []))
