"""Wall-time benchmark of the selective scan across sequence lengths.

Used by the ``bench-scan`` CLI subcommand and the linear-scaling acceptance
check: doubling the sequence length should roughly double the median time on
every backend.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from . import scan
from .tensor import Tensor


def bench_scan(
    lengths=(512, 1024, 2048, 4096),
    channels: int = 64,
    state_dim: int = 16,
    trials: int = 10,
    backends=None,
    seed: int = 0,
) -> list[dict]:
    """Median forward wall time per (backend, length); one warmup per cell."""
    backends = list(backends) if backends else scan.available_backends()
    rng = np.random.default_rng(seed)
    rows = []
    previous = scan.get_backend()
    try:
        for backend in backends:
            scan.set_backend(backend)
            for length in lengths:
                u = Tensor(rng.normal(size=(1, length, channels)))
                dt = Tensor(rng.uniform(0.01, 0.2, size=(1, length, channels)))
                b = Tensor(rng.normal(size=(1, length, state_dim)))
                c = Tensor(rng.normal(size=(1, length, state_dim)))
                a = Tensor(-rng.uniform(0.5, 4.0, size=(channels, state_dim)))
                d = Tensor(rng.normal(size=channels))
                scan.selective_scan(u, dt, b, c, a, d)  # warmup
                times = []
                for _ in range(trials):
                    t0 = time.perf_counter()
                    scan.selective_scan(u, dt, b, c, a, d)
                    times.append(time.perf_counter() - t0)
                rows.append(
                    {
                        "backend": backend,
                        "length": length,
                        "channels": channels,
                        "state_dim": state_dim,
                        "trials": trials,
                        "median_ms": 1e3 * float(np.median(times)),
                        "min_ms": 1e3 * float(np.min(times)),
                    }
                )
    finally:
        scan.set_backend(previous)
    return rows


def scaling_ratio(rows: list[dict], backend: str, short: int, long: int) -> float:
    by_len = {r["length"]: r["median_ms"] for r in rows if r["backend"] == backend}
    return by_len[long] / by_len[short]


def write_csv(path, rows: list[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
