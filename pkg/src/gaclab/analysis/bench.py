"""Per-sample cost of spherical mixing versus vMF rejection sampling."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from gaclab.analysis.vmf import vmf_sample, vmf_sample_batch
from gaclab.geometry import mixing_weight, normalize, sample_action, sample_uniform_sphere

MODES = ("single", "batched")


@dataclass(frozen=True)
class BenchRow:
    sampler: str
    mode: str
    d: int
    kappa: float
    n: int
    time_per_sample: float
    rejections_per_sample: float
    mean_resultant: float


def _median_time(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def _gac_single(mu, kappa, d, n, rng):
    acc = np.zeros(d)
    for _ in range(n):
        acc += sample_action(mu, kappa, 1.0, rng)
    return acc, 0


def _gac_batched(mu, kappa, d, n, rng):
    xi = sample_uniform_sphere(d, rng, size=n)
    w = mixing_weight(kappa)
    a = normalize(w * mu + (1.0 - w) * xi)
    return a.sum(axis=0), 0


def _vmf_single(mu, kappa, d, n, rng):
    acc = np.zeros(d)
    rej = 0
    for _ in range(n):
        x, r = vmf_sample(mu, kappa, d, rng)
        acc += x
        rej += r
    return acc, rej


def _vmf_batched(mu, kappa, d, n, rng):
    x, rej = vmf_sample_batch(mu, kappa, d, n, rng)
    return x.sum(axis=0), rej


_SAMPLERS = {
    ("gac", "single"): _gac_single,
    ("gac", "batched"): _gac_batched,
    ("vmf", "single"): _vmf_single,
    ("vmf", "batched"): _vmf_batched,
}


def bench_sampling(d, kappas, n, rng, modes=MODES, repeats=5):
    """Time ``n`` draws per sampler, mode and kappa; median of ``repeats`` runs.

    For GAC the ``kappa`` column is the concentration score fed to the
    sigmoid; for vMF it is the vMF concentration. ``single`` calls the
    one-sample API in a Python loop, ``batched`` draws all ``n`` at once.
    """
    mu = np.zeros(d)
    mu[0] = 1.0
    rows = []
    for mode in modes:
        for kappa in kappas:
            for sampler in ("gac", "vmf"):
                fn = _SAMPLERS[(sampler, mode)]
                t, (acc, rej) = _median_time(lambda: fn(mu, float(kappa), d, n, rng), repeats)
                rows.append(BenchRow(sampler, mode, int(d), float(kappa), int(n), t / n,
                                     rej / n, float(np.linalg.norm(acc / n))))
    return rows
