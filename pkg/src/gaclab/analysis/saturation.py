"""How often tanh squashing kills the gradient.

A pre-squash value ``x`` counts as saturated when ``1 - tanh(x)^2`` falls
below ``threshold``, i.e. when ``|x| > atanh(sqrt(1 - threshold))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gaclab._validation import check_positive, check_probability


@dataclass(frozen=True)
class SaturationReport:
    threshold: float
    mc_fraction: float
    analytic_fraction: float | None
    n: int
    source: str

    def mc_sigma(self):
        """Binomial standard error of ``mc_fraction`` around the analytic value."""
        p = self.analytic_fraction if self.analytic_fraction is not None else self.mc_fraction
        return math.sqrt(p * (1.0 - p) / self.n)


def saturation_cutoff(threshold):
    """``|x|`` beyond which ``1 - tanh(x)^2 < threshold``."""
    threshold = check_probability(threshold, "threshold")
    return math.atanh(math.sqrt(1.0 - threshold))


def _norm_cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def analytic_saturation_fraction(mean, std, threshold):
    """``P(|x| > cutoff)`` for ``x ~ Normal(mean, std)``."""
    c = saturation_cutoff(threshold)
    std = check_positive(std, "std")
    return _norm_cdf((-c - mean) / std) + _norm_cdf((mean - c) / std)


def saturated(x, threshold):
    x = np.asarray(x, dtype=np.float64)
    return 1.0 - np.tanh(x) ** 2 < threshold


def tanh_saturation(mean, std, threshold, n, rng):
    """Monte Carlo and closed-form saturated fraction for a Gaussian input."""
    analytic = analytic_saturation_fraction(mean, std, threshold)
    x = rng.normal(mean, std, size=int(n))
    return SaturationReport(float(threshold), float(saturated(x, threshold).mean()), analytic,
                            int(n), f"synthetic({mean:g},{std:g})")


def policy_saturation(pre_squash_log, threshold):
    """Saturated fraction over every logged pre-squash component."""
    check_probability(threshold, "threshold")
    x = np.asarray(pre_squash_log, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("pre-squash log is empty")
    return SaturationReport(float(threshold), float(saturated(x, threshold).mean()), None,
                            int(x.size), "policy-log")
