"""von Mises-Fisher reference tools: Bessel functions, sampling, entropy.

Only used as an oracle and benchmark for spherical mixing. Bessel values are
computed in log space so large concentrations never overflow.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from gaclab._validation import check_dimension
from gaclab.geometry import normalize, random_unit, sample_uniform_sphere

SERIES_CUTOFF = 20.0
KAPPA_LIMIT = 1e6


def _check_kappa(kappa, allow_zero=False):
    kappa = float(kappa)
    if not math.isfinite(kappa) or kappa > KAPPA_LIMIT:
        raise OverflowError(f"kappa={kappa} is outside the supported range (0, {KAPPA_LIMIT:g}]")
    if kappa < 0 or (kappa == 0 and not allow_zero):
        raise ValueError(f"kappa must be {'>= 0' if allow_zero else '> 0'}, got {kappa}")
    return kappa


def bessel_ratio(nu, x, tol=1e-16, max_iter=1_000_000):
    """``I_{nu+1}(x) / I_nu(x)`` from the continued fraction (modified Lentz).

    Never forms either Bessel value, so it is safe for any ``x > 0``.
    """
    if x <= 0:
        raise ValueError("x must be positive")
    tiny = 1e-300
    f = c = tiny
    d = 0.0
    for j in range(1, max_iter):
        b = 2.0 * (nu + j) / x
        d = b + d
        d = 1.0 / (d if d != 0 else tiny)
        c = b + 1.0 / c
        c = c if c != 0 else tiny
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < tol:
            return f
    raise RuntimeError(f"continued fraction did not converge for nu={nu}, x={x}")


def _log_iv_series(nu, x):
    # terms peak near k ~ x/2; 60 + 2x terms leave a negligible tail for x < 20
    k = np.arange(0, int(60 + 2 * x))
    lg = np.array([math.lgamma(kk + 1) + math.lgamma(kk + nu + 1) for kk in k])
    terms = (2 * k + nu) * math.log(x / 2.0) - lg
    top = terms.max()
    return float(top + math.log(np.exp(terms - top).sum()))


def _log_iv_hankel(nu, x):
    """Large-argument expansion, accurate for x >= 20 and 0 <= nu < 1."""
    mu = 4.0 * nu * nu
    total, term = 1.0, 1.0
    for k in range(1, 60):
        nxt = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(nxt) >= abs(term):
            break
        term = nxt
        total += term
        if abs(term) < 1e-17 * abs(total):
            break
    return x - 0.5 * math.log(2.0 * math.pi * x) + math.log(total)


def log_bessel_iv(nu, x):
    """``log I_nu(x)`` for ``nu >= 0`` and ``x > 0``.

    Power series in log space below ``x = 20``; above it, the large-argument
    expansion at the fractional order followed by upward recurrence on
    continued-fraction ratios.
    """
    if nu < 0:
        raise ValueError("nu must be >= 0")
    x = _check_kappa(x)
    if x < SERIES_CUTOFF:
        return _log_iv_series(nu, x)
    base = nu - math.floor(nu)
    out = _log_iv_hankel(base, x)
    order = base
    while order < nu - 1e-12:
        out += math.log(bessel_ratio(order, x))
        order += 1.0
    return out


def mean_resultant_length(kappa, d):
    """``A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa)``; zero at ``kappa = 0``."""
    d = check_dimension(d)
    kappa = _check_kappa(kappa, allow_zero=True)
    if kappa == 0:
        return 0.0
    return bessel_ratio(d / 2.0 - 1.0, kappa)


def log_normalizer(kappa, d):
    """``log C_d(kappa)`` with ``C_d = kappa^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(kappa))``."""
    d = check_dimension(d)
    kappa = _check_kappa(kappa)
    nu = d / 2.0 - 1.0
    return nu * math.log(kappa) - (d / 2.0) * math.log(2.0 * math.pi) - log_bessel_iv(nu, kappa)


def vmf_entropy(kappa, d):
    """Differential entropy ``-log C_d(kappa) - kappa * A_d(kappa)`` (nats)."""
    return -log_normalizer(kappa, d) - kappa * mean_resultant_length(kappa, d)


def vmf_entropy_asymptotic(kappa, d, kappa_ref=20.0):
    """Large-concentration form ``-kappa + (d-1)/2 log kappa + c``.

    The constant ``c`` is chosen so the form equals :func:`vmf_entropy` at
    ``kappa_ref``.
    """
    def shape(k):
        return -k + 0.5 * (d - 1) * math.log(k)

    const = vmf_entropy(kappa_ref, d) - shape(kappa_ref)
    return shape(_check_kappa(kappa)) + const


def _wood_constants(kappa, d):
    m = d - 1
    # b written to avoid cancellation at large kappa
    b = m / (2.0 * kappa + math.sqrt(4.0 * kappa**2 + m**2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m * math.log(1.0 - x0**2)
    return m, b, x0, c


def _householder_to(mu, x):
    """Apply the reflection mapping e1 to ``mu`` on the rows of ``x``."""
    u = -mu.copy()
    u[0] += 1.0
    nu2 = float(u @ u)
    if nu2 < 1e-24:
        return x
    return x - np.outer(x @ u, u) * (2.0 / nu2) if x.ndim == 2 else x - u * (2.0 * (x @ u) / nu2)


def vmf_sample(mu, kappa, d, rng):
    """One draw from vMF(mu, kappa) by Wood's rejection scheme.

    Returns ``(sample, rejections)``.
    """
    d = check_dimension(d)
    kappa = _check_kappa(kappa, allow_zero=True)
    mu = normalize(np.asarray(mu, dtype=np.float64))
    if kappa == 0:
        return random_unit(d, rng), 0
    m, b, x0, c = _wood_constants(kappa, d)
    rejections = 0
    while True:
        z = rng.beta(m / 2.0, m / 2.0)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        if kappa * w + m * math.log(1.0 - x0 * w) - c >= math.log(rng.uniform()):
            break
        rejections += 1
    v = random_unit(d - 1, rng)
    x = np.empty(d)
    x[0] = w
    x[1:] = math.sqrt(max(1.0 - w * w, 0.0)) * v
    return _householder_to(mu, x), rejections


def vmf_sample_batch(mu, kappa, d, n, rng):
    """``n`` vMF draws, rejection rounds vectorized. Returns ``(samples, rejections)``."""
    d = check_dimension(d)
    kappa = _check_kappa(kappa, allow_zero=True)
    mu = normalize(np.asarray(mu, dtype=np.float64))
    if kappa == 0:
        return sample_uniform_sphere(d, rng, size=n), 0
    m, b, x0, c = _wood_constants(kappa, d)
    w = np.empty(n)
    todo = np.arange(n)
    rejections = 0
    while todo.size:
        z = rng.beta(m / 2.0, m / 2.0, size=todo.size)
        cand = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        ok = kappa * cand + m * np.log(1.0 - x0 * cand) - c >= np.log(rng.uniform(size=todo.size))
        w[todo[ok]] = cand[ok]
        rejections += int((~ok).sum())
        todo = todo[~ok]
    v = sample_uniform_sphere(d - 1, rng, size=n) if d > 2 else rng.choice([-1.0, 1.0], size=(n, 1))
    x = np.empty((n, d))
    x[:, 0] = w
    x[:, 1:] = np.sqrt(np.maximum(1.0 - w * w, 0.0))[:, None] * v
    return _householder_to(mu, x), rejections


@dataclass(frozen=True)
class VmfSampleStats:
    kappa: float
    d: int
    mean_resultant: float
    rejections_per_sample: float
    time_per_sample: float


def vmf_sample_stats(kappa, d, n, rng):
    """Empirical mean resultant length and rejection rate around ``e1``."""
    mu = np.zeros(d)
    mu[0] = 1.0
    t0 = time.perf_counter()
    x, rej = vmf_sample_batch(mu, kappa, d, n, rng)
    elapsed = time.perf_counter() - t0
    resultant = float(np.clip(np.linalg.norm(x.mean(axis=0)), 0.0, 1.0))
    return VmfSampleStats(float(kappa), int(d), resultant, rej / n, elapsed / n)
