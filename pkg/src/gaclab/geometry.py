"""Unit-sphere operations behind geometric action control.

Every function works on the last axis, so a single vector of shape ``(d,)``
and a batch of shape ``(n, d)`` go through the same code path. All math is
done in float64 unless the caller hands in lower-precision arrays on purpose
(the training loop does this for speed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gaclab._validation import check_dimension, check_positive

EPS = 1e-8


class DegenerateDirectionError(ValueError):
    """Raised when a gradient is requested through a near-zero vector."""


def normalize(v, eps=EPS, return_degenerate=False):
    """Project ``v`` onto the unit sphere along its last axis.

    Divides by ``max(||v||, eps)``, so a (near-)zero input comes back as a
    small finite vector instead of NaN. Pass ``return_degenerate=True`` to
    also get a boolean mask marking those inputs.
    """
    v = np.asarray(v)
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    out = v / np.maximum(norm, eps)
    if return_degenerate:
        return out, norm[..., 0] < eps
    return out


def sample_uniform_sphere(d, rng, size=None, dtype=np.float64):
    """Draw directions uniformly from S^{d-1} as normalized Gaussians.

    ``size=None`` returns one vector of shape ``(d,)``; an int returns
    ``(size, d)``.
    """
    d = check_dimension(d)
    shape = (d,) if size is None else (size, d)
    z = rng.standard_normal(shape, dtype=dtype)
    out, bad = normalize(z, return_degenerate=True)
    # measure-zero event, but keep the contract exact
    while np.any(bad):
        redo = rng.standard_normal(shape, dtype=dtype)
        out = np.where(bad[..., None], normalize(redo), out)
        bad = bad & (np.linalg.norm(redo, axis=-1) < EPS)
    return out


def random_unit(d, rng):
    """One uniform direction with no validation overhead (hot loops only)."""
    z = rng.standard_normal(d)
    return z / math.sqrt(z @ z)


def mixing_weight(kappa):
    """Logistic sigmoid ``1 / (1 + exp(-kappa))``, overflow-safe."""
    kappa = np.asarray(kappa)
    if not np.issubdtype(kappa.dtype, np.floating):
        kappa = kappa.astype(np.float64)
    # exp of a non-positive number never overflows
    e = np.exp(-np.abs(kappa))
    w = np.where(kappa >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return w[()] if w.ndim == 0 else w


def sample_action(mu, kappa, radius, rng):
    """Draw one mixed action without recording intermediates.

    Same result as ``spherical_mix(mu, kappa, xi, radius).action`` for a
    fresh uniform ``xi``; meant for sampling loops and benchmarks.
    """
    w = 1.0 / (1.0 + math.exp(-kappa)) if kappa >= 0 else 1.0 - 1.0 / (1.0 + math.exp(kappa))
    v = w * mu + (1.0 - w) * random_unit(len(mu), rng)
    return (radius / max(math.sqrt(v @ v), EPS)) * v


@dataclass
class MixRecord:
    """Everything produced by one (batched) spherical mix.

    Kept around so the backward pass and audits can reuse intermediates.
    ``mu_raw`` is the pre-normalization direction when the caller has one;
    otherwise it equals ``mu``.
    """

    mu: np.ndarray
    kappa: np.ndarray
    weight: np.ndarray
    xi: np.ndarray
    unnormalized: np.ndarray
    action: np.ndarray
    radius: float
    mu_raw: np.ndarray
    degenerate: np.ndarray


def spherical_mix(mu, kappa, xi, radius, mu_raw=None):
    """Blend a direction with spherical noise and rescale to ``radius``.

    Computes ``radius * normalize(w * mu + (1 - w) * xi)`` with
    ``w = sigmoid(kappa)``.

    Parameters
    ----------
    mu : array_like, shape (..., d)
        Unit direction(s).
    kappa : array_like, shape (...)
        Concentration score(s), unbounded.
    xi : array_like, shape (..., d)
        Unit noise direction(s).
    radius : float
        Output norm.
    mu_raw : array_like, optional
        Unnormalized direction that ``mu`` was computed from. Only used by
        :func:`spherical_mix_backward` to chain through the first
        normalization.

    Returns
    -------
    MixRecord
    """
    radius = check_positive(radius, "radius")
    mu = np.asarray(mu)
    xi = np.asarray(xi)
    kappa = np.asarray(kappa, dtype=mu.dtype)
    w = mixing_weight(kappa)
    w_col = np.asarray(w)[..., None]
    v = w_col * mu + (1.0 - w_col) * xi
    v_hat, degenerate = normalize(v, return_degenerate=True)
    return MixRecord(
        mu=mu,
        kappa=kappa,
        weight=np.asarray(w),
        xi=xi,
        unnormalized=v,
        action=radius * v_hat,
        radius=radius,
        mu_raw=mu if mu_raw is None else np.asarray(mu_raw),
        degenerate=degenerate,
    )


def normalize_vjp(x, grad_out, eps=EPS):
    """Vector-Jacobian product of :func:`normalize` at ``x``.

    Uses ``J(x) = (I - x_hat x_hat^T) / ||x||``, which is symmetric.
    """
    norm = np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), eps)
    x_hat = x / norm
    radial = np.sum(x_hat * grad_out, axis=-1, keepdims=True)
    return (grad_out - radial * x_hat) / norm


def spherical_mix_backward(record, grad_action):
    """Pull ``dL/d action`` back to the raw direction and the concentration.

    The noise ``xi`` is treated as a constant.

    Returns
    -------
    grad_mu_raw : ndarray, shape (..., d)
    grad_kappa : ndarray, shape (...)
    """
    if np.any(record.degenerate):
        raise DegenerateDirectionError(
            "cannot differentiate through a degenerate mixture")
    grad_action = np.asarray(grad_action)
    grad_v = record.radius * normalize_vjp(record.unnormalized, grad_action)
    w = record.weight[..., None]
    grad_mu = w * grad_v
    grad_w = np.sum((record.mu - record.xi) * grad_v, axis=-1)
    grad_kappa = record.weight * (1.0 - record.weight) * grad_w
    grad_mu_raw = normalize_vjp(record.mu_raw, grad_mu)
    return grad_mu_raw, grad_kappa


def expected_direction_mc(mu, kappa, n, rng, chunk=200_000):
    """Monte Carlo mean of the unnormalized mixture ``w * mu + (1 - w) * xi``.

    Converges to ``sigmoid(kappa) * mu``. Draws in chunks to bound memory.
    """
    mu = np.asarray(mu, dtype=np.float64)
    d = mu.shape[-1]
    w = float(mixing_weight(kappa))
    total = np.zeros(d)
    left = int(n)
    while left > 0:
        m = min(chunk, left)
        xi = sample_uniform_sphere(d, rng, size=m)
        total += xi.sum(axis=0)
        left -= m
    return w * mu + (1.0 - w) * total / n


@dataclass(frozen=True)
class ConcentrationStats:
    mean_cos: float
    angle_std_deg: float
    n_samples: int


def concentration_stats(mu, kappa, d, n, rng):
    """Mean cosine to ``mu`` and angular spread (degrees) of ``n`` mixtures."""
    d = check_dimension(d)
    if n < 2:
        raise ValueError("need at least 2 samples for a standard deviation")
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (d,):
        raise ValueError(f"mu has shape {mu.shape}, expected ({d},)")
    xi = sample_uniform_sphere(d, rng, size=n)
    rec = spherical_mix(mu, np.full(n, kappa, dtype=np.float64), xi, 1.0)
    cos = np.clip(rec.action @ mu, -1.0, 1.0)
    angles = np.degrees(np.arccos(cos))
    return ConcentrationStats(float(cos.mean()), float(angles.std(ddof=1)), int(n))


def large_d_concentration(w):
    """High-dimensional approximation of the mean cosine: ``w / sqrt(w^2 + (1-w)^2)``."""
    w = np.asarray(w, dtype=np.float64)
    if np.any((w <= 0) | (w >= 1)):
        raise ValueError("w must lie strictly between 0 and 1")
    out = w / np.sqrt(w**2 + (1.0 - w) ** 2)
    return out[()] if out.ndim == 0 else out
