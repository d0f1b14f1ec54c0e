"""Small input checks shared across modules."""
import numbers

import numpy as np


def check_dimension(d, minimum=2, name="d"):
    if not isinstance(d, numbers.Integral) or isinstance(d, bool):
        raise TypeError(f"{name} must be an integer, got {type(d).__name__}")
    if d < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {d}")
    return int(d)


def check_positive(x, name):
    x = float(x)
    if not np.isfinite(x) or x <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {x}")
    return x


def check_probability(p, name, closed=False):
    p = float(p)
    ok = 0.0 <= p <= 1.0 if closed else 0.0 < p < 1.0
    if not ok:
        raise ValueError(f"{name} must lie in {'[0, 1]' if closed else '(0, 1)'}, got {p}")
    return p


def check_states(X, n_features, dtype=np.float64):
    """Coerce observations to a 2-D float array with ``n_features`` columns.

    A single 1-D observation is promoted to a batch of one.
    """
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected 1-D or 2-D observations, got ndim={X.ndim}")
    if X.shape[1] != n_features:
        raise ValueError(
            f"X has {X.shape[1]} features, but the policy expects {n_features}")
    if not np.all(np.isfinite(X)):
        raise ValueError("observations contain NaN or inf")
    return X
