"""Small input-validation helpers used across the public API."""
from __future__ import annotations

import numpy as np


def as_generator(rng) -> np.random.Generator:
    """Coerce ``None``, an int seed, or a Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def check_vector(x, size: int | None = None, name: str = "x") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {size}")
    return x


def check_matrix(x, n_cols: int | None = None, name: str = "X") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {x.shape}")
    if n_cols is not None and x.shape[1] != n_cols:
        raise ValueError(f"{name} has {x.shape[1]} columns, expected {n_cols}")
    return x


def check_probability(p: float, name: str = "p") -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return p


def check_finite(x, name: str = "input") -> np.ndarray:
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x
