"""Least-squares power-law fits on log-log data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from magshell.errors import DomainError


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float


def fit_rate(samples) -> RateFit:
    """Fit log(value) = slope * log(h) + intercept over (h, value) pairs."""
    data = np.asarray(list(samples), float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise DomainError("samples must be (h, value) pairs")
    if len(data) < 3:
        raise DomainError(f"rate fit needs at least 3 samples, got {len(data)}")
    h, val = data[:, 0], data[:, 1]
    if np.any(h <= 0) or np.any(val <= 0) or not np.all(np.isfinite(data)):
        raise DomainError("rate fit needs positive finite samples")
    X = np.stack([np.log(h), np.ones_like(h)], axis=1)
    coef, *_ = np.linalg.lstsq(X, np.log(val), rcond=None)
    resid = np.log(val) - X @ coef
    return RateFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2))))
