"""Distribution-match and causal-estimate error metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def median_bandwidth(X: np.ndarray, Y: np.ndarray) -> float:
    """Median pairwise Euclidean distance of the pooled sample."""
    Z = np.vstack([X, Y])
    d = np.sqrt(_sq_dists(Z, Z)[np.triu_indices(len(Z), k=1)])
    med = float(np.median(d))
    return med if med > 0 else 1.0


def mmd(X, Y, bandwidth: str | float = "median", unbiased: bool = False) -> float:
    """Squared MMD under the Gaussian kernel ``exp(-|a - b|^2 / (2 h^2))``.

    Biased V-statistic by default, so ``mmd(X, X) == 0``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) < 2 or len(Y) < 2:
        raise ValueError("mmd needs at least two rows per sample")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"column mismatch: {X.shape[1]} vs {Y.shape[1]}")
    h = median_bandwidth(X, Y) if bandwidth == "median" else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    g = 1.0 / (2.0 * h * h)
    kxx = np.exp(-g * _sq_dists(X, X))
    kyy = np.exp(-g * _sq_dists(Y, Y))
    kxy = np.exp(-g * _sq_dists(X, Y))
    n, m = len(X), len(Y)
    if unbiased:
        sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
        syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    else:
        sxx = kxx.mean()
        syy = kyy.mean()
    return float(sxx + syy - 2.0 * kxy.mean())


def ate_error(estimate: float, truth: float) -> float:
    return abs(float(estimate) - float(truth))


def cf_error(estimates, truths, sd) -> np.ndarray:
    """Per-column mean of ``|estimate - truth| / sd``."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if tru.ndim == 1:
        tru = tru[:, None]
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    sd = np.broadcast_to(np.asarray(sd, dtype=float), (est.shape[1],))
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    return np.mean(np.abs(est - tru), axis=0) / sd


@dataclass
class MetricReport:
    mmd_obs: float | None = None
    mmd_int: dict[str, float] = field(default_factory=dict)
    ate_abs_error: dict[str, float] = field(default_factory=dict)
    cf_abs_error: dict[str, float] = field(default_factory=dict)
    bandwidth: str = "median"

    def validate(self) -> None:
        vals = [self.mmd_obs] if self.mmd_obs is not None else []
        vals += [*self.mmd_int.values(), *self.ate_abs_error.values(), *self.cf_abs_error.values()]
        for v in vals:
            if not (np.isfinite(v) and v >= -1e-12):
                raise ValueError(f"metric value {v} is negative or non-finite")

    def to_json(self) -> str:
        self.validate()
        return json.dumps(asdict(self), indent=2, sort_keys=True)
