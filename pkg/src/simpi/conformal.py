"""Split conformal prediction and conformalized quantile regression for replicated designs.

One replicate per calibration point (the first) enters the conformity
scores; everything else trains the base learner. When every point has
at least two replicates all points are used for calibration.
"""
from __future__ import annotations

import math
import warnings
from typing import Callable, Protocol

import numpy as np

from .data import IntervalModel, ReplicatedDataset, empirical_quantile


class BaseRegressor(Protocol):
    def fit(self, data: ReplicatedDataset, seed: int) -> Callable[[np.ndarray], np.ndarray]: ...


class BaseQuantileRegressor(Protocol):
    def fit(self, data: ReplicatedDataset, levels: tuple[float, float],
            seed: int) -> Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]: ...


def conformal_split(train: ReplicatedDataset, seed: int):
    """Return (fit data D1, calibration x, calibration y) for the replicated split.

    With all r_i >= 2 the calibration set is every point's first replicate
    and D1 is the remaining replicates. Otherwise the points are halved at
    random; D1 holds the first half plus the extra replicates of the second.
    """
    if train.n == 0:
        raise ValueError("empty training set")
    r = train.r
    if np.all(r >= 2):
        I2 = np.arange(train.n)
        I1 = np.array([], dtype=int)
    else:
        if train.n < 2:
            raise ValueError("need at least 2 points when some point has a single replicate")
        perm = np.random.default_rng(seed).permutation(train.n)
        k = train.n // 2
        I1, I2 = np.sort(perm[:k]), np.sort(perm[k:])
    if len(I2) == 0:
        raise ValueError("calibration index set I2 is empty")
    xs, ys = [], []
    for i in I1:
        xs.append(train.x[i])
        ys.append(train.y[i])
    for i in I2:
        if r[i] > 1:
            xs.append(train.x[i])
            ys.append(train.y[i][1:])
    if not xs:
        raise ValueError("no data left to fit the base model")
    d1 = ReplicatedDataset(np.array(xs), ys)
    return d1, train.x[I2], np.array([train.y[i][0] for i in I2])


def _level(alpha: float, n_cal: int) -> float:
    return (1 - alpha) * (1 + 1 / n_cal)


def _warn_infinite(q: float, n_cal: int, alpha: float) -> dict:
    if math.isinf(q):
        warnings.warn(f"conformal quantile is infinite: {n_cal} calibration points are too few "
                      f"for alpha={alpha}", RuntimeWarning, stacklevel=3)
        return {"infinite_width": True}
    return {}


def conformity_scores(mu: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.abs(y - mu)


def split_conformal(train: ReplicatedDataset, base: BaseRegressor, alpha: float, seed: int = 0) -> IntervalModel:
    """Constant-width interval ``mu(x) -/+ Q`` around a fitted regression."""
    d1, xc, yc = conformal_split(train, seed)
    mu = base.fit(d1, seed)
    R = conformity_scores(mu(xc), yc)
    q = empirical_quantile(R, _level(alpha, len(R)))
    flags = _warn_infinite(q, len(R), alpha)

    def bounds(X):
        m = mu(X)
        return m - q, m + q

    return IntervalModel(bounds, {"method": "SCP", "alpha": alpha, "n_cal": len(R), "halfwidth": q}, flags)


def cqr_scores(lo: np.ndarray, hi: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(lo - y, y - hi)


def split_cqr(train: ReplicatedDataset, base: BaseQuantileRegressor, alpha: float, seed: int = 0) -> IntervalModel:
    """Quantile band ``[q_lo(x) - Q, q_hi(x) + Q]`` calibrated on held-out replicates."""
    d1, xc, yc = conformal_split(train, seed)
    qfun = base.fit(d1, (alpha / 2, 1 - alpha / 2), seed)

    def band(X):
        lo, hi = qfun(X)
        return np.minimum(lo, hi), np.maximum(lo, hi)

    E = cqr_scores(*band(xc), yc)
    q = empirical_quantile(E, _level(alpha, len(E)))
    flags = _warn_infinite(q, len(E), alpha)

    def bounds(X):
        lo, hi = band(X)
        L, U = lo - q, hi + q
        # a negative correction can cross the endpoints; collapse to the midpoint
        mid = 0.5 * (lo + hi)
        cross = L > U
        return np.where(cross, mid, L), np.where(cross, mid, U)

    return IntervalModel(bounds, {"method": "SCQR", "alpha": alpha, "n_cal": len(E), "correction": q}, flags)
