"""Selecting an interval model among candidates with a coverage guarantee.

Three selectors share one feasibility-then-narrowest rule and differ in
the margin added to the target level:

* ``normalized``: ``q * sigma_j / sqrt(n_v)`` with ``q`` the (1 - beta)
  quantile of ``max_j Z_j / sigma_j``;
* ``unnormalized``: ``q' / sqrt(n_v)`` with ``q'`` the quantile of ``max_j Z_j``;
* ``naive``: no margin.

``Z ~ N(0, Sigma)`` where ``Sigma`` is the covariance of the per-point
hit rates on the validation set.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .data import CoverageStats, IntervalModel, ReplicatedDataset, hit_rates

MODES = ("normalized", "unnormalized", "naive")


@dataclass(frozen=True)
class SelectionConfig:
    levels: tuple = (0.95,)
    beta: float = 0.05
    mc: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not all(0 < a < 1 for a in self.levels):
            raise ValueError("target levels must lie in (0, 1)")
        if not 0 < self.beta < 0.5:
            raise ValueError("beta must lie in (0, 0.5)")
        if self.mc < 10_000:
            raise ValueError("use at least 10^4 Monte Carlo samples")


@dataclass(frozen=True)
class Choice:
    level: float
    index: int | None  # None when no candidate is feasible
    coverage: float | None
    width: float | None
    margin: float | None

    @property
    def feasible(self) -> bool:
        return self.index is not None


@dataclass(frozen=True)
class SelectionResult:
    mode: str
    quantile: float
    margins: np.ndarray
    coverage: np.ndarray
    widths: np.ndarray
    choices: tuple

    def chosen(self, level: float | None = None) -> Choice:
        if level is None:
            return self.choices[0]
        for c in self.choices:
            if math.isclose(c.level, level):
                return c
        raise KeyError(level)

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode, "quantile": self.quantile, "margins": self.margins.tolist(),
            "coverage": self.coverage.tolist(), "widths": self.widths.tolist(),
            "choices": [dict(asdict(c), infeasible=not c.feasible) for c in self.choices],
        }, sort_keys=True)


def coverage_matrix(candidates: Sequence[IntervalModel], validation: ReplicatedDataset) -> CoverageStats:
    """Hit rates W_i^(j), coverage estimates and their 1/n_v covariance."""
    r = validation.r
    if np.any(r != r[0]):
        raise ValueError("validator requires equal replications at every validation point")
    hits, widths = [], []
    for model in candidates:
        L, U = model.predict(validation.x)
        hits.append(hit_rates(L, U, validation))
        widths.append(float(np.mean(np.abs(U - L))))
    W = np.column_stack(hits)
    cr = W.mean(axis=0)
    D = W - cr
    cov = D.T @ D / W.shape[0]
    return CoverageStats(W, cr, cov, np.array(widths))


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """A factor F with F F^T equal to ``cov`` after clipping negative eigenvalues."""
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.clip(w, 0.0, None))


def gaussian_sup_quantile(cov, beta: float, mode: str = "normalized", mc: int = 100_000, seed=0) -> float:
    """(1 - beta) quantile of max_j Z_j (/ sigma_j) for Z ~ N(0, cov), by Monte Carlo."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    keep = sigma > 0
    if mode == "normalized" and not np.any(keep):
        warnings.warn("every candidate has zero hit-rate variance; margin is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    if mode not in ("normalized", "unnormalized"):
        raise ValueError(f"unknown mode {mode!r}")
    F = _psd_factor(cov)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((mc, F.shape[1])) @ F.T
    if mode == "normalized":
        stat = (Z[:, keep] / sigma[keep]).max(axis=1)
    else:
        stat = Z.max(axis=1)
    return float(np.quantile(stat, 1 - beta))


def select(candidates, validation: ReplicatedDataset, cfg: SelectionConfig = SelectionConfig(),
           mode: str = "normalized", stats: CoverageStats | None = None) -> SelectionResult:
    """Narrowest candidate whose validation coverage clears target + margin, per level."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if stats is None:
        stats = coverage_matrix(candidates, validation)
    n_v = stats.n_v
    sigma = stats.sigma
    m = len(stats.cr)
    if mode == "naive":
        q = 0.0
        margins = np.zeros(m)
    else:
        q = gaussian_sup_quantile(stats.cov, cfg.beta, mode, cfg.mc, cfg.seed)
        margins = q * sigma / math.sqrt(n_v) if mode == "normalized" else np.full(m, q / math.sqrt(n_v))
    choices = []
    for level in cfg.levels:
        feasible = np.flatnonzero(stats.cr >= level + margins)
        if feasible.size == 0:
            choices.append(Choice(level, None, None, None, None))
            continue
        # argmin returns the first minimum, so ties go to the smaller index
        j = int(feasible[np.argmin(stats.widths[feasible])])
        choices.append(Choice(level, j, float(stats.cr[j]), float(stats.widths[j]), float(margins[j])))
    return SelectionResult(mode, q, margins, stats.cr, stats.widths, tuple(choices))
