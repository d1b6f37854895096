"""Replicated simulation datasets, interval models and coverage metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


def as_points(x) -> np.ndarray:
    """Coerce design points to a float array of shape (n, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    return x


@dataclass(frozen=True, eq=False)
class ReplicatedDataset:
    """Design points ``x_i`` with ``r_i`` replicated outputs each.

    Parameters
    ----------
    x : array of shape (n, d)
    y : sequence of 1-D arrays, ``y[i]`` holding the ``r_i`` outputs at ``x[i]``
    """

    x: np.ndarray
    y: tuple

    def __init__(self, x, y):
        x = as_points(x)
        y = tuple(np.atleast_1d(np.asarray(yi, dtype=float)).ravel() for yi in y)
        if len(y) != x.shape[0]:
            raise ValueError(f"{x.shape[0]} points but {len(y)} replication lists")
        if any(len(yi) < 1 for yi in y):
            raise ValueError("every design point needs at least one replication")
        x.setflags(write=False)
        for yi in y:
            yi.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def r(self) -> np.ndarray:
        return np.array([len(yi) for yi in self.y], dtype=int)

    @property
    def ybar(self) -> np.ndarray:
        return np.array([yi.mean() for yi in self.y])

    def sample_var(self) -> np.ndarray:
        """Unbiased per-point sample variance (requires every r_i >= 2)."""
        if np.any(self.r < 2):
            raise ValueError("sample variance needs at least 2 replications per point")
        return np.array([yi.var(ddof=1) for yi in self.y])

    def subset(self, idx) -> "ReplicatedDataset":
        idx = np.asarray(idx, dtype=int)
        return ReplicatedDataset(self.x[idx], [self.y[i] for i in idx])

    def replicate_subset(self, reps: slice | Sequence[int]) -> "ReplicatedDataset":
        """Keep the same points but only the selected replicate indices."""
        if isinstance(reps, slice):
            return ReplicatedDataset(self.x, [yi[reps] for yi in self.y])
        reps = np.asarray(reps, dtype=int)
        return ReplicatedDataset(self.x, [yi[reps] for yi in self.y])

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """All (x, y) pairs stacked, shapes (N, d) and (N,)."""
        r = self.r
        return np.repeat(self.x, r, axis=0), np.concatenate(self.y)

    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """Outputs as an (n, r_max) array padded with 0 plus a boolean mask."""
        r = self.r
        Y = np.zeros((self.n, r.max()))
        mask = np.arange(r.max())[None, :] < r[:, None]
        Y[mask] = np.concatenate(self.y)
        return Y, mask

    def __eq__(self, other):
        if not isinstance(other, ReplicatedDataset):
            return NotImplemented
        return (
            self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
            and len(self.y) == len(other.y)
            and all(np.array_equal(a, b) for a, b in zip(self.y, other.y))
        )

    def to_csv(self, path) -> None:
        """Write columns ``point_id, x_1..x_d, rep_id, y`` (ids 1-based) to a path or open file."""
        if hasattr(path, "write"):
            self._write_csv(path)
            return
        with open(path, "w", newline="") as f:
            self._write_csv(f)

    def _write_csv(self, f) -> None:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["point_id", *[f"x_{k + 1}" for k in range(self.d)], "rep_id", "y"])
        for i, (xi, yi) in enumerate(zip(self.x, self.y)):
            xs = [repr(float(v)) for v in xi]
            for j, v in enumerate(yi):
                w.writerow([i + 1, *xs, j + 1, repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "ReplicatedDataset":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        header, rows = rows[0], rows[1:]
        xcols = [k for k, h in enumerate(header) if h.startswith("x_")]
        ycol = header.index("y")
        points: dict[str, tuple[list[float], list[tuple[int, float]]]] = {}
        order: list[str] = []
        for row in rows:
            pid = row[0]
            if pid not in points:
                points[pid] = ([float(row[k]) for k in xcols], [])
                order.append(pid)
            points[pid][1].append((int(row[ycol - 1]), float(row[ycol])))
        x = [points[p][0] for p in order]
        y = [[v for _, v in sorted(points[p][1])] for p in order]
        return cls(np.array(x, dtype=float).reshape(len(order), len(xcols)), y)


class IntervalModel:
    """An evaluable map ``x -> [L(x), U(x)]``.

    ``bounds`` takes an (n, d) array and returns the two (n,) arrays of
    lower and upper endpoints. ``label`` is free-form JSON-serializable
    metadata (method name, hyperparameters).
    """

    def __init__(self, bounds: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                 label: dict | None = None, flags: dict | None = None):
        self._bounds = bounds
        self.label = dict(label or {})
        self.flags = dict(flags or {})

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        L, U = self._bounds(as_points(X))
        return np.asarray(L, dtype=float), np.asarray(U, dtype=float)

    def eval(self, x) -> tuple[float, float]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        L, U = self.predict(x[None, :])
        return float(L[0]), float(U[0])

    def label_json(self) -> str:
        return json.dumps(self.label, sort_keys=True)

    def __repr__(self):
        return f"IntervalModel({self.label_json()})"


@dataclass(frozen=True)
class CoverageStats:
    """Per-point hit rates and their empirical moments for m models."""

    hits: np.ndarray  # (n_v, m), W_i^{(j)}
    cr: np.ndarray  # (m,)
    cov: np.ndarray  # (m, m)
    widths: np.ndarray = field(default=None)  # (m,) average validation widths

    @property
    def n_v(self) -> int:
        return self.hits.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def split_disjoint(data: ReplicatedDataset, fraction: float, seed: int):
    """Randomly partition the design points (with all their replications).

    The first part gets ``round(fraction * n)`` points.
    """
    if data.n < 2:
        raise ValueError("need at least 2 points to split")
    k = int(round(fraction * data.n))
    if k <= 0 or k >= data.n:
        raise ValueError(f"degenerate split: {k} of {data.n} points")
    perm = np.random.default_rng(seed).permutation(data.n)
    first, second = np.sort(perm[:k]), np.sort(perm[k:])
    return data.subset(first), data.subset(second)


def split_replicates(data: ReplicatedDataset, fraction: float):
    """Split each point's replications into a leading and a trailing block.

    Both parts keep every design point. The first part gets
    ``round(fraction * r)`` replications, so this needs equal ``r_i``.
    """
    r = data.r
    if np.any(r != r[0]):
        raise ValueError("replicate split requires equal replications")
    k = int(round(fraction * r[0]))
    if k <= 0 or k >= r[0]:
        raise ValueError(f"degenerate split: {k} of {r[0]} replications")
    return data.replicate_subset(slice(0, k)), data.replicate_subset(slice(k, None))


def empirical_quantile(values, level: float) -> float:
    """The ``ceil(level * s)``-th smallest of ``s`` values, or +inf past the end."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empirical quantile of an empty set")
    if not level > 0:
        raise ValueError(f"level must be positive, got {level}")
    s = v.size
    # guard against 0.95*(20/19)*19 = 19.000000000000004 style round-off
    k = math.ceil(round(level * s, 9))
    if k > s:
        return math.inf
    return float(np.partition(v, k - 1)[k - 1])


def hit_rates(L: np.ndarray, U: np.ndarray, data: ReplicatedDataset) -> np.ndarray:
    """Per-point fraction of replications inside the closed interval."""
    Y, mask = data.padded()
    inside = (Y >= L[:, None]) & (Y <= U[:, None]) & mask
    return inside.sum(axis=1) / data.r


def coverage_and_width(model: IntervalModel, test: ReplicatedDataset) -> tuple[float, float]:
    """Empirical coverage rate and average width of ``model`` on ``test``."""
    if test.n == 0:
        raise ValueError("empty test set")
    L, U = model.predict(test.x)
    cr = float(hit_rates(L, U, test).mean())
    iw = float(np.mean(U - L))
    return cr, iw
