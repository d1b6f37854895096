"""One-hidden-layer networks trained with Adam: point regression and interval outputs.

Weights for several networks are stacked along a leading axis so a whole
grid of multipliers trains in one vectorized loop; each network still has
its own initialization and minibatch order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import IntervalModel, ReplicatedDataset, as_points


class TrainingDiverged(FloatingPointError):
    pass


def softplus(z):
    return np.logaddexp(0.0, z)


@dataclass
class MLPParams:
    """Weights of a d -> hidden (tanh) -> k network; arrays may carry a leading stack axis."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2")

    def arrays(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, v: np.ndarray) -> "MLPParams":
        out, k = [], 0
        for a in self.arrays():
            out.append(v[k:k + a.size].reshape(a.shape))
            k += a.size
        return MLPParams(*out)

    def take(self, j: int) -> "MLPParams":
        """Network ``j`` of a stack."""
        return MLPParams(*(a[j] for a in self.arrays()))

    def stack(self) -> "MLPParams":
        return MLPParams(*(a[None] for a in self.arrays()))

    def to_json(self) -> str:
        return json.dumps({n: {"shape": list(a.shape), "data": a.ravel().tolist()}
                           for n, a in zip(self.NAMES, self.arrays())})

    @classmethod
    def from_json(cls, s: str) -> "MLPParams":
        d = json.loads(s)
        return cls(*(np.array(d[n]["data"], dtype=float).reshape(d[n]["shape"]) for n in cls.NAMES))


def init_params(d: int, hidden: int, k: int, rngs, out_bias=None) -> MLPParams:
    """Stacked initialization, one generator per network."""
    W1, b1, W2, b2 = [], [], [], []
    for rng in rngs:
        W1.append(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, hidden)))
        b1.append(rng.normal(0.0, 0.5, size=hidden))
        W2.append(rng.normal(0.0, 0.1 / np.sqrt(hidden), size=(hidden, k)))
        b2.append(np.zeros(k) if out_bias is None else np.array(out_bias, dtype=float))
    return MLPParams(np.array(W1), np.array(b1), np.array(W2), np.array(b2))


def forward(p: MLPParams, X: np.ndarray):
    """X has shape (m, B, d) for a stack of m networks; returns (hidden, outputs)."""
    A = np.tanh(X @ p.W1 + p.b1[:, None, :])
    return A, A @ p.W2 + p.b2[:, None, :]


def backward(p: MLPParams, X, A, dO) -> MLPParams:
    dA = dO @ np.swapaxes(p.W2, 1, 2)
    dZ = dA * (1.0 - A * A)
    return MLPParams(np.swapaxes(X, 1, 2) @ dZ, dZ.sum(axis=1),
                     np.swapaxes(A, 1, 2) @ dO, dO.sum(axis=1))


def interval_head(O):
    lower = O[..., 0]
    return lower, lower + softplus(O[..., 1])


def _soft_loss_stack(p: MLPParams, X, Y, mask, lam, c0, grad=True):
    """Soft Lagrangian for stacked networks.

    X (m, B, d), Y and mask (m, B, R), lam (m,). Returns per-network values
    (m,) and the stacked gradient.
    """
    A, O = forward(p, X)
    L, U = interval_head(O)
    B = X.shape[1]
    inv_r = 1.0 / mask.sum(axis=2)
    sa = expit(c0 * (U[..., None] - Y))
    sb = expit(c0 * (Y - L[..., None]))
    pen = ((1.0 - sa * sb) * mask).sum(axis=2) * inv_r
    width = softplus(O[..., 1])
    value = width.mean(axis=1) + lam * pen.mean(axis=1)
    if not grad:
        return value, None
    scale = (lam / B)[:, None] * inv_r
    dU = -scale * ((sa * (1.0 - sa) * sb * mask).sum(axis=2)) * c0
    dL = scale * ((sa * sb * (1.0 - sb) * mask).sum(axis=2)) * c0
    dO = np.empty_like(O)
    dO[..., 0] = dU + dL
    dO[..., 1] = (1.0 / B + dU) * expit(O[..., 1])
    return value, backward(p, X, A, dO)


def _mse_stack(p: MLPParams, X, y, grad=True):
    A, O = forward(p, X)
    err = O[..., 0] - y
    value = (err**2).mean(axis=1)
    if not grad:
        return value, None
    dO = (2.0 / X.shape[1]) * err[..., None]
    return value, backward(p, X, A, dO)


def soft_loss(params: MLPParams, x, Y, mask=None, lam: float = 1.0, c0: float = 50.0):
    """Soft Lagrangian loss of a single interval network and its gradient.

    ``x`` is (B, d); ``Y`` is (B, R) replicate outputs with optional boolean
    ``mask`` for ragged replication counts. Returns ``(value, MLPParams)``.
    """
    x = as_points(x)
    Y = np.asarray(Y, dtype=float).reshape(x.shape[0], -1)
    mask = np.ones_like(Y, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    v, g = _soft_loss_stack(params.stack(), x[None], Y[None], mask[None], np.array([lam]), c0)
    return float(v[0]), g.take(0)


def mse_loss(params: MLPParams, x, y):
    x = as_points(x)
    v, g = _mse_stack(params.stack(), x[None], np.asarray(y, dtype=float)[None])
    return float(v[0]), g.take(0)


class Adam:
    def __init__(self, params: MLPParams, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: MLPParams, grad: MLPParams) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for a, g, m, v in zip(params.arrays(), grad.arrays(), self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def fit(cls, X, y):
        X = as_points(X)
        xs = X.std(axis=0)
        ys = float(np.std(y))
        return cls(X.mean(axis=0), np.where(xs > 0, xs, 1.0), float(np.mean(y)), ys if ys > 0 else 1.0)

    def x(self, X):
        return (as_points(X) - self.x_mean) / self.x_scale

    def y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def y_inv(self, z):
        return self.y_mean + self.y_scale * np.asarray(z)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    c0: float = 50.0
    epochs: int = 2000
    batch_size: int = 32
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = 20
    seed: int = 0
    init_cover: bool = True  # start interval networks wide enough to cover the data

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not self.c0 > 0:
            raise ValueError(f"C0 must be positive, got {self.c0}")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")


class NetworkModel:
    """A trained network with its input/output affine maps."""

    def __init__(self, params: MLPParams, scaler: Standardizer, kind: str):
        self.params = params
        self.scaler = scaler
        self.kind = kind

    def raw_outputs(self, X, standardized=False):
        Z = as_points(X) if standardized else self.scaler.x(X)
        _, O = forward(self.params.stack(), Z[None])
        return O[0]

    def predict(self, X, standardized=False):
        O = self.raw_outputs(X, standardized)
        if self.kind == "regression":
            return self.scaler.y_inv(O[:, 0])
        lo, hi = interval_head(O)
        return self.scaler.y_inv(lo), self.scaler.y_inv(hi)

    def checkpoint(self) -> str:
        s = self.scaler
        return json.dumps({"kind": self.kind, "params": json.loads(self.params.to_json()),
                           "x_mean": s.x_mean.tolist(), "x_scale": s.x_scale.tolist(),
                           "y_mean": s.y_mean, "y_scale": s.y_scale})

    @classmethod
    def from_checkpoint(cls, text: str) -> "NetworkModel":
        d = json.loads(text)
        s = Standardizer(np.array(d["x_mean"]), np.array(d["x_scale"]), d["y_mean"], d["y_scale"])
        return cls(MLPParams.from_json(json.dumps(d["params"])), s, d["kind"])


@dataclass
class CandidateSet:
    models: list
    lams: list
    histories: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.models) < 1:
            raise ValueError("a candidate set needs at least one model")
        if len(set(self.lams)) != len(self.lams):
            raise ValueError("candidate labels (lambda values) must be unique")

    def __len__(self):
        return len(self.models)

    def __getitem__(self, j):
        return self.models[j]


def _minibatches(rngs, n, batch):
    perms = np.stack([rng.permutation(n) for rng in rngs])
    for s in range(0, n, batch):
        yield perms[:, s:s + batch]


def _train_interval_stack(train: ReplicatedDataset, lams, seeds, cfg: TrainConfig):
    m = len(lams)
    lams = np.asarray(lams, dtype=float)
    scaler = Standardizer.fit(train.x, np.concatenate(train.y))
    Xs = scaler.x(train.x)
    Y, mask = train.padded()
    Ys = scaler.y(Y)
    rngs = [np.random.default_rng(s) for s in seeds]
    out_bias = None
    if cfg.init_cover:
        lo, hi = Ys[mask].min(), Ys[mask].max()
        span = hi - lo + 0.2
        # softplus(b) = span
        out_bias = [lo - 0.1, span + np.log(-np.expm1(-span))]
    p = init_params(train.d, cfg.hidden, 2, rngs, out_bias)
    opt = Adam(p, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history = []
    n = train.n
    for epoch in range(cfg.epochs):
        total = np.zeros(m)
        for idx in _minibatches(rngs, n, cfg.batch_size):
            v, g = _soft_loss_stack(p, Xs[idx], Ys[idx], mask[idx], lams, cfg.c0)
            if not np.all(np.isfinite(v)):
                bad = lams[~np.isfinite(v)]
                raise TrainingDiverged(f"training diverged for lambda={bad.tolist()}")
            opt.step(p, g)
            total += v * idx.shape[1]
        history.append(total / n)
    return p, scaler, np.array(history)


def _interval_model(net: NetworkModel, lam: float, cfg: TrainConfig, seed) -> IntervalModel:
    return IntervalModel(net.predict, {"method": "NN", "lambda": lam, "c0": cfg.c0, "epochs": cfg.epochs,
                                       "seed": str(seed)}, {"network": net})


def train_pi_network(train: ReplicatedDataset, cfg: TrainConfig) -> IntervalModel:
    """Fit one interval network at multiplier ``cfg.lam``."""
    if train.n == 0:
        raise ValueError("empty training set")
    p, scaler, _ = _train_interval_stack(train, [cfg.lam], [cfg.seed], cfg)
    return _interval_model(NetworkModel(p.take(0), scaler, "interval"), cfg.lam, cfg, cfg.seed)


def train_candidates(train: ReplicatedDataset, lam_grid, cfg: TrainConfig) -> CandidateSet:
    """One interval network per multiplier, trained together with independent seeds."""
    lam_grid = [float(v) for v in lam_grid]
    if not lam_grid:
        raise ValueError("empty lambda grid")
    if len(set(lam_grid)) != len(lam_grid):
        raise ValueError("lambda grid values must be unique")
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(lam_grid))
    p, scaler, hist = _train_interval_stack(train, lam_grid, seeds, cfg)
    models = [_interval_model(NetworkModel(p.take(j), scaler, "interval"), lam, cfg, seeds[j].spawn_key)
              for j, lam in enumerate(lam_grid)]
    return CandidateSet(models, lam_grid, [hist[:, j] for j in range(len(lam_grid))])


def default_lambda_grid(m: int = 20, lo: float = 0.1, hi: float = 100.0) -> list[float]:
    return np.geomspace(lo, hi, m).tolist()


def fit_regression_mlp(X, y, cfg: TrainConfig = TrainConfig()) -> NetworkModel:
    """Least-squares network on flattened (x, y) pairs."""
    X = as_points(X)
    y = np.asarray(y, dtype=float).ravel()
    scaler = Standardizer.fit(X, y)
    Xs, ys = scaler.x(X), scaler.y(y)
    rngs = [np.random.default_rng(cfg.seed)]
    p = init_params(X.shape[1], cfg.hidden, 1, rngs)
    opt = Adam(p, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    n = len(y)
    for epoch in range(cfg.epochs):
        for idx in _minibatches(rngs, n, cfg.batch_size):
            v, g = _mse_stack(p, Xs[idx], ys[idx])
            if not np.all(np.isfinite(v)):
                raise TrainingDiverged("regression training diverged")
            opt.step(p, g)
    return NetworkModel(p.take(0), scaler, "regression")


class MLPRegressor:
    """Base point regressor for split conformal prediction."""

    def __init__(self, cfg: TrainConfig = TrainConfig()):
        self.cfg = cfg

    def fit(self, data: ReplicatedDataset, seed: int | None = None):
        cfg = self.cfg if seed is None else replace(self.cfg, seed=int(seed))
        return fit_regression_mlp(*data.flat(), cfg).predict
