"""Stochastic kriging: GP trend + squared-exponential covariance + intrinsic noise.

The fitted model predicts the mean response through the kriging
posterior and turns it into a Gaussian prediction interval for a new
simulation output.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special, stats

from .data import IntervalModel, ReplicatedDataset, as_points

log = logging.getLogger(__name__)

NUGGET_START = 1e-10
NUGGET_MAX = 1e-4


class CovarianceSingular(np.linalg.LinAlgError):
    pass


def trend_basis(X: np.ndarray, degree: int) -> np.ndarray:
    """Polynomial basis without cross terms: 1, x_k, x_k^2, ..., x_k^degree."""
    X = as_points(X)
    cols = [np.ones(X.shape[0])]
    for p in range(1, degree + 1):
        cols.extend(X[:, k] ** p for k in range(X.shape[1]))
    return np.column_stack(cols)


def sq_exp(A: np.ndarray, B: np.ndarray, theta: float) -> np.ndarray:
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-0.5 * d2 / theta**2)


def _factor(S: np.ndarray):
    """Cholesky of S with an escalating relative nugget; returns (factor, nugget)."""
    scale = float(np.mean(np.diag(S)))
    if not scale > 0:
        scale = 1.0
    rel = NUGGET_START
    n = S.shape[0]
    while rel <= NUGGET_MAX * (1 + 1e-12):
        nugget = rel * scale
        try:
            return linalg.cholesky(S + nugget * np.eye(n), lower=True), nugget
        except linalg.LinAlgError:
            rel *= 10
    raise CovarianceSingular("covariance singular: Cholesky failed at the largest nugget")


@dataclass(frozen=True)
class SKHyperparams:
    beta: np.ndarray
    tau2: float
    theta: float
    intrinsic: np.ndarray  # per-replicate variance at each design point

    def __post_init__(self):
        if not (self.tau2 > 0 and self.theta > 0):
            raise ValueError("tau2 and theta must be positive")
        if np.any(np.asarray(self.intrinsic) < 0):
            raise ValueError("intrinsic variances must be nonnegative")


@dataclass(frozen=True, eq=False)
class GPFit:
    """Factored kriging posterior for fixed hyperparameters."""

    x: np.ndarray
    ybar: np.ndarray
    degree: int
    beta: np.ndarray
    tau2: float
    theta: float
    noise: np.ndarray  # diagonal of c(x, x)
    chol: np.ndarray
    nugget: float
    alpha: np.ndarray  # Sigma^{-1} (ybar - mu(x))

    @classmethod
    def build(cls, x, ybar, degree, beta, tau2, theta, noise):
        S = tau2 * sq_exp(x, x, theta) + np.diag(noise)
        chol, nugget = _factor(S)
        resid = ybar - trend_basis(x, degree) @ beta
        alpha = linalg.cho_solve((chol, True), resid)
        return cls(x, ybar, degree, beta, tau2, theta, noise, chol, nugget, alpha)

    def covariance(self) -> np.ndarray:
        return self.tau2 * sq_exp(self.x, self.x, self.theta) + np.diag(self.noise)

    def posterior(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = as_points(X)
        if X.shape[1] != self.x.shape[1]:
            raise ValueError(f"expected inputs of dimension {self.x.shape[1]}, got {X.shape[1]}")
        k = self.tau2 * sq_exp(X, self.x, self.theta)
        mean = trend_basis(X, self.degree) @ self.beta + k @ self.alpha
        v = linalg.solve_triangular(self.chol, k.T, lower=True)
        var = self.tau2 - (v**2).sum(axis=0)
        neg = var < 0
        if np.any(neg):
            log.debug("clamped %d negative posterior variances (min %.3g)", neg.sum(), var.min())
            var = np.where(neg, 0.0, var)
        return mean, var


def gls_loglik(x, ybar, F, tau2, theta, noise):
    """Profile log-likelihood with the GLS trend; returns (loglik, beta)."""
    S = tau2 * sq_exp(x, x, theta) + np.diag(noise)
    try:
        chol, _ = _factor(S)
    except CovarianceSingular:
        return -np.inf, None
    cf = (chol, True)
    SiF = linalg.cho_solve(cf, F)
    A = F.T @ SiF
    try:
        beta = np.linalg.solve(A, SiF.T @ ybar)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(A, SiF.T @ ybar, rcond=None)[0]
    res = ybar - F @ beta
    quad = res @ linalg.cho_solve(cf, res)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (logdet + quad + len(ybar) * np.log(2 * np.pi)), beta


def _mean_nn_distance(x: np.ndarray) -> float:
    if x.shape[0] < 2:
        return 0.0
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def _fit_hyper(x, ybar, noise, degree, restarts, rng, fit_noise=False):
    """Multi-start bounded MLE over log tau2, log theta (and log nugget if fit_noise)."""
    F = trend_basis(x, degree)
    n = len(ybar)
    if n < F.shape[1]:
        raise ValueError(f"{n} design points cannot identify {F.shape[1]} trend terms")
    span = float(np.max(np.ptp(x, axis=0))) if n > 1 else 1.0
    span = span if span > 0 else 1.0
    # lengthscales below the design spacing are unidentifiable from the means
    theta_lo = max(span * 1e-2, _mean_nn_distance(x))
    vscale = max(float(np.var(ybar)), float(np.mean(noise)), 1e-12 * max(1.0, float(np.mean(ybar**2))))
    bounds = [(np.log(vscale * 1e-6), np.log(vscale * 1e2)), (np.log(theta_lo), np.log(span * 10))]
    if fit_noise:
        bounds.append((np.log(vscale * 1e-8), np.log(vscale * 10)))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def unpack(p):
        tau2, theta = np.exp(p[0]), np.exp(p[1])
        nz = noise + (np.exp(p[2]) if fit_noise else 0.0)
        return tau2, theta, nz

    def nll(p):
        ll, _ = gls_loglik(x, ybar, F, *unpack(p))
        return -ll if np.isfinite(ll) else 1e300

    starts = [np.clip(np.array([np.log(vscale), np.log(span / max(n, 2) ** (1 / x.shape[1]) * 2)]
                               + ([np.log(vscale * 1e-2)] if fit_noise else [])), lo, hi)]
    for _ in range(max(restarts, 1) - 1):
        starts.append(rng.uniform(lo, hi))
    best, trace = None, []
    for p0 in starts:
        f0 = nll(p0)
        res = optimize.minimize(nll, p0, method="L-BFGS-B", bounds=bounds)
        p, f = (res.x, res.fun) if res.fun <= f0 else (p0, f0)
        trace.append((-f0, -f))
        if best is None or f < best[1]:
            best = (p, f)
    tau2, theta, nz = unpack(best[0])
    _, beta = gls_loglik(x, ybar, F, tau2, theta, nz)
    if beta is None:
        raise CovarianceSingular("covariance singular at the fitted hyperparameters")
    return tau2, theta, nz, beta, -best[1], trace


@dataclass(frozen=True, eq=False)
class SKModel:
    """Fitted stochastic kriging model.

    ``gp`` is the posterior for the mean response. ``variance_gp`` (optional)
    smooths the per-point sample variances so the intrinsic noise at a new
    input can be predicted.
    """

    hyper: SKHyperparams
    gp: GPFit
    r: np.ndarray
    loglik: float
    restart_trace: list = field(default_factory=list)
    variance_gp: GPFit | None = None

    def posterior(self, X) -> tuple[np.ndarray, np.ndarray]:
        return self.gp.posterior(X)

    def intrinsic_variance(self, X) -> np.ndarray:
        """Predicted per-replicate output variance at ``X``."""
        if self.variance_gp is None:
            raise ValueError("model was fitted without an intrinsic-variance model")
        mean, _ = self.variance_gp.posterior(X)
        return np.exp(mean)

    def to_json(self) -> str:
        h = self.hyper
        d = {
            "beta": h.beta.tolist(), "tau2": h.tau2, "theta": h.theta,
            "intrinsic": h.intrinsic.tolist(), "degree": self.gp.degree,
            "x": self.gp.x.tolist(), "ybar": self.gp.ybar.tolist(), "r": self.r.tolist(),
            "nugget": self.gp.nugget, "loglik": self.loglik,
        }
        if self.variance_gp is not None:
            v = self.variance_gp
            d["log_variance_model"] = {"beta": v.beta.tolist(), "tau2": v.tau2, "theta": v.theta,
                                       "noise": v.noise.tolist(), "degree": v.degree}
        return json.dumps(d, sort_keys=True)


def fit_sk(train: ReplicatedDataset, basis_degree: int = 1, restarts: int = 10, seed: int = 0,
           variance_model: bool = True, smooth_intrinsic: bool = True) -> SKModel:
    """Fit trend, process variance and lengthscale by maximum likelihood.

    Intrinsic variance at each design point is the replicate sample
    variance; it enters the covariance of the sample means divided by r_i.
    When ``variance_model`` is set, a second kriging model is fitted to
    the log sample variances (noise variance trigamma((r_i - 1)/2), the
    normal-theory value, plus a fitted nugget) so the intrinsic variance can be predicted at
    new inputs. With ``smooth_intrinsic`` its predictions at the design
    points replace the raw sample variances in the covariance of the means.
    """
    if np.any(train.r < 2):
        raise ValueError("intrinsic variance unidentifiable: every point needs r_i >= 2")
    rng = np.random.default_rng(seed)
    x, ybar, r = train.x, train.ybar, train.r
    c = train.sample_var()
    vgp = _fit_log_variance(x, c, r, max(restarts // 2, 2), rng) if variance_model else None
    # smoothed variances keep a zero sample variance from pinning the mean
    c_used = np.exp(vgp.posterior(x)[0]) if (vgp is not None and smooth_intrinsic) else c
    tau2, theta, _, beta, ll, trace = _fit_hyper(x, ybar, c_used / r, basis_degree, restarts, rng)
    hyper = SKHyperparams(beta, tau2, theta, c)
    gp = GPFit.build(x, ybar, basis_degree, beta, tau2, theta, c_used / r)
    return SKModel(hyper, gp, r, ll, trace, vgp)


def _log_var_targets(c: np.ndarray, r: np.ndarray):
    """Bias-corrected log sample variances and their normal-theory variances."""
    pos = c[c > 0]
    floor = pos.min() / 10 if pos.size else 1e-12
    k = (r - 1) / 2.0
    # E[log s^2] = log sigma^2 + digamma(k) - log(k) for normal replicates
    target = np.log(np.maximum(c, floor)) - (special.digamma(k) - np.log(k))
    return target, special.polygamma(1, k)


def _fit_log_variance(x, c, r, restarts, rng) -> GPFit:
    target, noise = _log_var_targets(c, r)
    if x.shape[0] < 3 or np.ptp(target) == 0:
        return _constant_gp(x, float(np.mean(target)))
    # extra fitted nugget: heavy-tailed outputs scatter log s^2 beyond normal theory
    tau2, theta, nz, beta, _, _ = _fit_hyper(x, target, noise, 1, restarts, rng, fit_noise=True)
    return GPFit.build(x, target, 1, beta, tau2, theta, nz)


def _constant_gp(x, value):
    n = x.shape[0]
    return GPFit.build(x, np.full(n, value), 0, np.array([value]), 1e-12, 1.0, np.ones(n))


def sk_posterior(model: SKModel, x) -> tuple[float, float]:
    """Posterior mean and variance of the mean response at a single point."""
    mean, var = model.posterior(np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    return float(mean[0]), float(var[0])


def sk_interval(model: SKModel, x, alpha: float, intrinsic: bool = True) -> tuple[float, float]:
    """``mean -/+ z_{1-alpha/2} * sd`` at one point.

    With ``intrinsic`` the sd also includes the predicted replicate
    variance, giving an interval for a new output rather than the mean.
    """
    L, U = sk_interval_model(model, alpha, intrinsic).predict(np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    return float(L[0]), float(U[0])


def sk_interval_model(model: SKModel, alpha: float, intrinsic: bool = True) -> IntervalModel:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    z = stats.norm.ppf(1 - alpha / 2)

    def bounds(X):
        mean, var = model.posterior(X)
        if intrinsic:
            var = var + model.intrinsic_variance(X)
        half = z * np.sqrt(var)
        return mean - half, mean + half

    return IntervalModel(bounds, {"method": "SK", "alpha": alpha, "intrinsic": intrinsic,
                                  "tau2": model.hyper.tau2, "theta": model.hyper.theta})


__all__ = ["SKHyperparams", "SKModel", "GPFit", "fit_sk", "sk_posterior", "sk_interval",
           "sk_interval_model", "trend_basis", "sq_exp", "gls_loglik", "CovarianceSingular"]
