"""Prediction intervals for the steady-state M/M/1 queue length.

We run the queue at seven arrival rates with 50 replications each, fit
stochastic kriging, a quantile regression forest and split conformal
prediction, and compare each interval with the exact geometric
quantiles of the output.

    python demos/mm1_intervals.py
"""
import numpy as np
from scipy import stats

from simpi import (QRFConfig, TrainConfig, coverage_and_width, fit_sk, generate_design, qrf_interval_model,
                   sk_interval_model, split_conformal)
from simpi.forest import fit_qrf_dataset
from simpi.neural import MLPRegressor

ALPHA = 0.05

# Training design: x = 0.3, 0.4, ..., 0.9 with 50 runs at each rate.
design = np.round(np.arange(0.3, 0.91, 0.1), 10)
train = generate_design("mm1", design, 50, seed=1)
print("sample means :", np.round(train.ybar, 2))
print("exact means  :", np.round(design / (1 - design), 2))

models = {
    "SK": sk_interval_model(fit_sk(train, seed=1), ALPHA),
    "QRF": qrf_interval_model(fit_qrf_dataset(train, QRFConfig(seed=1)), ALPHA),
    "SCP": split_conformal(train, MLPRegressor(TrainConfig(epochs=1000)), ALPHA, seed=1),
}

# Split conformal calibrates on one run per design point. Seven residuals
# cannot support a 95% bound (it needs the ceil(0.95 * 8) = 8th of 7), so
# its interval is unbounded here; denser designs fix this.

# The output at x is geometric, so the central 95% band is known exactly.
grid = np.linspace(0.3, 0.9, 7)
lo = stats.geom.ppf(ALPHA / 2, 1 - grid) - 1
hi = stats.geom.ppf(1 - ALPHA / 2, 1 - grid) - 1
print("\n   x   exact       " + "  ".join(f"{m:>14s}" for m in models))
for i, x in enumerate(grid):
    cells = []
    for m in models.values():
        L, U = m.eval(x)
        cells.append(f"[{L:5.1f},{U:6.1f}]")
    print(f"{x:5.2f} [{lo[i]:3.0f},{hi[i]:4.0f}]   " + "  ".join(f"{c:>14s}" for c in cells))

# Held-out check on 50 uniform rates with 100 runs each.
xt = np.random.default_rng(2).uniform(0.3, 0.9, 50)
test = generate_design("mm1", xt, 100, seed=3)
print()
for name, m in models.items():
    cr, iw = coverage_and_width(m, test)
    print(f"{name:4s} coverage {cr:.3f}  width {iw:.2f}")
