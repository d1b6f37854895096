"""Choosing among interval networks with a coverage guarantee.

Twenty interval networks are trained with increasing coverage penalties.
A held-out validation set scores each one, and the three selectors pick
the narrowest network whose validation coverage clears 95% plus their
respective margins. The exact coverage of each pick is then computed
from the geometric law.

    python demos/validator_selection.py
"""
import numpy as np

from simpi import SelectionConfig, TrainConfig, coverage_matrix, generate_design, select, split_disjoint
from simpi.neural import default_lambda_grid, train_candidates


def exact_coverage(model, n=200_000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.3, 0.9, n)
    y = rng.geometric(1 - x) - 1
    L, U = model.predict(x)
    return np.mean((y >= L) & (y <= U))


x = np.random.default_rng(0).uniform(0.3, 0.9, 300)
data = generate_design("mm1", x, 5, seed=1)
fit_part, val_part = split_disjoint(data, 0.6, seed=2)
print(f"{fit_part.n} training points, {val_part.n} validation points, 5 runs each")

cands = train_candidates(fit_part, default_lambda_grid(), TrainConfig(epochs=500, seed=3))
stats = coverage_matrix(cands.models, val_part)
print("\n lambda   val cov   sd     width")
for lam, cr, sd, w in zip(cands.lams, stats.cr, stats.sigma, stats.widths):
    print(f"{lam:7.2f}   {cr:.3f}   {sd:.3f}  {w:6.2f}")

print()
for mode in ("naive", "normalized", "unnormalized"):
    res = select(cands.models, val_part, SelectionConfig(), mode, stats=stats)
    c = res.chosen()
    if not c.feasible:
        print(f"{mode:12s} no candidate clears the bar")
        continue
    true_cov = exact_coverage(cands.models[c.index])
    print(f"{mode:12s} picks lambda={cands.lams[c.index]:.2f} (margin {c.margin:.4f}): "
          f"val width {c.width:.2f}, exact coverage {true_cov:.3f}")
