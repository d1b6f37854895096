"""Independent reference computations shared by unit and acceptance tests."""
import numpy as np

from simpi.neural import init_params, soft_loss


def finite_difference_check(n_draws=50, step=1e-5, c0=5.0, seed=0):
    """Worst relative error between backprop and central differences over random draws.

    Error per draw is max|g - fd| / max(max|g|, max|fd|, 1e-6).
    """
    worst = 0.0
    for t in range(n_draws):
        rng = np.random.default_rng([seed, t])
        d, B, R = int(rng.integers(1, 3)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
        p = init_params(d, 20, 2, [rng]).take(0)
        p = p.with_flat(p.flat() + 0.3 * rng.normal(size=p.flat().size))
        x = rng.normal(size=(B, d))
        Y = rng.normal(size=(B, R))
        mask = rng.random((B, R)) < 0.8
        mask[:, 0] = True
        lam = float(rng.uniform(0.1, 10))
        _, g = soft_loss(p, x, Y, mask, lam, c0)
        g = g.flat()
        v0 = p.flat()
        fd = np.empty_like(v0)
        for k in range(v0.size):
            e = np.zeros_like(v0)
            e[k] = step
            fp, _ = soft_loss(p.with_flat(v0 + e), x, Y, mask, lam, c0)
            fm, _ = soft_loss(p.with_flat(v0 - e), x, Y, mask, lam, c0)
            fd[k] = (fp - fm) / (2 * step)
        err = np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), np.max(np.abs(fd)), 1e-6)
        worst = max(worst, float(err))
    return worst


def geometric_coverage(L, U, x):
    """Exact P(L(x) <= Y <= U(x)) for Y ~ Geometric on {0, 1, ...} with P(Y = k) = (1 - x) x^k."""
    L, U, x = np.broadcast_arrays(np.asarray(L, float), np.asarray(U, float), np.asarray(x, float))
    lo = np.maximum(np.ceil(L), 0)
    hi = np.floor(U)
    p = np.where(hi >= lo, x**lo - x ** (hi + 1), 0.0)
    return np.where(hi < 0, 0.0, p)


# one "CRITERION k: PASS|FAIL ..." line per acceptance check, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(k: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
