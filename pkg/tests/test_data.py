import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simpi.data import (IntervalModel, ReplicatedDataset, coverage_and_width, empirical_quantile,
                        hit_rates, split_disjoint, split_replicates)


def const_model(lo, hi):
    return IntervalModel(lambda X: (np.full(len(X), lo, float), np.full(len(X), hi, float)))


def small_data(n=10, r=3, seed=0):
    rng = np.random.default_rng(seed)
    return ReplicatedDataset(np.linspace(0, 1, n), [rng.normal(size=r) for _ in range(n)])


class TestReplicatedDataset:
    def test_shapes_and_means(self):
        d = ReplicatedDataset([0.1, 0.2], [[1, 3], [2, 2, 5]])
        assert (d.n, d.d) == (2, 1)
        assert d.r.tolist() == [2, 3]
        assert np.allclose(d.ybar, [2, 3])

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            ReplicatedDataset([0.1, 0.2], [[1]])
        with pytest.raises(ValueError):
            ReplicatedDataset([0.1], [[]])

    def test_immutable(self):
        d = small_data()
        with pytest.raises(ValueError):
            d.x[0, 0] = 5.0

    def test_csv_round_trip(self, tmp_path):
        d = ReplicatedDataset(np.array([[0.3, 1.0], [0.7, -2.5]]), [[1.5, 0.1 + 0.2], [np.pi]])
        p = tmp_path / "d.csv"
        d.to_csv(p)
        assert ReplicatedDataset.from_csv(p) == d
        header = p.read_text().splitlines()[0]
        assert header == "point_id,x_1,x_2,rep_id,y"

    def test_csv_to_open_file(self):
        buf = io.StringIO()
        small_data(2, 2).to_csv(buf)
        assert len(buf.getvalue().splitlines()) == 5


class TestSplits:
    def test_sizes_disjoint_union(self):
        d = small_data(10)
        a, b = split_disjoint(d, 0.6, seed=3)
        assert (a.n, b.n) == (6, 4)
        xa, xb = set(a.x[:, 0]), set(b.x[:, 0])
        assert not xa & xb
        assert xa | xb == set(d.x[:, 0])

    def test_two_points(self):
        a, b = split_disjoint(small_data(2), 0.5, seed=0)
        assert (a.n, b.n) == (1, 1)

    def test_deterministic(self):
        d = small_data(10)
        assert split_disjoint(d, 0.6, 7)[0] == split_disjoint(d, 0.6, 7)[0]

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate split"):
            split_disjoint(small_data(3), 0.01, 0)

    def test_keeps_replications_together(self):
        d = small_data(10, r=4)
        a, _ = split_disjoint(d, 0.5, 1)
        for xi, yi in zip(a.x[:, 0], a.y):
            j = int(np.flatnonzero(d.x[:, 0] == xi)[0])
            assert np.array_equal(yi, d.y[j])

    def test_replicate_split(self):
        a, b = split_replicates(small_data(5, r=5), 0.6)
        assert a.r.tolist() == [3] * 5 and b.r.tolist() == [2] * 5


class TestEmpiricalQuantile:
    def test_examples(self):
        assert empirical_quantile([1, 2, 3, 4, 5], 0.5) == 3
        vals = np.arange(1, 100)[::-1]
        assert empirical_quantile(vals, 0.95 * (1 + 1 / 99)) == 95
        assert math.isinf(empirical_quantile([7], 1.5))

    def test_errors(self):
        with pytest.raises(ValueError):
            empirical_quantile([], 0.5)
        with pytest.raises(ValueError):
            empirical_quantile([1.0], 0.0)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.floats(0.01, 1.0), st.floats(0.01, 1.0),
           st.randoms())
    def test_monotone_and_permutation_invariant(self, vals, a, b, rnd):
        lo, hi = sorted((a, b))
        assert empirical_quantile(vals, lo) <= empirical_quantile(vals, hi)
        shuffled = list(vals)
        rnd.shuffle(shuffled)
        assert empirical_quantile(shuffled, hi) == empirical_quantile(vals, hi)
        assert empirical_quantile(vals, 1.0) == max(vals)


class TestCoverage:
    def test_full_cover(self):
        d = ReplicatedDataset([0, 1], [[0, 10], [5, 3]])
        assert coverage_and_width(const_model(0, 10), d) == (1.0, 10.0)

    def test_half(self):
        d = ReplicatedDataset([0, 1], [[1, 2], [8, 9]])
        cr, _ = coverage_and_width(const_model(0, 3), d)
        assert cr == 0.5

    def test_boundary_counts(self):
        d = ReplicatedDataset([0.0], [[2.5]])
        assert coverage_and_width(const_model(2.5, 2.5), d) == (1.0, 0.0)

    def test_unequal_replications(self):
        d = ReplicatedDataset([0, 1], [[1], [1, 5, 5, 5]])
        assert hit_rates(np.array([0.0, 0.0]), np.array([2.0, 2.0]), d).tolist() == [1.0, 0.25]

    @settings(max_examples=50)
    @given(st.integers(0, 10_000), st.floats(0, 3), st.floats(0, 3))
    def test_widening_never_lowers_coverage(self, seed, a, b):
        d = small_data(8, 5, seed)
        inner = const_model(-a, a)
        outer = const_model(-a - b, a + b)
        cr1, w1 = coverage_and_width(inner, d)
        cr2, w2 = coverage_and_width(outer, d)
        assert 0 <= cr1 <= cr2 <= 1 and 0 <= w1 <= w2

    def test_interval_model_eval(self):
        m = const_model(1, 2)
        assert m.eval(0.5) == (1.0, 2.0)
