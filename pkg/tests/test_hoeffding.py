import itertools
import math

import numpy as np
import pytest

from activeu.errors import ArgumentError
from activeu.hoeffding import degeneracy_check, estimate_h1
from activeu.kernels import builtin_kernel, eval_kernel

GINI = builtin_kernel("gini")


def test_examples():
    assert estimate_h1([1, 2, 3], GINI)(0.0) == pytest.approx(2.0)
    assert estimate_h1([4.5], GINI)(4.5) == 0
    mean = estimate_h1([1.0, 2.0], builtin_kernel("mean"))
    assert mean(7.25) == 7.25


def test_pilot_too_small():
    with pytest.raises(ArgumentError):
        estimate_h1([1.0], builtin_kernel("third-central-moment"))


def test_degeneracy_examples():
    with pytest.warns(RuntimeWarning, match="degenerate"):
        assert degeneracy_check(estimate_h1([1, 2, 3], builtin_kernel("mean")), [2, 2, 2]) == 0
    # symmetric two-point pilot: h1(0) = h1(10) = 5, a degenerate-looking case
    with pytest.warns(RuntimeWarning, match="degenerate"):
        assert degeneracy_check(estimate_h1([0, 10], GINI), [0, 10]) == 0
    ev = estimate_h1([0, 1, 10], GINI)
    vals = [np.mean([abs(p - q) for q in (0, 1, 10)]) for p in (0, 1, 10)]
    assert degeneracy_check(ev, [0, 1, 10]) == pytest.approx(np.var(vals, ddof=1))
    assert degeneracy_check(ev, [0, 1, 10]) > 0


@pytest.mark.parametrize("name", ["gini", "wilcoxon-pair", "third-central-moment", "kendall"])
def test_matches_combinatorial_definition(name):
    k = builtin_kernel(name)
    rng = np.random.default_rng(1)
    m = 9
    pilot = rng.integers(0, 5, (m, 2)).astype(float) if k.value_dim == 2 else rng.normal(size=m)
    queries = rng.integers(0, 5, (6, 2)).astype(float) if k.value_dim == 2 else rng.normal(size=6)
    ev = estimate_h1(pilot, k)
    got = ev(queries)
    for q, g in zip(queries, got):
        tuples = list(itertools.combinations(range(m), k.degree - 1))
        brute = np.mean([eval_kernel(k, [q] + [pilot[i] for i in t]) for t in tuples])
        assert g == pytest.approx(brute, rel=1e-12, abs=1e-12)


def test_consistency_with_pilot_size():
    """Mean squared deviation from a large-pilot reference shrinks from
    pilot 50 to pilot 200."""
    rng = np.random.default_rng(2)
    grid = np.linspace(-2, 2, 21)
    ref = estimate_h1(rng.normal(size=2000), GINI)(grid)
    dev = {}
    for m in (50, 200):
        errs = [np.mean((estimate_h1(rng.normal(size=m), GINI)(grid) - ref) ** 2)
                for _ in range(500)]
        dev[m] = np.mean(errs)
    assert dev[200] < dev[50]


def test_pilot_cap_is_deterministic():
    y = np.random.default_rng(3).normal(size=5000)
    a = estimate_h1(y, GINI, seed=7)
    b = estimate_h1(y, GINI, seed=7)
    assert a.n_pilot <= 2000
    assert np.array_equal(a(np.linspace(-1, 1, 5)), b(np.linspace(-1, 1, 5)))
