import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from ioexai.regressors import FitConfig, fit_ensemble
from ioexai.shapley import (
    BackgroundSet,
    EnumerationLimitError,
    EvaluationCounter,
    coalition_value,
    global_importance,
    shapley_exact,
    shapley_exact_many,
    shapley_permutation_oracle,
    shapley_weight,
    shapley_weight_binomial,
    shapley_weight_exact,
)


def linear(coef, intercept=0.0):
    coef = np.asarray(coef, dtype=float)
    return lambda X: intercept + X @ coef


def zero_background(n):
    return BackgroundSet(np.zeros((1, n)), tuple(f"x{i}" for i in range(n)))


def brute_force_shapley(f, x, means):
    """Textbook definition, one coalition at a time, in exact rational weights."""
    n = len(x)
    phi = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        total = 0.0
        for size in range(n):
            for coalition in itertools.combinations(others, size):
                weight = Fraction(math.factorial(size) * math.factorial(n - size - 1), math.factorial(n))
                with_i = np.array(means, dtype=float)
                with_i[list(coalition) + [i]] = np.asarray(x)[list(coalition) + [i]]
                without = np.array(means, dtype=float)
                without[list(coalition)] = np.asarray(x)[list(coalition)]
                total += float(weight) * (f(with_i[None, :])[0] - f(without[None, :])[0])
        phi.append(total)
    return np.array(phi)


def test_coalition_value_examples():
    f = linear([2.0, 3.0])
    bg = zero_background(2)
    assert coalition_value(f, [1.0, 1.0], {0}, bg) == 2.0
    assert coalition_value(f, [1.0, 1.0], set(), bg) == 0.0
    assert coalition_value(f, [1.0, 1.0], {0, 1}, bg) == 5.0
    with pytest.raises(IndexError):
        coalition_value(f, [1.0, 1.0], {2}, bg)


def test_weights():
    assert shapley_weight(3, 1) == pytest.approx(1 / 6)
    assert shapley_weight(1, 0) == 1.0
    assert shapley_weight_exact(3, 1) == Fraction(1, 6)
    for n in range(1, 9):
        for c in range(n):
            assert shapley_weight_exact(n, c) == shapley_weight_binomial(n, c)
        # one player's coalitions: C(n-1, c) of each size
        assert sum(math.comb(n - 1, c) * shapley_weight_exact(n, c) for c in range(n)) == 1
    with pytest.raises(ValueError):
        shapley_weight(3, 3)


def test_linear_two_feature_example():
    e = shapley_exact(linear([2.0, 3.0]), [1.0, 1.0], zero_background(2))
    np.testing.assert_allclose(e.phi, [2.0, 3.0], atol=1e-12)
    assert e.base_value == 0.0
    for n_perm in (1, 7, 50):
        p = shapley_permutation_oracle(linear([2.0, 3.0]), [1.0, 1.0], zero_background(2), n_perm, seed=n_perm)
        np.testing.assert_allclose(p.phi, [2.0, 3.0], atol=1e-12)


def test_product_example():
    f = lambda X: X[:, 0] * X[:, 1]  # noqa: E731
    e = shapley_exact(f, [1.0, 1.0], zero_background(2))
    np.testing.assert_allclose(e.phi, [0.5, 0.5], atol=1e-12)


def test_matches_textbook_enumeration():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 4))
    y = X[:, 0] * X[:, 1] + np.abs(X[:, 2]) - X[:, 3]
    model = fit_ensemble(X, y, "random_forest", FitConfig(n_estimators=5, max_depth=4, seed=3))
    bg = BackgroundSet(X, ("a", "b", "c", "d"))
    x = rng.normal(size=4)
    np.testing.assert_allclose(shapley_exact(model, x, bg).phi, brute_force_shapley(model.predict, x, bg.means), atol=1e-12)


def test_dummy_and_efficiency_on_forest():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 5))
    X[:, 2] = 0.7  # constant in training: no split can use it
    y = X[:, 0] + X[:, 1] ** 2
    model = fit_ensemble(X, y, "extra_trees", FitConfig(n_estimators=10, seed=5))
    assert all(2 not in t.used_features() for t in model.trees)
    bg = BackgroundSet(rng.normal(size=(30, 5)), tuple("abcde"))
    for e in shapley_exact_many(model, rng.normal(size=(10, 5)), bg):
        assert e.phi[2] == 0.0
        assert e.efficiency_gap <= 1e-9
        assert e.prediction == model.predict(e.instance[None, :])[0]


def test_symmetry_and_linearity():
    bg = BackgroundSet(np.array([[0.5, 0.5, 1.0], [1.5, 1.5, -1.0]]), ("a", "b", "c"))
    f = lambda X: X[:, 0] + X[:, 1] + X[:, 0] * X[:, 1] * X[:, 2]  # noqa: E731
    g = lambda X: np.sin(X[:, 2]) * X[:, 0]  # noqa: E731
    x = np.array([2.0, 2.0, 3.0])
    e = shapley_exact(f, x, bg)
    assert e.phi[0] == pytest.approx(e.phi[1], abs=1e-12)
    both = shapley_exact(lambda X: f(X) + g(X), x, bg)
    np.testing.assert_allclose(both.phi, e.phi + shapley_exact(g, x, bg).phi, atol=1e-12)


def test_linear_identity_with_mean_background():
    rng = np.random.default_rng(8)
    coef = rng.normal(size=6)
    bg = BackgroundSet(rng.normal(size=(40, 6)), tuple("abcdef"))
    X = rng.normal(size=(20, 6))
    for e in shapley_exact_many(linear(coef, 1.5), X, bg):
        np.testing.assert_allclose(e.phi, coef * (e.instance - bg.means), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_exact_equals_exhaustive_permutations(n):
    rng = np.random.default_rng(n)
    X = rng.normal(size=(50, n))
    y = np.prod(X[:, : min(n, 2)], axis=1) + X[:, -1]
    model = fit_ensemble(X, y, "gradient_boosting", FitConfig(n_estimators=8, seed=n))
    bg = BackgroundSet(X[:20], tuple(f"x{i}" for i in range(n)))
    x = rng.normal(size=n)
    exact = shapley_exact(model, x, bg)
    perm = shapley_permutation_oracle(model, x, bg, exhaustive=True)
    np.testing.assert_allclose(perm.phi, exact.phi, atol=1e-9)


def test_sampled_permutations_within_three_standard_errors():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 5))
    y = X[:, 0] * X[:, 1] + np.maximum(X[:, 2], 0) - 0.5 * X[:, 3] + 0.1 * X[:, 4]
    model = fit_ensemble(X, y, "extra_trees", FitConfig(n_estimators=20, max_depth=6, seed=9))
    bg = BackgroundSet.from_rows(X, tuple("abcde"), cap=100, seed=1)
    x = np.array([1.2, -0.7, 0.4, 2.0, -1.0])
    exact = shapley_exact(model, x, bg)
    est = shapley_permutation_oracle(model, x, bg, n_permutations=10_000, seed=123)
    assert np.all(np.abs(est.phi - exact.phi) <= 3 * est.stderr + 1e-12)
    again = shapley_permutation_oracle(model, x, bg, n_permutations=10_000, seed=123)
    np.testing.assert_array_equal(again.phi, est.phi)


def test_enumeration_guard():
    bg = zero_background(21)
    with pytest.raises(EnumerationLimitError, match="permutation"):
        shapley_exact(lambda X: X.sum(axis=1), np.ones(21), bg)


def test_counter_counts_coalitions():
    counter = EvaluationCounter()
    shapley_exact_many(linear([1.0, 1.0, 1.0]), np.ones((70, 3)), zero_background(3), counter)
    assert counter.coalitions == 8 * 70
    assert counter.instances == 70


def test_global_importance_cases():
    bg = zero_background(3)
    only_b = lambda X: 4.0 * X[:, 1]  # noqa: E731
    imp = global_importance(only_b, np.random.default_rng(0).normal(size=(10, 3)), bg)
    assert imp.rank[0] == 1
    assert imp.mean_abs_phi[0] == 0.0 and imp.mean_abs_phi[2] == 0.0
    one = global_importance(linear([1.0, -2.0, 3.0]), np.array([[1.0, 1.0, 1.0]]), bg)
    np.testing.assert_allclose(one.mean_abs_phi, [1.0, 2.0, 3.0])
    assert one.rank == (2, 1, 0)


def test_global_importance_finds_dominant_drivers():
    from ioexai.dataset import Dataset, SessionRecord

    rng = np.random.default_rng(6)
    n = 300
    sinr = rng.uniform(-5, 25, n)
    rssi = rng.uniform(-110, -50, n)
    other = rng.normal(size=(n, 5))
    cqi = np.clip(np.round(0.4 * sinr + 0.08 * (rssi + 80) + 5), 0, 15)
    records = [
        SessionRecord(float(k), 1 + k % 3, abs(other[k, 0]) * 10, rssi[k], rssi[k] - 30.8, -10 + other[k, 1],
                      sinr[k], int(cqi[k]), 50 + other[k, 2], 0.4 + 0.01 * other[k, 3])
        for k in range(n)
    ]
    ds = Dataset(records)
    names = ("speed_kmh", "rssi_dbm", "rsrq_db", "sinr_db", "dl_mbps", "ul_mbps", "cell_id")
    model = fit_ensemble(ds.matrix(names), ds.column("cqi"), "extra_trees", FitConfig(n_estimators=30, seed=2))
    bg = BackgroundSet.from_rows(ds.matrix(names), names, cap=100)
    imp = global_importance(model, ds, bg)
    assert {imp.feature_names[i] for i in imp.rank[:2]} == {"sinr_db", "rssi_dbm"}


def test_background_validation():
    with pytest.raises(ValueError):
        BackgroundSet(np.empty((0, 2)), ("a", "b"))
    with pytest.raises(ValueError):
        BackgroundSet(np.ones((2, 2)), ("a",))
    sub = BackgroundSet.from_rows(np.arange(1000.0).reshape(500, 2), ("a", "b"), cap=200, seed=3)
    assert sub.data.shape == (200, 2)
    same = BackgroundSet.from_rows(np.arange(1000.0).reshape(500, 2), ("a", "b"), cap=200, seed=3)
    np.testing.assert_array_equal(sub.data, same.data)
