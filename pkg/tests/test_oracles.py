import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sqlearn.data import synth_classification, synth_regression
from sqlearn.losses import Dataset, LossKind, batch_losses, pointwise_grad
from sqlearn.oracles import (
    Objective, dual_bruteforce_oracle, erm_oracle, minibatch_oracle, smoothed_dual_weights,
    smoothed_oracle, superquantile_subgradient,
)
from sqlearn.tail_measures import superquantile


def dual_value(q, u, mu):
    n = u.size
    return float(q @ u - 0.5 * mu * np.sum((q - 1.0 / n) ** 2))


def theta_prime(lam, u, p, mu):
    n = u.size
    cap = 1.0 / (n * (1 - p))
    return 1.0 - np.sum(np.clip((u + mu / n - lam) / mu, 0.0, cap))


def fd_grad(f, w, rel=1e-5):
    g = np.zeros_like(w)
    for j in range(w.size):
        h = rel * (1.0 + abs(w[j]))
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


@pytest.fixture(scope="module")
def logit_data():
    return synth_classification(80, 4, 1.5, 3)


class TestErm:
    def test_symmetric_targets(self):
        D = Dataset(np.array([[1.0], [1.0]]), np.array([1.0, -1.0]))
        out = erm_oracle("squared", [0.0], D)
        assert out.value == 1.0
        np.testing.assert_array_equal(out.gradient, [0.0])

    def test_single_point(self):
        D = Dataset(np.array([[2.0, -1.0]]), np.array([1.0]), task="binary_classification")
        w = np.array([0.3, 0.7])
        out = erm_oracle("logistic", w, D)
        np.testing.assert_allclose(out.gradient, pointwise_grad("logistic", w, [2.0, -1.0], 1.0), rtol=1e-15)

    def test_ridge_gradient(self):
        D = Dataset(np.array([[1.0], [1.0]]), np.array([1.0, -1.0]))
        out = erm_oracle("squared", [2.0], D, lam=0.5)
        # mean of -2(y - w)x is 2w = 4; ridge gives 0.5 * 2
        np.testing.assert_allclose(out.gradient, [5.0])
        assert out.value == pytest.approx(0.5 * (1 + 9) + 0.25 * 4)


class TestSubgradient:
    def test_two_point_tail(self):
        # losses (0, 1) at w=1: only the second point carries weight
        D = Dataset(np.array([[1.0], [2.0]]), np.array([1.0, 3.0]))
        out = superquantile_subgradient("squared", [1.0], D, 0.5)
        assert out.value == 1.0
        np.testing.assert_allclose(out.gradient, pointwise_grad("squared", [1.0], [2.0], 3.0))
        assert out.diagnostics["delta"] == 0.0

    def test_level_zero_is_erm(self, logit_data, rng):
        for _ in range(10):
            w = rng.standard_normal(logit_data.d)
            a = superquantile_subgradient("logistic", w, logit_data, 0.0, 0.1)
            b = erm_oracle("logistic", w, logit_data, 0.1)
            assert a.value == pytest.approx(b.value, rel=1e-12)
            np.testing.assert_allclose(a.gradient, b.gradient, rtol=1e-12, atol=1e-14)

    def test_all_equal_losses(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        D = Dataset(X, np.zeros(4), task="binary_classification")
        for p in (0.1, 0.5, 0.9):
            a = superquantile_subgradient("logistic", [0.0, 0.0], D, p)
            b = erm_oracle("logistic", [0.0, 0.0], D)
            assert a.value == pytest.approx(b.value)
            np.testing.assert_allclose(a.gradient, b.gradient, atol=1e-15)

    def test_value_matches_tail_measure(self, logit_data, rng):
        w = rng.standard_normal(logit_data.d)
        u = batch_losses("logistic", w, logit_data)
        assert superquantile_subgradient("logistic", w, logit_data, 0.85).value == superquantile(u, 0.85)

    def test_subgradient_inequality(self, logit_data, rng):
        for _ in range(200):
            p = float(rng.uniform(0, 0.99))
            w, w2 = rng.standard_normal(logit_data.d), 2 * rng.standard_normal(logit_data.d)
            f1, g1 = superquantile_subgradient("logistic", w, logit_data, p)
            f2 = superquantile_subgradient("logistic", w2, logit_data, p).value
            assert f2 >= f1 + g1 @ (w2 - w) - 1e-9

    def test_invalid_level(self, logit_data):
        with pytest.raises(ValueError):
            superquantile_subgradient("logistic", np.zeros(4), logit_data, 1.0)


class TestDualWeights:
    def test_two_point_example(self, kernels):
        u = np.array([0.0, 1.0])
        q, lam = kernels.capped_simplex_weights(u, 1.0, 1.0)
        np.testing.assert_allclose(q, [0.0, 1.0], atol=1e-15)
        assert lam == pytest.approx(0.5)
        dw = smoothed_dual_weights(u, 0.5, 1.0)
        assert dw.lambda_star == pytest.approx(0.5)
        np.testing.assert_array_equal(dw.support, [1])

    def test_closed_form_two_point(self):
        # maximize q1*0 + (1-q1)*1 - (1/2)*2*(q1-1/2)^2 over q1 in [0, 1]
        grid = np.linspace(0, 1, 100001)
        vals = (1 - grid) - (grid - 0.5) ** 2
        assert grid[np.argmax(vals)] == 0.0

    def test_large_mu_uniform(self, rng):
        u = rng.standard_normal(30)
        q = smoothed_dual_weights(u, 0.7, 1e9).q
        np.testing.assert_allclose(q, 1 / 30, atol=1e-8)

    @pytest.mark.parametrize("p,mu", [(0.3, 0.01), (0.9, 1.0), (0.99, 100.0), (0.0, 0.5)])
    def test_constant_losses(self, p, mu):
        q = smoothed_dual_weights(np.full(9, 2.5), p, mu).q
        np.testing.assert_allclose(q, 1 / 9, atol=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            smoothed_dual_weights([1.0, 2.0], 0.5, 0.0)
        with pytest.raises(ValueError):
            smoothed_dual_weights([1.0, 2.0], 1.0, 1.0)
        with pytest.raises(ValueError):
            dual_bruteforce_oracle(np.zeros(51), 0.5, 1.0)

    def test_bruteforce_examples(self):
        np.testing.assert_allclose(dual_bruteforce_oracle([0.0, 1.0], 0.5, 1.0).q, [0.0, 1.0], atol=1e-10)
        np.testing.assert_allclose(dual_bruteforce_oracle(np.full(5, 3.0), 0.6, 0.2).q, 0.2, atol=1e-12)

    def test_agrees_with_bruteforce(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 51))
            u = rng.standard_normal(n) * rng.choice([0.1, 1.0, 10.0])
            p, mu = float(rng.uniform(0.01, 0.99)), float(10 ** rng.uniform(-3, 1))
            ref = dual_bruteforce_oracle(u, p, mu).q
            got = smoothed_dual_weights(u, p, mu).q
            assert np.max(np.abs(got - ref)) <= 1e-6

    def test_is_maximizer(self, rng):
        # no feasible pairwise transfer of mass improves the objective
        for _ in range(20):
            n = int(rng.integers(2, 30))
            u, p, mu = rng.standard_normal(n), float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.01, 2))
            q = smoothed_dual_weights(u, p, mu).q
            cap = 1 / (n * (1 - p))
            best = dual_value(q, u, mu)
            for i, j in itertools.permutations(range(n), 2):
                t = min(q[i], cap - q[j], 1e-3)
                if t > 0:
                    r = q.copy()
                    r[i] -= t
                    r[j] += t
                    assert dual_value(r, u, mu) <= best + 1e-12

    @settings(max_examples=200)
    @given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-1e3, 1e3)),
           st.floats(0.0, 0.999), st.floats(1e-4, 1e4))
    def test_feasibility(self, u, p, mu):
        n = u.size
        q = smoothed_dual_weights(u, p, mu).q
        cap = 1 / (n * (1 - p))
        assert abs(q.sum() - 1.0) <= 1e-9
        assert q.min() >= 0.0
        assert q.max() <= cap + 1e-12

    @settings(max_examples=100)
    @given(arrays(np.float64, st.integers(2, 40), elements=st.integers(-4, 4).map(float)),
           st.floats(0.01, 0.99), st.floats(1e-3, 10.0))
    def test_backends_agree_with_ties(self, u, p, mu):
        from sqlearn import _backend
        cap = 1 / (u.size * (1 - p))
        outs = [np.asarray(m.capped_simplex_weights(u, cap, mu)[0]) for m in _backend.available_backends().values()]
        for q in outs[1:]:
            np.testing.assert_allclose(q, outs[0], atol=1e-14)

    def test_theta_prime_monotone(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 40))
            u, p, mu = rng.standard_normal(n), float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.01, 3))
            cap = 1 / (n * (1 - p))
            pts = np.sort(np.concatenate([u + mu / n, u + mu / n - mu * cap]))
            vals = np.array([theta_prime(s, u, p, mu) for s in pts])
            assert np.all(np.diff(vals) >= -1e-12)
            lam = smoothed_dual_weights(u, p, mu).lambda_star
            assert abs(theta_prime(lam, u, p, mu)) <= 1e-9


class TestSmoothed:
    def test_two_point_value(self):
        D = Dataset(np.array([[1.0], [2.0]]), np.array([1.0, 3.0]))
        out = smoothed_oracle("squared", [1.0], D, 0.5, 1.0)
        assert out.value == pytest.approx(0.75)
        exact = superquantile_subgradient("squared", [1.0], D, 0.5).value
        assert out.value <= exact <= out.value + 0.5

    def test_sandwich(self, logit_data, rng):
        for _ in range(100):
            w = rng.standard_normal(logit_data.d) * 2
            p, mu = float(rng.uniform(0, 0.99)), float(10 ** rng.uniform(-3, 1))
            lo = smoothed_oracle("logistic", w, logit_data, p, mu).value
            f = superquantile_subgradient("logistic", w, logit_data, p).value
            assert lo <= f + 1e-9
            assert f <= lo + mu / 2 + 1e-9

    @pytest.mark.parametrize("p", [0.5, 0.9, 0.99])
    @pytest.mark.parametrize("mu", [0.01, 0.1, 1.0])
    def test_finite_differences(self, logit_data, rng, p, mu):
        worst = 0.0
        for _ in range(20):
            w = rng.standard_normal(logit_data.d)
            g = smoothed_oracle("logistic", w, logit_data, p, mu, 0.05).gradient
            fd = fd_grad(lambda v: smoothed_oracle("logistic", v, logit_data, p, mu, 0.05).value, w)
            worst = max(worst, np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g)))
        assert worst <= 1e-5

    def test_large_mu_matches_erm(self, logit_data, rng):
        for _ in range(10):
            w = rng.standard_normal(logit_data.d)
            a = smoothed_oracle("logistic", w, logit_data, 0.9, 1e9, 0.01)
            b = erm_oracle("logistic", w, logit_data, 0.01)
            assert a.value == pytest.approx(b.value, abs=1e-6)
            np.testing.assert_allclose(a.gradient, b.gradient, atol=1e-6)

    def test_level_zero_is_erm(self, logit_data, rng):
        w = rng.standard_normal(logit_data.d)
        a = smoothed_oracle("logistic", w, logit_data, 0.0, 0.3)
        b = erm_oracle("logistic", w, logit_data)
        assert a.value == pytest.approx(b.value, rel=1e-12)
        np.testing.assert_allclose(a.gradient, b.gradient, rtol=1e-12)

    def test_regression_kind(self, rng):
        D, _ = synth_regression(60, 6, 1)
        w = rng.standard_normal(6)
        g = smoothed_oracle("squared", w, D, 0.8, 0.5).gradient
        fd = fd_grad(lambda v: smoothed_oracle("squared", v, D, 0.8, 0.5).value, w)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


class TestMinibatch:
    def test_full_batch_identity(self, logit_data, rng):
        w = rng.standard_normal(logit_data.d)
        rows = np.arange(logit_data.n)
        a = minibatch_oracle("logistic", w, logit_data, rows, 0.8, 0.1, 0.02)
        b = smoothed_oracle("logistic", w, logit_data, 0.8, 0.1, 0.02)
        assert a.value == b.value
        np.testing.assert_array_equal(a.gradient, b.gradient)

    def test_single_point(self, logit_data, rng):
        w = rng.standard_normal(logit_data.d)
        x, y = logit_data.features[7], logit_data.targets[7]
        with pytest.warns(RuntimeWarning):
            out = minibatch_oracle("logistic", w, logit_data, [7], 0.8, 0.1)
        assert out.value == pytest.approx(batch_losses("logistic", w, logit_data)[7])
        np.testing.assert_allclose(out.gradient, pointwise_grad("logistic", w, x, y))

    def test_exact_flag(self, logit_data, rng):
        w = rng.standard_normal(logit_data.d)
        rows = np.arange(0, 40)
        out = minibatch_oracle("logistic", w, logit_data, rows, 0.8, None)
        assert out.value == superquantile_subgradient("logistic", w, logit_data.subset(rows), 0.8).value

    def test_small_batch_warning(self, logit_data):
        with pytest.warns(RuntimeWarning, match="fewer than one tail point"):
            minibatch_oracle("logistic", np.zeros(4), logit_data, [0, 1, 2], 0.9, 0.1)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            minibatch_oracle("logistic", np.zeros(4), logit_data, np.arange(10), 0.9, 0.1)

    def test_errors(self, logit_data):
        with pytest.raises(ValueError):
            minibatch_oracle("logistic", np.zeros(4), logit_data, [], 0.5, 0.1)
        with pytest.raises(ValueError):
            minibatch_oracle("logistic", np.zeros(4), logit_data, [80], 0.5, 0.1)

    def test_sampling_bias(self):
        # every size-3 batch of a 6-point set, exact superquantile at p = 0.5
        X = np.array([[1.0], [2.0], [-1.0], [0.5], [3.0], [-2.0]])
        y = np.array([0.0, 1.0, 2.0, -1.0, 4.0, 1.5])
        D = Dataset(X, y)
        w = np.array([0.7])
        outs = [minibatch_oracle("squared", w, D, list(b), 0.5, None)
                for b in itertools.combinations(range(6), 3)]
        mean_value = np.mean([o.value for o in outs])
        mean_grad = np.mean([o.gradient for o in outs], axis=0)
        full = superquantile_subgradient("squared", w, D, 0.5)
        assert mean_value < full.value - 1e-3
        assert not np.allclose(mean_grad, full.gradient, atol=1e-3)


class TestObjective:
    def test_modes(self, logit_data):
        w = np.full(4, 0.1)
        assert Objective("logistic", logit_data, "erm", lam=0.1)(w).value == erm_oracle("logistic", w, logit_data, 0.1).value
        assert Objective("logistic", logit_data, "superquantile", 0.7)(w).value == \
            superquantile_subgradient("logistic", w, logit_data, 0.7).value
        with pytest.raises(ValueError):
            Objective("logistic", logit_data, "smoothed", 0.7)
        with pytest.raises(ValueError):
            Objective("logistic", logit_data, "nope")

    def test_restrict_sorts(self, logit_data):
        obj = Objective("logistic", logit_data, "smoothed", 0.5, 0.1)
        a = obj.restrict([5, 2, 9, 1])
        b = obj.restrict([1, 2, 5, 9])
        np.testing.assert_array_equal(a.D.features, b.D.features)
        assert obj.restrict(np.arange(logit_data.n)[::-1]) is obj
