import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metasurrogate.diffmath import (
    DiagGaussian,
    ParamSet,
    adam_init,
    adam_step,
    gaussian_entropy,
    gaussian_kl,
    gaussian_log_prob,
    gradient,
    init_mlp,
    mlp_apply,
    reparam_sample,
)
from metasurrogate.diffmath import tensor as T
from metasurrogate.errors import DimensionError, NumericError, UnsupportedOpError


def naive_mlp(params, x, sizes, act):
    """Nested-loop forward pass, no numpy matmul."""
    h = [list(row) for row in x]
    for layer in range(len(sizes) - 1):
        w = params[f"mlp.w{layer}"]
        b = params[f"mlp.b{layer}"]
        out = []
        for row in h:
            new = []
            for j in range(sizes[layer + 1]):
                s = b[j]
                for i in range(sizes[layer]):
                    s += row[i] * w[i, j]
                if layer < len(sizes) - 2:
                    s = max(s, 0.0) if act == "relu" else math.tanh(s)
                new.append(s)
            out.append(new)
        h = out
    return np.array(h)


def finite_diff(f, params, h=1e-5):
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2 * h)
        grads[name] = g
    return grads


class TestMlpApply:
    def test_zero_weights_give_zero(self):
        sizes = [3, 4, 2]
        params = {k: np.zeros_like(v) for k, v in init_mlp("mlp", sizes, np.random.default_rng(0)).items()}
        out = mlp_apply(params, np.random.default_rng(1).normal(size=(5, 3)), sizes)
        assert np.array_equal(out, np.zeros((5, 2)))

    def test_identity_layer(self):
        v = np.array([0.3, -1.2, 4.0])
        params = {"mlp.w0": np.eye(3), "mlp.b0": np.zeros(3)}
        assert np.array_equal(mlp_apply(params, v, [3, 3]), v)

    @pytest.mark.parametrize("act", ["relu", "tanh"])
    def test_matches_nested_loop_oracle(self, act):
        rng = np.random.default_rng(7)
        sizes = [4, 6, 3]
        params = init_mlp("mlp", sizes, rng)
        params = {k: v + rng.normal(size=v.shape) * 0.1 for k, v in params.items()}
        x = rng.normal(size=(5, 4))
        np.testing.assert_allclose(mlp_apply(params, x, sizes, act), naive_mlp(params, x, sizes, act), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_names_layer(self):
        params = init_mlp("enc", [3, 4, 2], np.random.default_rng(0))
        with pytest.raises(DimensionError, match=r"enc\[0\]"):
            mlp_apply(params, np.ones((2, 5)), [3, 4, 2], prefix="enc")


class TestGradient:
    def test_sum_gives_ones(self):
        params = ParamSet(w=np.arange(6.0).reshape(2, 3))
        g = gradient(lambda p: T.sum(p["w"]), params)
        assert np.array_equal(g["w"], np.ones((2, 3)))

    def test_half_squared_norm_gives_w(self):
        w = np.random.default_rng(3).normal(size=(4,))
        g = gradient(lambda p: 0.5 * T.sum(T.square(p["w"])), ParamSet(w=w))
        np.testing.assert_allclose(g["w"], w, rtol=0, atol=1e-15)

    def test_mlp_gaussian_loss_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        sizes = [3, 5, 2]
        params = ParamSet(init_mlp("mlp", sizes, rng))
        x = rng.normal(size=(6, 3))
        y = rng.normal(size=(6, 1))

        def loss(p):
            out = mlp_apply(p, x, sizes, "tanh")
            mu, raw = out[:, 0:1], out[:, 1:2]
            d = DiagGaussian(mu, T.add(0.1, T.softplus(raw)))
            return T.neg(gaussian_log_prob(d, y))

        g = gradient(loss, params)
        fd = finite_diff(lambda p: float(loss(p)), params)
        for name in params:
            err = np.abs(g[name] - fd[name]) / np.maximum(np.abs(fd[name]), 1e-3)
            assert err.max() < 1e-5, name

    def test_unsupported_ufunc_raises(self):
        with pytest.raises(UnsupportedOpError):
            gradient(lambda p: T.sum(np.sin(p["w"])), ParamSet(w=np.ones(2)))

    def test_unused_param_gets_zero_grad(self):
        g = gradient(lambda p: T.sum(p["a"]), ParamSet(a=np.ones(2), b=np.ones(3)))
        assert np.array_equal(g["b"], np.zeros(3))

    def test_shared_subexpression_accumulates(self):
        # loss = sum(w*w + w) -> 2w + 1
        w = np.array([1.0, -2.0])
        g = gradient(lambda p: T.sum(T.add(T.mul(p["w"], p["w"]), p["w"])), ParamSet(w=w))
        np.testing.assert_allclose(g["w"], 2 * w + 1)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        params = ParamSet(w=np.array([1.0]))
        state = adam_init(params, eps=0.0)
        new, state = adam_step(params, {"w": np.array([-3.7])}, state, lr=0.01)
        assert abs(abs(new["w"][0] - 1.0) - 0.01) < 1e-15
        assert state.step == 1

    def test_zero_gradient_is_identity_after_history(self):
        params = ParamSet(w=np.array([0.5, -1.0]))
        state = adam_init(params)
        for _ in range(3):
            params, state = adam_step(params, {"w": np.array([0.1, 0.2])}, state, lr=0.1)
        after, new_state = adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        assert np.array_equal(after["w"], params["w"])
        assert new_state.step == state.step + 1

    def test_quadratic_against_scalar_reference(self):
        def reference(steps, lr, b1=0.9, b2=0.999, eps=1e-8):
            w, m, v = 0.0, 0.0, 0.0
            for t in range(1, steps + 1):
                g = 2.0 * (w - 3.0)
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            return w

        params = ParamSet(w=np.array([0.0]))
        state = adam_init(params)
        for _ in range(100):
            g = gradient(lambda p: T.sum(T.square(T.sub(p["w"], 3.0))), params)
            params, state = adam_step(params, g, state, lr=0.1)
        expected = reference(100, 0.1)
        assert abs(params["w"][0] - expected) < 1e-12
        assert abs(params["w"][0] - 3.0) < 0.5

    def test_non_finite_gradient_names_parameter(self):
        params = ParamSet(alpha=np.zeros(2))
        with pytest.raises(NumericError, match="alpha"):
            adam_step(params, {"alpha": np.array([1.0, np.nan])}, adam_init(params), lr=0.1)

    @given(st.integers(0, 50), st.floats(1e-5, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_zero_gradient_identity_for_any_state(self, seed, lr):
        rng = np.random.default_rng(seed)
        params = ParamSet(w=rng.normal(size=3))
        state = adam_init(params)
        for _ in range(seed % 5):
            params, state = adam_step(params, {"w": rng.normal(size=3)}, state, lr)
        new, _ = adam_step(params, {"w": np.zeros(3)}, state, lr)
        assert np.array_equal(new["w"], params["w"])


def naive_log_density(mu, sd, y):
    return math.log(math.prod(math.exp(-((yi - m) ** 2) / (2 * s * s)) / (s * math.sqrt(2 * math.pi)) for m, s, yi in zip(mu, sd, y)))


class TestGaussian:
    def test_standard_normal_at_zero(self):
        val = gaussian_log_prob(DiagGaussian(np.zeros(1), np.ones(1)), np.zeros(1))
        assert abs(val - (-0.5 * math.log(2 * math.pi))) < 1e-12
        assert abs(val - (-0.918939)) < 1e-6

    def test_log_prob_max_at_mean(self):
        sd = np.array([0.5, 2.0])
        d = DiagGaussian(np.array([1.0, -1.0]), sd)
        peak = gaussian_log_prob(d, d.mean)
        assert abs(peak - (-np.sum(np.log(sd * math.sqrt(2 * math.pi))))) < 1e-12
        assert gaussian_log_prob(d, d.mean + 0.01) < peak

    def test_log_prob_matches_density_oracle(self):
        rng = np.random.default_rng(5)
        mu, sd, y = rng.normal(size=3), rng.uniform(0.3, 2.0, 3), rng.normal(size=3)
        assert abs(gaussian_log_prob(DiagGaussian(mu, sd), y) - naive_log_density(mu, sd, y)) < 1e-10

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_log_prob_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        mu, sd, y = rng.normal(size=5), rng.uniform(0.1, 3, 5), rng.normal(size=5)
        perm = rng.permutation(5)
        a = gaussian_log_prob(DiagGaussian(mu, sd), y)
        b = gaussian_log_prob(DiagGaussian(mu[perm], sd[perm]), y[perm])
        assert abs(a - b) < 1e-10

    def test_kl_identical_is_zero(self):
        d = DiagGaussian(np.array([0.3, 1.0]), np.array([0.2, 1.5]))
        assert gaussian_kl(d, d) == 0.0

    def test_kl_unit_shift(self):
        assert abs(gaussian_kl(DiagGaussian(np.ones(1), np.ones(1)), DiagGaussian(np.zeros(1), np.ones(1))) - 0.5) < 1e-15

    def test_kl_matches_monte_carlo(self):
        rng = np.random.default_rng(17)
        q = DiagGaussian(rng.normal(size=2), rng.uniform(0.5, 1.5, 2))
        p = DiagGaussian(rng.normal(size=2), rng.uniform(0.5, 1.5, 2))
        z = q.mean + q.stddev * rng.standard_normal((1_000_000, 2))

        def logpdf(d, x):
            return np.sum(-0.5 * ((x - d.mean) / d.stddev) ** 2 - np.log(d.stddev) - 0.5 * math.log(2 * math.pi), axis=1)

        samples = logpdf(q, z) - logpdf(p, z)
        se = samples.std() / math.sqrt(len(samples))
        assert abs(samples.mean() - gaussian_kl(q, p)) < 3 * se

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_kl_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        q = DiagGaussian(rng.normal(size=3), rng.uniform(0.05, 3, 3))
        p = DiagGaussian(rng.normal(size=3), rng.uniform(0.05, 3, 3))
        assert gaussian_kl(q, p) > 0.0

    def test_entropy_values(self):
        assert abs(gaussian_entropy(DiagGaussian(np.zeros(1), np.ones(1))) - 1.418939) < 1e-6
        base = gaussian_entropy(DiagGaussian(np.zeros(3), np.ones(3)))
        doubled = gaussian_entropy(DiagGaussian(np.zeros(3), 2 * np.ones(3)))
        assert abs(doubled - base - 3 * math.log(2)) < 1e-12
        two = gaussian_entropy(DiagGaussian(np.zeros(2), np.array([0.5, 2.0])))
        one_a = gaussian_entropy(DiagGaussian(np.zeros(1), np.array([0.5])))
        one_b = gaussian_entropy(DiagGaussian(np.zeros(1), np.array([2.0])))
        assert abs(two - one_a - one_b) < 1e-12

    def test_reparam(self):
        d = DiagGaussian(np.array([1.0, -2.0]), np.array([1e-4, 1e-4]))
        assert np.array_equal(reparam_sample(d, np.zeros(2)), d.mean)
        e = np.array([0.7, -1.3])
        np.testing.assert_allclose(reparam_sample(d, e), d.mean + 1e-4 * e)

    def test_reparam_moments(self):
        rng = np.random.default_rng(2)
        d = DiagGaussian(np.array([0.5]), np.array([2.0]))
        draws = np.array([reparam_sample(d, n) for n in rng.standard_normal((100_000, 1))])[:, 0]
        se_mean = 2.0 / math.sqrt(len(draws))
        se_sd = 2.0 / math.sqrt(2 * len(draws))
        assert abs(draws.mean() - 0.5) < 3 * se_mean
        assert abs(draws.std() - 2.0) < 3 * se_sd

    def test_reparam_is_differentiable(self):
        noise = np.array([0.3])
        g = gradient(
            lambda p: T.sum(reparam_sample(DiagGaussian(p["mu"], T.exp(p["ls"])), noise)),
            ParamSet(mu=np.zeros(1), ls=np.zeros(1)),
        )
        np.testing.assert_allclose(g["mu"], [1.0])
        np.testing.assert_allclose(g["ls"], [0.3])

    def test_nonpositive_stddev_rejected(self):
        with pytest.raises(ValueError):
            DiagGaussian(np.zeros(2), np.array([1.0, 0.0]))
