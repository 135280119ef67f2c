import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from examiner.numerics import (
    AdamState,
    NumericsError,
    adam_step,
    cholesky_append,
    cholesky_factor,
    cholesky_solve,
    rng_stream,
    softmax,
)


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax(np.zeros(4)), 0.25)

    def test_closed_form(self):
        p = softmax(np.array([np.log(2.0), 0.0]))
        assert np.allclose(p, [2 / 3, 1 / 3])

    def test_large_logits_no_overflow(self):
        p = softmax(np.array([1000.0, 0.0]))
        assert p[0] == pytest.approx(1.0)
        assert p[1] == pytest.approx(0.0, abs=1e-300)

    def test_rejects_nan_inf(self):
        with pytest.raises(ValueError):
            softmax(np.array([np.nan, 0.0]))
        with pytest.raises(ValueError):
            softmax(np.array([np.inf, 0.0]))
        with pytest.raises(ValueError):
            softmax(np.array([]))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance_and_normalization(self, logits, shift):
        logits = np.array(logits)
        a = softmax(logits)
        b = softmax(logits + shift)
        assert abs(a.sum() - 1.0) < 1e-12
        assert np.all(a > 0)
        assert np.allclose(a, b, atol=1e-12)


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        params = np.array([1.0, -2.0])
        state = AdamState.init(2)
        new, state2 = adam_step(params, np.zeros(2), state)
        assert np.array_equal(new, params)
        assert state2.step_count == 1

    def test_first_step_magnitude(self):
        # bias-corrected first step moves by ~lr in the gradient direction
        new, _ = adam_step(np.array([0.0]), np.array([1.0]), AdamState.init(1, 0.001))
        assert new[0] == pytest.approx(-0.001, rel=1e-6)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=5)
        g = rng.normal(size=5)

        def run():
            state = AdamState.init(5, 0.01)
            x = p.copy()
            for _ in range(10):
                x, state = adam_step(x, g * x, state)
            return x

        assert np.array_equal(run(), run())

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(2), np.zeros(3), AdamState.init(2))


class TestCholesky:
    def test_identity(self):
        x = cholesky_solve(np.eye(3), np.array([1.0, 2.0, 3.0]))
        assert np.allclose(x, [1, 2, 3], atol=1e-12)

    def test_diagonal(self):
        x = cholesky_solve(np.array([[4.0, 0.0], [0.0, 9.0]]), np.array([8.0, 27.0]))
        assert np.allclose(x, [2, 3], atol=1e-12)

    def test_random_spd_matches_dense_inverse(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(5, 5))
        K = A @ A.T + 5 * np.eye(5)
        b = rng.normal(size=5)
        x = cholesky_solve(K, b)
        assert np.max(np.abs(x - np.linalg.inv(K) @ b)) < 1e-8

    def test_residual_bound(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(20, 20))
        K = A @ A.T + 20 * np.eye(20)
        b = rng.normal(size=20)
        x = cholesky_solve(K, b)
        assert np.linalg.norm(K @ x - b) <= 1e-8 * np.linalg.norm(b)

    def test_factor_reconstructs(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(8, 8))
        K = A @ A.T + 8 * np.eye(8)
        L, j = cholesky_factor(K)
        assert j == 0.0
        assert np.max(np.abs(L @ L.T - K)) < 1e-10

    def test_jitter_escalation_on_singular(self):
        K = np.ones((3, 3))  # rank 1, needs jitter
        L, j = cholesky_factor(K)
        assert j > 0
        assert np.max(np.abs(L @ L.T - (K + j * np.eye(3)))) < 1e-10

    def test_unrecoverable_failure(self):
        with pytest.raises(NumericsError):
            cholesky_factor(np.array([[-1e6, 0.0], [0.0, -1e6]]))

    def test_append_matches_full_factor(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(6, 6))
        K = A @ A.T + 6 * np.eye(6)
        L5, _ = cholesky_factor(K[:5, :5])
        L6 = cholesky_append(L5, K[:5, 5], K[5, 5])
        Lfull, _ = cholesky_factor(K)
        assert np.allclose(L6, Lfull, atol=1e-10)

    def test_append_rejects_nonpositive_schur(self):
        L = np.array([[1.0]])
        assert cholesky_append(L, np.array([2.0]), 1.0) is None


class TestRngStreams:
    def test_reproducible(self):
        a = rng_stream(123, "x", 4).random(5)
        b = rng_stream(123, "x", 4).random(5)
        assert np.array_equal(a, b)

    def test_distinct_ids_distinct_prefixes(self):
        ids = [(0,), (1,), ("a",), ("b",), ("a", 1), (1, "a")]
        prefixes = [tuple(rng_stream(7, *i).random(4)) for i in ids]
        assert len(set(prefixes)) == len(prefixes)

    def test_master_seed_matters(self):
        assert not np.array_equal(
            rng_stream(0, "s").random(4), rng_stream(1, "s").random(4)
        )
