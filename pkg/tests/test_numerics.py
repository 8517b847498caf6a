import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dampc import _kernels
from dampc.numerics import (DimensionError, InvalidDistributionError, Rng, matmul, rng_uniform,
                            sample_categorical, softmax_rows)


def naive_matmul(A, B):
    m, k = A.shape
    n = B.shape[1]
    C = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                C[i, j] += A[i, l] * B[l, j]
    return C


def reference_splitmix64(seed, count):
    """Plain-integer splitmix64, written independently of the package."""
    mask = (1 << 64) - 1
    s = seed & mask
    out = []
    for _ in range(count):
        s = (s + 0x9E3779B97F4A7C15) & mask
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


class TestMatmul:
    def test_identity(self):
        B = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(matmul(np.eye(3), B), B)

    def test_annihilator(self):
        B = np.arange(4.0).reshape(2, 2)
        np.testing.assert_array_equal(matmul(np.zeros((2, 2)), B), np.zeros((2, 2)))

    def test_matches_triple_loop(self):
        r = np.random.default_rng(0)
        A, B = r.normal(size=(4, 3)), r.normal(size=(3, 5))
        np.testing.assert_allclose(matmul(A, B), naive_matmul(A, B), rtol=0, atol=1e-12)

    def test_shape_error_names_both(self):
        with pytest.raises(DimensionError, match=r"2x3.*2x2"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_associativity(self, seed):
        r = np.random.default_rng(seed)
        A, B, C = r.normal(size=(3, 4)), r.normal(size=(4, 5)), r.normal(size=(5, 2))
        left = matmul(matmul(A, B), C)
        right = matmul(A, matmul(B, C))
        assert np.abs(left - right).max() <= 1e-9 * max(1.0, np.abs(left).max())


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_rows(np.zeros((1, 4))), [[0.25] * 4], atol=1e-15)

    def test_shift_invariance(self):
        row = np.array([[0.3, -1.2, 2.5]])
        np.testing.assert_allclose(softmax_rows(row + 17.0), softmax_rows(row), atol=1e-15)

    def test_saturated(self):
        assert softmax_rows(np.array([[100.0, 0.0]]))[0, 0] >= 1 - 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12))
    def test_rows_sum_to_one(self, row):
        p = softmax_rows(np.array([row]))
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-12


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = Rng(42), Rng(42)
        assert [a.uniform() for _ in range(1000)] == [b.uniform() for _ in range(1000)]

    def test_range(self):
        u = Rng(7).uniform_array(100_000)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_matches_reference_implementation(self):
        r = Rng(1)
        assert [r.next_u64() for _ in range(8)] == reference_splitmix64(1, 8)

    def test_seeds_1_and_2_differ_early(self):
        a, b = Rng(1), Rng(2)
        assert any(rng_uniform(a) != rng_uniform(b) for _ in range(4))

    def test_array_and_scalar_streams_agree(self):
        a, b = Rng(123), Rng(123)
        arr = a.uniform_array(50)
        assert arr.tolist() == [b.uniform() for _ in range(50)]
        assert a.state == b.state

    def test_state_roundtrip_resumes_stream(self):
        r = Rng(5)
        r.uniform_array(17)
        saved = r.state
        expected = [r.uniform() for _ in range(10)]
        resumed = Rng.from_state(saved)
        assert [resumed.uniform() for _ in range(10)] == expected

    def test_normals_have_unit_moments(self):
        z = Rng(0).normal_array(200_000)
        assert abs(z.mean()) < 0.01
        assert abs(z.var() - 1.0) < 0.01

    def test_permutation(self):
        p = Rng(3).permutation(50)
        assert sorted(p.tolist()) == list(range(50))


@pytest.mark.skipif(_kernels.numba is None, reason="numba unavailable")
def test_numba_and_numpy_streams_identical():
    a, sa = _kernels.splitmix64_fill(99, 1000, use_numba=True)
    b, sb = _kernels.splitmix64_fill(99, 1000, use_numba=False)
    assert np.array_equal(a, b) and sa == sb


class TestCategorical:
    def test_degenerate(self):
        r = Rng(0)
        assert all(sample_categorical(r, [0, 1, 0]) == 1 for _ in range(200))

    def test_fair_coin_frequency(self):
        r = Rng(0)
        draws = [sample_categorical(r, [0.5, 0.5]) for _ in range(100_000)]
        assert abs(draws.count(0) / 1e5 - 0.5) <= 0.01

    @pytest.mark.parametrize("probs", [[0.3, -0.1, 0.8], [], [0.2, 0.2], [float("nan"), 1.0]])
    def test_invalid(self, probs):
        with pytest.raises(InvalidDistributionError):
            sample_categorical(Rng(0), probs)

    def test_shortfall_returns_last_index(self):
        class Stuck(Rng):
            def uniform(self):
                return 1.0 - 2**-53

        assert sample_categorical(Stuck(0), [0.5, 0.5 - 1e-12]) == 1

    def test_frequencies_follow_probs(self):
        r = Rng(11)
        p = [0.1, 0.6, 0.3]
        counts = np.bincount([sample_categorical(r, p) for _ in range(50_000)], minlength=3)
        np.testing.assert_allclose(counts / 50_000, p, atol=0.01)
        assert math.isclose(sum(p), 1.0)
