import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchlab import linalg
from sketchlab.linalg import (
    SVDError,
    frobenius_inner,
    frobenius_norm,
    kyfan_norm,
    numerical_rank,
    operator_norm,
    schatten_norm,
    singular_values,
)


def random_orthogonal(n, gen):
    Q, R = np.linalg.qr(gen.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


matrices = st.builds(
    lambda m, n, seed: np.random.default_rng(seed).standard_normal((m, n)),
    st.integers(1, 7),
    st.integers(1, 7),
    st.integers(0, 2**32 - 1),
)


class TestSingularValues:
    def test_diagonal(self):
        np.testing.assert_array_equal(singular_values(np.diag([3.0, 1.0, 2.0])), [3, 2, 1])

    def test_zero_rectangular(self):
        np.testing.assert_array_equal(singular_values(np.zeros((4, 2))), [0, 0])

    def test_against_symmetric_eigensolver(self, gen):
        A = gen.standard_normal((5, 5))
        eig = np.sort(np.linalg.eigvalsh(A.T @ A))[::-1]
        np.testing.assert_allclose(singular_values(A) ** 2, eig, rtol=1e-8)

    def test_rank_deficient_trailing_zeros(self, gen):
        A = gen.standard_normal((6, 2)) @ gen.standard_normal((2, 5))
        s = singular_values(A)
        assert len(s) == 5
        assert np.all(s[2:] < 1e-12 * s[0])
        assert numerical_rank(A) == 2

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            singular_values([[1.0, np.nan]])

    def test_rejects_wrong_ndim(self):
        with pytest.raises(ValueError):
            singular_values(np.ones(3))

    def test_non_convergence_reports_fingerprint(self, monkeypatch):
        def broken(*a, **k):
            raise np.linalg.LinAlgError("SVD did not converge")

        monkeypatch.setattr(linalg.np.linalg, "svd", broken)
        A = np.eye(3)
        with pytest.raises(SVDError, match=linalg.fingerprint(A)):
            singular_values(A)

    @given(matrices, st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_orthogonal_invariance(self, A, seed):
        g = np.random.default_rng(seed)
        U = random_orthogonal(A.shape[0], g)
        V = random_orthogonal(A.shape[1], g)
        s = singular_values(A)
        np.testing.assert_allclose(singular_values(U @ A @ V), s, rtol=1e-8, atol=1e-12 * s[0])


class TestNorms:
    def test_operator_norm_examples(self):
        assert operator_norm(np.diag([3.0, 1.0, 2.0])) == pytest.approx(3.0)
        assert operator_norm(np.eye(5)) == pytest.approx(1.0)

    def test_operator_norm_is_sup_over_unit_vectors(self, gen):
        A = gen.standard_normal((4, 4))
        best = 0.0
        for _ in range(10):
            x = gen.standard_normal((100_000, 4))
            x /= np.linalg.norm(x, axis=1, keepdims=True)
            best = max(best, np.linalg.norm(x @ A.T, axis=1).max())
        op = operator_norm(A)
        assert best <= op * (1 + 1e-12)
        assert best >= op * (1 - 1e-3)

    def test_schatten_examples(self):
        assert schatten_norm(np.diag([3.0, 4.0]), 2) == pytest.approx(5.0)
        assert schatten_norm(np.eye(3), 1) == pytest.approx(3.0)

    def test_schatten_4_against_trace_of_power(self, gen):
        A = gen.standard_normal((4, 4))
        M = A.T @ A
        expected = np.trace(M @ M) ** 0.25
        assert schatten_norm(A, 4) == pytest.approx(expected, rel=1e-12)

    def test_schatten_2_is_frobenius(self, gen):
        A = gen.standard_normal((5, 3))
        assert schatten_norm(A, 2) == pytest.approx(np.linalg.norm(A), rel=1e-12)

    def test_schatten_large_p_no_overflow(self):
        assert schatten_norm(np.diag([1e200, 1.0]), 50) == pytest.approx(1e200)

    def test_schatten_ignores_numerical_zeros(self):
        A = np.diag([1.0, 1e-14, 0.0])
        # p < 1 would blow up tiny singular values; they are below the rank threshold
        assert schatten_norm(A, 0.5) == pytest.approx(1.0)
        assert schatten_norm(A, 0.5, rtol=0.0) > 1.0

    def test_schatten_rejects_nonpositive_p(self):
        with pytest.raises(ValueError):
            schatten_norm(np.eye(2), 0)

    def test_kyfan_examples(self, gen):
        assert kyfan_norm(np.diag([3.0, 2.0, 1.0]), 2) == pytest.approx(5.0)
        A = gen.standard_normal((5, 4))
        assert kyfan_norm(A, 1) == pytest.approx(operator_norm(A))
        low = gen.standard_normal((5, 2)) @ gen.standard_normal((2, 4))
        for s in (2, 3, 4):
            assert kyfan_norm(low, s) == pytest.approx(schatten_norm(low, 1), rel=1e-10)

    @pytest.mark.parametrize("s", [0, 5])
    def test_kyfan_range(self, s):
        with pytest.raises(ValueError):
            kyfan_norm(np.eye(4), s)

    def test_frobenius_inner_examples(self, gen):
        assert frobenius_inner(np.eye(2), np.eye(2)) == 2.0
        A = gen.standard_normal((3, 4))
        assert frobenius_inner(A, np.zeros((3, 4))) == 0.0

    def test_frobenius_inner_against_trace(self, gen):
        A, B = gen.standard_normal((2, 6, 5))
        expected = np.trace(A.T @ B)
        assert frobenius_inner(A, B) == pytest.approx(expected, rel=1e-12)
        assert frobenius_inner(A, B) == frobenius_inner(B, A)
        assert frobenius_inner(A, A) == pytest.approx(frobenius_norm(A) ** 2, rel=1e-12)

    def test_frobenius_inner_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            frobenius_inner(np.eye(2), np.eye(3))


@given(matrices)
@settings(max_examples=60, deadline=None)
def test_norm_sandwich(A):
    op, fro = operator_norm(A), frobenius_norm(A)
    rank = numerical_rank(A)
    assert op <= fro * (1 + 1e-12)
    assert fro <= np.sqrt(rank) * op * (1 + 1e-12)


@given(matrices)
@settings(max_examples=60, deadline=None)
def test_schatten_non_increasing_in_p(A):
    vals = [schatten_norm(A, p) for p in (1, 2, 4, 8)]
    for a, b in zip(vals, vals[1:]):
        assert b <= a * (1 + 1e-12)


@given(matrices)
@settings(max_examples=60, deadline=None)
def test_kyfan_monotone_and_concave(A):
    r = min(A.shape)
    vals = np.array([0.0] + [kyfan_norm(A, s) for s in range(1, r + 1)])
    inc = np.diff(vals)
    assert np.all(inc >= -1e-12)
    assert np.all(np.diff(inc) <= 1e-12 * max(1.0, vals[-1]))
