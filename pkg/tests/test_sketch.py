import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sketchlab.rng import Rng
from sketchlab.sketch import (
    DependenceError,
    SketchOperator,
    apply_sketch,
    bilinear_measurements,
    check_size,
    dump_sketch,
    embed_bilinear,
    load_sketch,
    make_random_sketch,
    orthonormalize,
    reconstruct,
)


def _orthogonal(d, gen):
    q, r = np.linalg.qr(gen.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


class TestRandomSketch:
    def test_single_measurement_is_normalized_draw(self):
        S = make_random_sketch(1, 2, 2, Rng(42))
        raw = Rng(42).generator().standard_normal(4)
        np.testing.assert_allclose(S.flat[0], raw / np.linalg.norm(raw) * np.sign(raw[0]), atol=1e-15)
        assert np.linalg.norm(S.measurements[0]) == pytest.approx(1.0, abs=1e-15)

    def test_full_family_is_complete(self, gen):
        S = make_random_sketch(9, 3, 3, Rng(1))
        A = gen.standard_normal((3, 3))
        np.testing.assert_allclose(reconstruct(S, apply_sketch(S, A)), A, atol=1e-12)
        assert S.gram_residual() <= 1e-12

    @settings(max_examples=25, deadline=None)
    @given(
        k=st.integers(1, 12),
        m=st.integers(1, 5),
        n=st.integers(1, 5),
        seed=st.integers(0, 2**32),
    )
    def test_gram_identity(self, k, m, n, seed):
        k = min(k, m * n)
        S = make_random_sketch(k, m, n, Rng(seed))
        np.testing.assert_allclose(S.gram(), np.eye(k), atol=1e-10)

    def test_large_family_gram(self):
        S = make_random_sketch(300, 30, 30, Rng(3))
        assert S.gram_residual() <= 1e-12

    def test_deterministic(self):
        a = make_random_sketch(20, 4, 5, Rng(9, (1,)))
        b = make_random_sketch(20, 4, 5, Rng(9, (1,)))
        assert a.measurements.tobytes() == b.measurements.tobytes()

    def test_read_only(self):
        S = make_random_sketch(2, 2, 2, Rng(0))
        with pytest.raises(ValueError):
            S.measurements[0, 0, 0] = 1.0

    def test_too_many_measurements(self):
        with pytest.raises(ValueError):
            make_random_sketch(5, 2, 2, Rng(0))

    def test_memory_guard(self):
        with pytest.raises(MemoryError):
            check_size(20_000, 400, 400)
        check_size(20_000, 400, 400, allow_large=True)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            SketchOperator(np.ones((2, 2, 2)))


class TestApply:
    def test_unit_measurement(self):
        E = np.zeros((1, 2, 2))
        E[0, 0, 0] = 1.0
        S = SketchOperator(E)
        assert apply_sketch(S, [[3.0, 1.0], [4.0, 1.0]])[0] == 3.0

    def test_linearity(self, gen):
        S = make_random_sketch(7, 4, 3, Rng(4))
        A, B = gen.standard_normal((2, 4, 3))
        np.testing.assert_allclose(
            apply_sketch(S, 2.5 * A - B), 2.5 * apply_sketch(S, A) - apply_sketch(S, B), atol=1e-12
        )

    def test_batch_matches_single(self, gen):
        S = make_random_sketch(5, 3, 3, Rng(5))
        A = gen.standard_normal((4, 3, 3))
        batch = apply_sketch(S, A)
        for t in range(4):
            np.testing.assert_allclose(batch[t], apply_sketch(S, A[t]), atol=1e-13)

    def test_brute_force_trace(self, gen):
        S = make_random_sketch(4, 3, 5, Rng(6))
        A = gen.standard_normal((3, 5))
        brute = [np.trace(L.T @ A) for L in S.measurements]
        np.testing.assert_allclose(apply_sketch(S, A), brute, atol=1e-13)

    def test_shape_mismatch(self):
        S = make_random_sketch(2, 3, 3, Rng(0))
        with pytest.raises(ValueError):
            apply_sketch(S, np.zeros((3, 4)))
        with pytest.raises(ValueError):
            apply_sketch(S, np.full((3, 3), np.nan))

    def test_null_law_is_standard_normal(self):
        S = make_random_sketch(8, 6, 6, Rng(7))
        G = Rng(8).generator().standard_normal((20_000, 6, 6))
        Y = apply_sketch(S, G)
        cov = np.cov(Y, rowvar=False)
        # entry-wise sd of a sample covariance is about sqrt(2/T) on the diagonal
        assert np.max(np.abs(cov - np.eye(8))) <= 5 * math.sqrt(2 / 20_000)
        for i in range(8):
            assert stats.kstest(Y[:, i], "norm").pvalue > 1e-3

    def test_rotational_consistency(self, gen):
        m, n = 4, 5
        S = make_random_sketch(6, m, n, Rng(10))
        U, V = _orthogonal(m, gen), _orthogonal(n, gen)
        R = SketchOperator(np.einsum("ab,kbc,dc->kad", U, S.measurements, V))
        A = gen.standard_normal((m, n))
        np.testing.assert_allclose(apply_sketch(R, U @ A @ V.T), apply_sketch(S, A), atol=1e-12)


class TestOrthonormalize:
    def test_unit_pair(self):
        L = np.zeros((2, 1, 2))
        L[0, 0] = [2.0, 0.0]
        L[1, 0] = [1.0, 1.0]
        S = orthonormalize(L)
        np.testing.assert_allclose(S.flat, [[1, 0], [0, 1]], atol=1e-15)

    def test_span_is_nested(self, gen):
        L = gen.standard_normal((5, 3, 3))
        S = orthonormalize(L)
        for i in range(5):
            prefix = L[: i + 1].reshape(i + 1, -1)
            coef = np.linalg.lstsq(prefix.T, S.flat[i], rcond=None)[0]
            np.testing.assert_allclose(prefix.T @ coef, S.flat[i], atol=1e-10)

    def test_dependent_family(self):
        L = np.zeros((3, 2, 2))
        L[0, 0, 0] = 1.0
        L[1, 1, 1] = 1.0
        L[2] = L[0] + 2 * L[1]
        with pytest.raises(DependenceError) as exc:
            orthonormalize(L)
        assert exc.value.index == 2

    def test_zero_measurement(self):
        with pytest.raises(DependenceError):
            orthonormalize(np.zeros((1, 2, 2)))

    def test_across_blocks(self, gen):
        F = gen.standard_normal((100, 1, 120))
        F[90] = F[3] - F[70]
        with pytest.raises(DependenceError) as exc:
            orthonormalize(F)
        assert exc.value.index == 90


class TestBilinear:
    def test_identity_rows(self):
        S = embed_bilinear(np.eye(2, 3), 2)
        assert S.k == 4
        A = np.arange(6.0).reshape(3, 2)
        np.testing.assert_allclose(apply_sketch(S, A), A[:2].ravel(), atol=1e-15)

    def test_raw_family_matches_product(self, gen):
        S_bil = gen.standard_normal((3, 5))
        A = gen.standard_normal((5, 4))
        L = bilinear_measurements(S_bil, 4)
        got = np.einsum("kab,ab->k", L, A)
        np.testing.assert_allclose(got, (S_bil @ A).ravel(), atol=1e-12)

    def test_projection_onto_row_space(self, gen):
        S_bil = gen.standard_normal((3, 6))
        A = gen.standard_normal((6, 4))
        S = embed_bilinear(S_bil, 4)
        Q = np.linalg.qr(S_bil.T)[0]
        np.testing.assert_allclose(reconstruct(S, apply_sketch(S, A)), Q @ Q.T @ A, atol=1e-12)

    def test_degenerate_rows(self):
        S_bil = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]])
        with pytest.raises(DependenceError):
            embed_bilinear(S_bil, 2)

    def test_too_many_rows(self):
        with pytest.raises(ValueError):
            embed_bilinear(np.eye(3, 2), 2)


class TestDump:
    def test_round_trip(self, tmp_path):
        S = make_random_sketch(6, 3, 4, Rng(11))
        path = dump_sketch(S, tmp_path / "s.bin")
        assert path.stat().st_size == 24 + 8 * 6 * 3 * 4
        T = load_sketch(path)
        assert T.measurements.tobytes() == S.measurements.tobytes()

    def test_truncated(self, tmp_path):
        S = make_random_sketch(2, 2, 2, Rng(0))
        p = dump_sketch(S, tmp_path / "s.bin")
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_sketch(p)
        p.write_bytes(b"\x00" * 5)
        with pytest.raises(ValueError):
            load_sketch(p)
