"""General linear sketches stored as trace-orthonormal measurement families.

A sketch with ``k`` measurements on ``m x n`` inputs is a stack of ``k``
matrices ``L^1, ..., L^k`` with ``tr((L^i)^T L^j) = delta_ij``; the sketch
of ``A`` is the vector ``(tr((L^i)^T A))_i``. Any linear map on matrices
can be brought to this form by orthonormalizing its rows, which does not
change what the sketch can distinguish.
"""
import struct
from pathlib import Path

import numpy as np

from . import linalg
from .rng import as_generator

# refuse k*m*n above this many stored entries unless explicitly allowed
MAX_ENTRIES = 2_000_000_000
ORTHO_TOL = 1e-10
DEPENDENCE_RTOL = 1e-10
_BLOCK = 64
_HEADER = struct.Struct("<qqq")


class DependenceError(ValueError):
    """Measurement family is (numerically) linearly dependent."""

    def __init__(self, index, ratio):
        self.index = index
        self.ratio = ratio
        super().__init__(
            f"measurement {index} is linearly dependent on the preceding ones "
            f"(residual/original norm = {ratio:.3e})"
        )


def check_size(k, m, n, allow_large=False):
    if k < 1 or m < 1 or n < 1:
        raise ValueError(f"sketch dimensions must be positive, got k={k}, m={m}, n={n}")
    if k > m * n:
        raise ValueError(f"k={k} exceeds m*n={m * n}")
    if k * m * n > MAX_ENTRIES and not allow_large:
        raise MemoryError(
            f"k*m*n = {k * m * n} exceeds {MAX_ENTRIES} stored entries; "
            "pass allow_large=True to override"
        )


class SketchOperator:
    """Immutable family of ``k`` trace-orthonormal ``m x n`` measurements.

    Parameters
    ----------
    measurements : array_like, shape (k, m, n)
    validate : bool
        Check the Gram matrix against the identity (tolerance ``1e-10``).
    """

    def __init__(self, measurements, validate=True, allow_large=False):
        L = np.array(measurements, dtype=np.float64)
        if L.ndim != 3:
            raise ValueError(f"measurements must have shape (k, m, n), got {L.shape}")
        k, m, n = L.shape
        check_size(k, m, n, allow_large)
        if not np.all(np.isfinite(L)):
            raise ValueError("measurements have non-finite entries")
        L.setflags(write=False)
        self._L = L
        if validate:
            resid = self.gram_residual()
            if resid > ORTHO_TOL:
                raise ValueError(f"measurements are not trace-orthonormal (residual {resid:.3e})")

    @property
    def measurements(self):
        return self._L

    @property
    def flat(self):
        """Measurements as the rows of a ``k x (m n)`` matrix."""
        k, m, n = self._L.shape
        return self._L.reshape(k, m * n)

    @property
    def k(self):
        return self._L.shape[0]

    @property
    def m(self):
        return self._L.shape[1]

    @property
    def n(self):
        return self._L.shape[2]

    @property
    def shape(self):
        return self._L.shape

    def gram(self):
        F = self.flat
        return F @ F.T

    def gram_residual(self):
        """Max-abs deviation of the Gram matrix from the identity."""
        G = self.gram()
        G[np.diag_indices_from(G)] -= 1.0
        return float(np.max(np.abs(G)))

    def __repr__(self):
        return f"SketchOperator(k={self.k}, m={self.m}, n={self.n})"


def _intra_block(B, orig_norms, offset, check):
    # vector-wise Gram-Schmidt inside a block, projection applied twice
    for j in range(B.shape[0]):
        v = B[j]
        if j:
            Q = B[:j]
            v -= (Q @ v) @ Q
            v -= (Q @ v) @ Q
        nv = np.linalg.norm(v)
        if check and (orig_norms[j] == 0 or nv <= DEPENDENCE_RTOL * orig_norms[j]):
            ratio = 0.0 if orig_norms[j] == 0 else nv / orig_norms[j]
            raise DependenceError(offset + j, ratio)
        v /= nv
    return B


def _fix_signs(Q):
    # first coordinate of meaningful size (row-major) is made positive
    big = np.abs(Q) > 1e-12
    first = np.argmax(big, axis=1)
    lead = Q[np.arange(Q.shape[0]), first]
    Q[lead < 0] *= -1.0
    return Q


def orthonormalize_flat(F):
    """Row-wise Gram-Schmidt with re-orthogonalization on a ``k x N`` array.

    Blocks of rows are projected against all earlier rows with matrix
    products, then orthonormalized among themselves; the whole step runs
    twice per block. Raises :class:`DependenceError` naming the first row
    whose residual falls below ``1e-10`` of its original norm.
    """
    F = np.array(F, dtype=np.float64)
    k = F.shape[0]
    orig = np.linalg.norm(F, axis=1)
    Q = np.empty_like(F)
    for b0 in range(0, k, _BLOCK):
        b1 = min(k, b0 + _BLOCK)
        B = F[b0:b1].copy()
        prev = Q[:b0]
        for rep in range(2):
            if b0:
                B -= (B @ prev.T) @ prev
            B = _intra_block(B, orig[b0:b1], b0, check=(rep == 0))
        Q[b0:b1] = B
    return _fix_signs(Q)


def orthonormalize(family, allow_large=False):
    """Orthonormalize a sequence of ``m x n`` matrices under ``tr(A^T B)``.

    The span is preserved: measurement ``i`` of the result lies in the span
    of the first ``i + 1`` inputs.
    """
    L = np.asarray(family, dtype=np.float64)
    if L.ndim != 3:
        raise ValueError(f"family must have shape (k, m, n), got {L.shape}")
    k, m, n = L.shape
    check_size(k, m, n, allow_large)
    Q = orthonormalize_flat(L.reshape(k, m * n))
    return SketchOperator(Q.reshape(k, m, n), allow_large=allow_large)


def make_random_sketch(k, m, n, rng, allow_large=False, max_retries=5):
    """Orthonormalized family of ``k`` i.i.d. Gaussian ``m x n`` matrices.

    A numerically dependent draw is replaced by a fresh Gaussian matrix, up
    to ``max_retries`` times.
    """
    check_size(k, m, n, allow_large)
    gen = as_generator(rng)
    F = gen.standard_normal((k, m * n))
    for _ in range(max_retries + 1):
        try:
            Q = orthonormalize_flat(F)
        except DependenceError as exc:
            last = exc
            F[exc.index] = gen.standard_normal(m * n)
            continue
        return SketchOperator(Q.reshape(k, m, n), allow_large=allow_large)
    raise last


def apply_sketch(S, A):
    """Sketch values ``tr((L^i)^T A)``.

    `A` may be one ``m x n`` matrix (result shape ``(k,)``) or a stack of
    them with shape ``(T, m, n)`` (result shape ``(T, k)``).
    """
    A = np.asarray(A, dtype=np.float64)
    if A.shape[-2:] != (S.m, S.n) or A.ndim not in (2, 3):
        raise ValueError(f"input shape {A.shape} does not match sketch dimensions {(S.m, S.n)}")
    if A.ndim == 2:
        linalg.as_matrix(A)
        return S.flat @ A.ravel()
    if not np.all(np.isfinite(A)):
        raise ValueError("inputs have non-finite entries")
    return A.reshape(A.shape[0], -1) @ S.flat.T


def reconstruct(S, values):
    """``sum_i values_i L^i``; the orthogonal projection of the input when
    `values` came from :func:`apply_sketch`."""
    values = np.asarray(values, dtype=np.float64)
    return (values @ S.flat).reshape(S.m, S.n)


def bilinear_measurements(S_bil, n):
    """Raw measurement family realizing ``A -> S_bil @ A`` on ``m x n`` inputs.

    Measurement ``i * n + j`` is ``outer(S_bil[i], e_j)`` so that applying
    the family returns ``(S_bil @ A).ravel()``.
    """
    S_bil = linalg.as_matrix(S_bil, "S_bil")
    kp, m = S_bil.shape
    if kp > m:
        raise ValueError(f"bilinear sketch has {kp} rows but inputs have only m={m} rows")
    L = np.zeros((kp, n, m, n))
    idx = np.arange(n)
    L[:, idx, :, idx] = S_bil[None, :, :]
    return L.reshape(kp * n, m, n)


def embed_bilinear(S_bil, n, allow_large=False):
    """The general linear sketch equivalent to the bilinear sketch ``S_bil``.

    Fails with :class:`DependenceError` when the rows of ``S_bil`` are
    linearly dependent.
    """
    try:
        return orthonormalize(bilinear_measurements(S_bil, n), allow_large=allow_large)
    except DependenceError as exc:
        raise DependenceError(exc.index, exc.ratio) from None


def dump_sketch(S, path):
    """Binary dump: ``k, m, n`` as little-endian int64, then ``k m n``
    little-endian float64 values (measurement-major, row-major)."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(S.k, S.m, S.n))
        fh.write(np.ascontiguousarray(S.measurements, dtype="<f8").tobytes())
    return path


def load_sketch(path, allow_large=False):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        k, m, n = _HEADER.unpack(header)
        check_size(k, m, n, allow_large)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != k * m * n:
        raise ValueError(f"{path}: expected {k * m * n} values, found {data.size}")
    return SketchOperator(data.reshape(k, m, n).astype(np.float64), allow_large=allow_large)
