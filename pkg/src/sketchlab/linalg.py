"""Dense matrices, singular values and the matrix norms used throughout.

Matrices are plain 2-D ``float64`` numpy arrays. :func:`as_matrix` is the
single entry point that validates shape and finiteness; every public
function here calls it, so callers may pass nested lists as well.
"""
import hashlib

import numpy as np

# singular values below RANK_RTOL * sigma_1 count as zero
RANK_RTOL = 1e-10


class SVDError(np.linalg.LinAlgError):
    """Singular value decomposition failed to converge."""


def as_matrix(A, name="A"):
    """Return `A` as a finite 2-D float64 array (no copy when possible)."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def fingerprint(A):
    """Short, stable identifier of a matrix: shape plus a digest of its bytes."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    digest = hashlib.sha256(A.astype("<f8").tobytes()).hexdigest()[:16]
    return f"{A.shape[0]}x{A.shape[1]}:{digest}"


def singular_values(A):
    """Full singular spectrum of `A`, non-increasing, length ``min(m, n)``.

    Computed from a full (not randomized) LAPACK SVD. The reconstruction
    residual ``||U diag(s) V^T - A||_F`` is checked against
    ``1e-10 * ||A||_F``.
    """
    A = as_matrix(A)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SVDError(f"SVD did not converge for matrix {fingerprint(A)}") from exc
    scale = np.linalg.norm(A)
    if scale > 0:
        resid = np.linalg.norm((U * s) @ Vt - A)
        if resid > 1e-10 * scale:
            raise SVDError(
                f"SVD reconstruction residual {resid:.3e} too large for matrix {fingerprint(A)}"
            )
    # LAPACK already returns sorted values; clamp tiny negatives from roundoff
    return np.maximum(s, 0.0)


def numerical_rank(A, rtol=RANK_RTOL):
    s = singular_values(A)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def operator_norm(A):
    """Largest singular value, ``sup_{|x|=1} |Ax|``."""
    return float(singular_values(A)[0])


def frobenius_norm(A):
    A = as_matrix(A)
    return float(np.linalg.norm(A))


def schatten_norm(A, p, rtol=RANK_RTOL):
    """``(sum_i sigma_i^p)^(1/p)`` over the nonzero singular values.

    A singular value is nonzero when it exceeds ``rtol * sigma_1``. For
    ``0 < p < 1`` the value is well defined but not a norm.
    """
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    s = singular_values(A)
    if s[0] == 0.0:
        return 0.0
    s = s[s > rtol * s[0]]
    # factor out sigma_1 so large p does not overflow
    top = s[0]
    return float(top * np.sum((s / top) ** p) ** (1.0 / p))


def kyfan_norm(A, s):
    """Sum of the `s` largest singular values."""
    A = as_matrix(A)
    if not 1 <= s <= min(A.shape):
        raise ValueError(f"Ky-Fan index s={s} outside [1, {min(A.shape)}]")
    return float(np.sum(singular_values(A)[: int(s)]))


def frobenius_inner(A, B):
    """Entrywise inner product ``sum_ab A_ab B_ab = tr(A^T B)``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return float(np.dot(A.ravel(), B.ravel()))
