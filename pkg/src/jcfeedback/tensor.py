"""Dense complex tensor algebra.

Tensors are plain ``numpy.ndarray`` objects of dtype ``complex128`` stored in
row-major (C) order. Helpers here add shape validation and the truncated SVD
used by the MPS engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericalError

__all__ = [
    "SvdPolicy",
    "as_tensor",
    "contract",
    "truncated_svd",
    "svd_split",
    "matrix_exponential",
]


@dataclass(frozen=True)
class SvdPolicy:
    """Truncation rule for singular value decompositions.

    Singular values below ``cutoff * s_max`` are discarded and at most
    ``max_bond`` values are kept.
    """

    cutoff: float = 1e-10
    max_bond: int = 64

    def __post_init__(self):
        if not 0.0 <= self.cutoff < 1.0:
            raise ValueError(f"cutoff must lie in [0, 1), got {self.cutoff}")
        if int(self.max_bond) != self.max_bond or self.max_bond < 1:
            raise ValueError(f"max_bond must be a positive integer, got {self.max_bond}")


def as_tensor(a) -> np.ndarray:
    t = np.ascontiguousarray(a, dtype=np.complex128)
    if any(n < 1 for n in t.shape):
        raise DimensionError(f"all extents must be >= 1, got shape {t.shape}")
    return t


def contract(a, axes_a, b, axes_b) -> np.ndarray:
    """Sum over paired axes of ``a`` and ``b``.

    The result carries the free axes of ``a`` followed by the free axes of
    ``b``, each group in its original order.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    axes_a = [int(x) % a.ndim for x in axes_a] if a.ndim else list(axes_a)
    axes_b = [int(x) % b.ndim for x in axes_b] if b.ndim else list(axes_b)
    if len(axes_a) != len(axes_b):
        raise DimensionError(f"axis lists differ in length: {axes_a} vs {axes_b}")
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise DimensionError(f"duplicate axes in {axes_a} / {axes_b}")
    for i, j in zip(axes_a, axes_b):
        if a.shape[i] != b.shape[j]:
            raise DimensionError(
                f"axis pair (a[{i}], b[{j}]) has mismatched extents {a.shape[i]} != {b.shape[j]}"
            )
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def _svd(mat):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        pass
    try:
        # gesvd is slower but converges in cases where gesdd gives up
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"SVD did not converge for a {mat.shape[0]}x{mat.shape[1]} matrix") from exc


def truncated_svd(mat, policy: SvdPolicy):
    """SVD of a matrix truncated according to ``policy``.

    Returns ``(u, s, vh, discarded)`` where ``discarded`` is the sum of the
    squared singular values that were dropped.
    """
    u, s, vh = _svd(mat)
    if not np.all(np.isfinite(s)):
        raise NumericalError(f"non-finite singular values for a {mat.shape[0]}x{mat.shape[1]} matrix")
    keep = len(s)
    if s.size and s[0] > 0.0:
        if policy.cutoff > 0.0:
            keep = int(np.count_nonzero(s >= policy.cutoff * s[0]))
    else:
        keep = 1
    keep = max(1, min(keep, policy.max_bond))
    discarded = float(np.sum(s[keep:] ** 2))
    return u[:, :keep], s[:keep], vh[:keep, :], discarded


def svd_split(t, left_axes, policy: SvdPolicy | None = None):
    """Split ``t`` into ``left @ diag(s) @ right`` across a bipartition of axes.

    Parameters
    ----------
    t : array_like
        Tensor to split.
    left_axes : sequence of int
        Axes grouped on the left side; the remaining axes, in their original
        order, go to the right.
    policy : SvdPolicy, optional
        Truncation rule, no truncation when omitted.

    Returns
    -------
    left : ndarray
        Shape ``(*left_extents, chi)`` with orthonormal columns.
    s : ndarray
        Singular values, descending.
    right : ndarray
        Shape ``(chi, *right_extents)`` with orthonormal rows.
    """
    t = np.asarray(t, dtype=np.complex128)
    left_axes = [int(x) % t.ndim for x in left_axes]
    if not left_axes or len(left_axes) >= t.ndim:
        raise DimensionError("left_axes must be a non-empty proper subset of the tensor axes")
    if len(set(left_axes)) != len(left_axes):
        raise DimensionError(f"duplicate axes in {left_axes}")
    right_axes = [i for i in range(t.ndim) if i not in left_axes]
    tt = np.transpose(t, left_axes + right_axes)
    lshape = tt.shape[: len(left_axes)]
    rshape = tt.shape[len(left_axes):]
    mat = tt.reshape(int(np.prod(lshape)), int(np.prod(rshape)))
    if policy is None:
        policy = SvdPolicy(cutoff=0.0, max_bond=min(mat.shape))
    u, s, vh, _ = truncated_svd(mat, policy)
    chi = len(s)
    return u.reshape(*lshape, chi), s, vh.reshape(chi, *rshape)


def matrix_exponential(m) -> np.ndarray:
    """Exponential of a square complex matrix (Pade scaling and squaring)."""
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"matrix_exponential needs a square matrix, got shape {m.shape}")
    return scipy.linalg.expm(m)
