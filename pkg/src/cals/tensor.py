"""Dense tensor storage and the elementary factor-matrix products.

All tensors are double precision and linearized with the first mode
fastest-varying (column-major style). Factor matrices are Fortran-ordered
``(I_n, R)`` arrays so that column blocks of a wider buffer stay contiguous.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class DenseTensor:
    """N-way dense tensor with a fixed mode-0-fastest linearization.

    Parameters
    ----------
    dims:
        Extents ``(I_0, ..., I_{N-1})``, all >= 1, N >= 2.
    data:
        Flat float64 array of length ``prod(dims)``, first mode fastest.
    sqnorm:
        Optional precomputed squared Frobenius norm. Validated against the
        data when given; computed lazily (once) otherwise.

    Instances are immutable after construction and safe to share across
    threads.
    """

    __slots__ = ("dims", "data", "_sqnorm")

    def __init__(
        self,
        dims: Sequence[int],
        data: np.ndarray,
        sqnorm: float | None = None,
    ):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2:
            raise ValueError(f"tensor order must be >= 2, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"all extents must be >= 1, got {dims}")
        data = np.ascontiguousarray(data, dtype=np.float64).ravel()
        if data.size != int(np.prod(dims)):
            raise ValueError(
                f"data length {data.size} != prod(dims) {int(np.prod(dims))}"
            )
        data.flags.writeable = False
        self.dims = dims
        self.data = data
        if sqnorm is not None:
            actual = float(np.dot(data, data))
            if abs(sqnorm - actual) > 1e-12 * max(actual, 1.0):
                raise ValueError(
                    f"sqnorm cache {sqnorm} inconsistent with data ({actual})"
                )
        self._sqnorm = sqnorm

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "DenseTensor":
        """Build from an N-d array, re-linearizing to first-mode-fastest."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim < 2:
            raise ValueError("array must have at least 2 dimensions")
        return cls(arr.shape, arr.ravel(order="F"))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def sqnorm(self) -> float:
        """Squared Frobenius norm, computed once and cached."""
        if self._sqnorm is None:
            self._sqnorm = float(np.dot(self.data, self.data))
        return self._sqnorm

    def as_ndarray(self) -> np.ndarray:
        """Read-only N-d view of the data (no copy)."""
        return self.data.reshape(self.dims, order="F")

    def __repr__(self) -> str:
        return f"DenseTensor(dims={self.dims})"


def unfold_first(t: DenseTensor) -> np.ndarray:
    """Mode-0 unfolding as a no-copy view of shape ``(I_0, prod rest)``."""
    return t.data.reshape((t.dims[0], -1), order="F")


def unfold_last(t: DenseTensor) -> np.ndarray:
    """Mode-(N-1) unfolding as a no-copy transpose view."""
    return t.data.reshape((-1, t.dims[-1]), order="F").T


def collapse_around(t: DenseTensor, mode: int) -> np.ndarray:
    """View the tensor as ``(L, I_mode, Rc)`` with neighbouring modes merged.

    ``L = prod(dims[:mode])``, ``Rc = prod(dims[mode+1:])``. Pure reshape of
    the flat data, never a copy; slabs ``view[:, :, k]`` are contiguous.
    """
    if not 0 < mode < t.order - 1:
        raise ValueError(f"mode {mode} is not interior for order {t.order}")
    left = int(np.prod(t.dims[:mode]))
    right = int(np.prod(t.dims[mode + 1:]))
    return t.data.reshape((left, t.dims[mode], right), order="F")


def unfold(t: DenseTensor, mode: int) -> np.ndarray:
    """Mode-n unfolding ``T_(n)`` of shape ``(I_n, prod of the rest)``.

    Column ``c`` enumerates the remaining indices in linearization order
    (lower modes fastest). For ``mode == 0`` and ``mode == N-1`` the result
    is a no-copy view; interior modes materialize a copy and exist for
    oracles and inspection only -- kernels use the slice-wise forms instead.
    """
    if not 0 <= mode < t.order:
        raise ValueError(f"mode {mode} out of range for order {t.order}")
    if mode == 0:
        return unfold_first(t)
    if mode == t.order - 1:
        return unfold_last(t)
    s = collapse_around(t, mode)
    left, m, right = s.shape
    return s.transpose(1, 0, 2).reshape((m, left * right), order="F")


def khatri_rao(a: np.ndarray, b: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Column-wise Kronecker product of ``a`` (I x R) and ``b`` (J x R).

    Column ``j`` of the result is ``kron(a[:, j], b[:, j])``: the ``b`` index
    varies fastest, so row ``i*J + k`` holds ``a[i, j] * b[k, j]``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    ia, r = a.shape
    jb = b.shape[0]
    if out is None:
        out = np.empty((ia * jb, r), order="F")
    elif out.shape != (ia * jb, r):
        raise ValueError(f"out has shape {out.shape}, expected {(ia * jb, r)}")
    # First axis of the 3-d view is the fast (b) index.
    out3 = out.reshape((jb, ia, r), order="F")
    np.multiply(b[:, None, :], a[None, :, :], out=out3)
    return out


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two same-shape matrices."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def hadamard_fold(mats: Iterable[np.ndarray]) -> np.ndarray:
    """Left-to-right elementwise product of a nonempty list of matrices."""
    it = iter(mats)
    try:
        acc = np.array(next(it), dtype=np.float64, copy=True)
    except StopIteration:
        raise ValueError("hadamard_fold needs at least one matrix") from None
    for m in it:
        if m.shape != acc.shape:
            raise ValueError(f"shape mismatch: {acc.shape} vs {m.shape}")
        acc *= m
    return acc


def gramian(a: np.ndarray) -> np.ndarray:
    """``A^T A``, exactly symmetric (upper triangle computed, then mirrored)."""
    g = np.asarray(a).T @ np.asarray(a)
    iu = np.triu_indices(g.shape[0], k=1)
    g[iu[1], iu[0]] = g[iu]
    return g
