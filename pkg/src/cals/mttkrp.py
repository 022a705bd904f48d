"""MTTKRP kernels: algorithmic variants plus the fused multi-instance form.

Every variant computes ``T_(n) @ (krp of the other factors, descending mode
order)`` without ever materializing a permuted copy of the tensor. Results
land in a caller-owned workspace so the driver performs no per-iteration
allocation. The fused form is the same kernel at the combined width of all
active instances; constituent column blocks of its output are the
per-instance MTTKRPs.
"""

from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np

from .tensor import DenseTensor, collapse_around, khatri_rao, unfold_first


class MttkrpVariant(enum.Enum):
    EXPLICIT_KRP_GEMM = "explicit"        # fallback, valid for every mode/order
    FIRST_MODE_GEMM = "first"             # mode 0 only
    LAST_MODE_GEMM = "last"               # mode N-1 only
    MIDDLE_MODE_SLICE_GEMM = "middle"     # interior mode of an order-3 tensor


# Static choice per (order, mode); anything absent falls back to the explicit
# KRP path. A single data constant so benchmark results can override it.
DEFAULT_VARIANT_TABLE: dict[tuple[int, int], MttkrpVariant] = {
    (2, 0): MttkrpVariant.FIRST_MODE_GEMM,
    (2, 1): MttkrpVariant.LAST_MODE_GEMM,
    (3, 0): MttkrpVariant.FIRST_MODE_GEMM,
    (3, 1): MttkrpVariant.MIDDLE_MODE_SLICE_GEMM,
    (3, 2): MttkrpVariant.LAST_MODE_GEMM,
}


def validate_variant(variant: MttkrpVariant, order: int, mode: int) -> None:
    """Reject variant/mode pairings outside the variant's validity domain."""
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for order {order}")
    v = MttkrpVariant
    ok = (
        variant is v.EXPLICIT_KRP_GEMM
        or (variant is v.FIRST_MODE_GEMM and mode == 0)
        or (variant is v.LAST_MODE_GEMM and mode == order - 1)
        or (variant is v.MIDDLE_MODE_SLICE_GEMM and order == 3 and mode == 1)
    )
    if not ok:
        raise ValueError(
            f"variant {variant.value} invalid for mode {mode} of an order-{order} tensor"
        )


def select_variant(
    dims: Sequence[int],
    mode: int,
    width: int,
    table: dict[tuple[int, int], MttkrpVariant] | None = None,
) -> MttkrpVariant:
    """Deterministic variant choice for a given shape, mode, and width."""
    order = len(dims)
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for order {order}")
    if table is None:
        table = DEFAULT_VARIANT_TABLE
    return table.get((order, mode), MttkrpVariant.EXPLICIT_KRP_GEMM)


def mttkrp_flops(dims: Sequence[int], width: int) -> int:
    """Flop model for one mode-n MTTKRP at the given width: 2 * W * prod(dims)."""
    if width < 0:
        raise ValueError("width must be >= 0")
    return 2 * int(width) * int(math.prod(int(d) for d in dims))


class MttkrpWorkspace:
    """Preallocated buffers for KRP materialization and kernel output.

    Sized once for a tensor shape and a maximum width (the driver's column
    capacity); kernels only ever reshape flat slices of these buffers, so no
    allocation happens per call.
    """

    def __init__(self, dims: Sequence[int], capacity: int):
        dims = tuple(int(d) for d in dims)
        if capacity < 1:
            raise ValueError("workspace capacity must be >= 1")
        self.dims = dims
        self.capacity = int(capacity)
        total = math.prod(dims)
        max_krp_rows = total // min(dims)
        self._krp = np.empty(max_krp_rows * self.capacity)
        self._out = np.empty(max(dims) * self.capacity)
        self._scratch = np.empty(max(dims) * self.capacity)

    def _view(self, buf: np.ndarray, rows: int, width: int) -> np.ndarray:
        need = rows * width
        if need > buf.size:
            raise ValueError(
                f"width {width} exceeds workspace capacity {self.capacity}"
            )
        return buf[:need].reshape((rows, width), order="F")

    def krp_view(self, rows: int, width: int) -> np.ndarray:
        return self._view(self._krp, rows, width)

    def out_view(self, rows: int, width: int) -> np.ndarray:
        return self._view(self._out, rows, width)

    def scratch_view(self, rows: int, width: int) -> np.ndarray:
        return self._view(self._scratch, rows, width)


def _descending_others(factors: Sequence[np.ndarray], mode: int) -> list[np.ndarray]:
    return [factors[i] for i in range(len(factors) - 1, -1, -1) if i != mode]


def _explicit_krp(
    parts: Sequence[np.ndarray], ws: MttkrpWorkspace, rows: int, width: int
) -> np.ndarray:
    """Fold the KRP of `parts` (already in descending mode order) into ws."""
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return khatri_rao(parts[0], parts[1], out=ws.krp_view(rows, width))
    # Order >= 4 fallback: intermediates are allocated (small by construction
    # relative to the final product, which still lands in the workspace).
    acc = khatri_rao(parts[0], parts[1])
    for p in parts[2:-1]:
        acc = khatri_rao(acc, p)
    return khatri_rao(acc, parts[-1], out=ws.krp_view(rows, width))


def _check_factors(t: DenseTensor, factors: Sequence[np.ndarray], mode: int) -> int:
    if len(factors) != t.order:
        raise ValueError(
            f"expected {t.order} factors, got {len(factors)}"
        )
    width = None
    for i, f in enumerate(factors):
        if i == mode:
            continue
        if f.ndim != 2 or f.shape[0] != t.dims[i]:
            raise ValueError(
                f"factor {i} has shape {f.shape}, expected ({t.dims[i]}, W)"
            )
        if width is None:
            width = f.shape[1]
        elif f.shape[1] != width:
            raise ValueError("factors disagree on column count")
    return width


def _mttkrp_core(
    t: DenseTensor,
    factors: Sequence[np.ndarray],
    mode: int,
    variant: MttkrpVariant,
    ws: MttkrpWorkspace,
) -> np.ndarray:
    dims = t.dims
    n_last = t.order - 1
    width = _check_factors(t, factors, mode)
    validate_variant(variant, t.order, mode)
    out = ws.out_view(dims[mode], width)
    v = MttkrpVariant

    if variant is v.MIDDLE_MODE_SLICE_GEMM:
        # out = sum_k T(:,:,k)^T @ A0, each term scaled row-wise by A2[k, :].
        # Slices ascend so the accumulation order is deterministic.
        s = collapse_around(t, mode)
        left, right = factors[0], factors[2]
        tmp = ws.scratch_view(dims[mode], width)
        out[:] = 0.0
        for k in range(s.shape[2]):
            np.matmul(s[:, :, k].T, left, out=tmp)
            tmp *= right[k, :]
            out += tmp
        return out

    if variant is v.EXPLICIT_KRP_GEMM and 0 < mode < n_last:
        # Interior fallback: materialize the full KRP once, then one GEMM per
        # collapsed trailing slab against the matching KRP row block.
        s = collapse_around(t, mode)
        left_rows, _, right_rows = s.shape
        krp = _explicit_krp(
            _descending_others(factors, mode), ws, left_rows * right_rows, width
        )
        tmp = ws.scratch_view(dims[mode], width)
        out[:] = 0.0
        for k in range(right_rows):
            np.matmul(
                s[:, :, k].T, krp[k * left_rows:(k + 1) * left_rows, :], out=tmp
            )
            out += tmp
        return out

    # First/last mode: explicit KRP plus a single GEMM on a no-copy view.
    rows = t.size // dims[mode]
    krp = _explicit_krp(_descending_others(factors, mode), ws, rows, width)
    if mode == 0:
        np.matmul(unfold_first(t), krp, out=out)
    else:
        lead = t.data.reshape((-1, dims[n_last]), order="F")
        np.matmul(lead.T, krp, out=out)
    return out


def mttkrp(
    t: DenseTensor,
    factors: Sequence[np.ndarray],
    mode: int,
    variant: MttkrpVariant | None = None,
    ws: MttkrpWorkspace | None = None,
) -> np.ndarray:
    """Mode-n MTTKRP: ``T_(n) @ (krp of factors[i != mode])``, shape (I_n, W).

    ``factors[mode]`` is ignored (present so callers can pass a full factor
    list). The result is a view into the workspace's output buffer and is
    overwritten by the next kernel call on the same workspace.
    """
    if variant is None:
        width = factors[(mode + 1) % len(factors)].shape[1]
        variant = select_variant(t.dims, mode, width)
    if ws is None:
        width = _check_factors(t, factors, mode)
        ws = MttkrpWorkspace(t.dims, width)
    return _mttkrp_core(t, factors, mode, variant, ws)


def fused_mttkrp(
    t: DenseTensor,
    multis: Sequence,
    mode: int,
    ws: MttkrpWorkspace,
    variant: MttkrpVariant | None = None,
) -> np.ndarray:
    """One wide MTTKRP over the packed active region of the multi-matrices.

    ``multis`` holds one multi-matrix per mode with identical layouts; the
    returned ``(I_mode, W)`` buffer view contains each instance's MTTKRP in
    its layout column range.
    """
    widths = {mm.active_width for mm in multis}
    if len(widths) != 1:
        raise ValueError(f"multi-matrices disagree on active width: {widths}")
    (width,) = widths
    if width == 0:
        raise ValueError("no active instances")
    views = [mm.packed_view() for mm in multis]
    if variant is None:
        variant = select_variant(t.dims, mode, width)
    return _mttkrp_core(t, views, mode, variant, ws)
