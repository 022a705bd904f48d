"""Fixed-capacity column buffers for the concatenated factor matrices.

One buffer per tensor mode holds the horizontally concatenated factor
matrices of all active instances. Buffers never grow: instances are inserted
at the tail, removed by copying their block out, and a compression pass packs
the surviving blocks left so the active region stays contiguous for the
fused kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Model

DEFAULT_R_STAR = 4200


class CapacityError(ValueError):
    """A requested rank exceeds the buffer capacity (configuration error)."""


@dataclass
class LayoutEntry:
    instance_id: str
    offset: int
    rank: int


class MultiMatrix:
    """One mode's fixed buffer: ``rows x capacity`` Fortran-ordered columns."""

    def __init__(self, rows: int, capacity: int):
        if rows < 1 or capacity < 1:
            raise ValueError("rows and capacity must be >= 1")
        self.rows = int(rows)
        self.capacity = int(capacity)
        self.data = np.zeros((self.rows, self.capacity), order="F")
        self.layout: list[LayoutEntry] = []
        self.moves = 0  # blocks relocated by compress() over the lifetime

    @property
    def active_width(self) -> int:
        return sum(e.rank for e in self.layout)

    @property
    def extent_end(self) -> int:
        """End of the last occupied block (insertion point)."""
        return self.layout[-1].offset + self.layout[-1].rank if self.layout else 0

    def is_compact(self) -> bool:
        off = 0
        for e in self.layout:
            if e.offset != off:
                return False
            off += e.rank
        return True

    def can_insert(self, rank: int) -> bool:
        return self.extent_end + rank <= self.capacity

    def insert(self, instance_id: str, factor: np.ndarray) -> int:
        """Copy ``factor`` to the tail of the buffer; returns its offset."""
        if factor.shape != (self.rows, factor.shape[1]):
            raise ValueError(f"factor rows {factor.shape[0]} != buffer rows {self.rows}")
        rank = factor.shape[1]
        if rank > self.capacity:
            raise CapacityError(
                f"rank {rank} exceeds buffer capacity {self.capacity}"
            )
        if not self.can_insert(rank):
            raise ValueError("buffer full; caller must check can_insert first")
        if any(e.instance_id == instance_id for e in self.layout):
            raise ValueError(f"instance {instance_id!r} already present")
        offset = self.extent_end
        self.data[:, offset:offset + rank] = factor
        self.layout.append(LayoutEntry(instance_id, offset, rank))
        return offset

    def _find(self, instance_id: str) -> int:
        for i, e in enumerate(self.layout):
            if e.instance_id == instance_id:
                return i
        raise KeyError(f"unknown instance {instance_id!r}")

    def entry(self, instance_id: str) -> LayoutEntry:
        return self.layout[self._find(instance_id)]

    def view(self, instance_id: str) -> np.ndarray:
        """Writable column-slice view of one constituent matrix."""
        e = self.entry(instance_id)
        return self.data[:, e.offset:e.offset + e.rank]

    def remove(self, instance_id: str) -> np.ndarray:
        """Delete the layout entry and return a copy of the block."""
        i = self._find(instance_id)
        e = self.layout.pop(i)
        return self.data[:, e.offset:e.offset + e.rank].copy(order="F")

    def compress(self) -> int:
        """Pack blocks left in layout order; returns blocks moved this call."""
        moved = 0
        off = 0
        for e in self.layout:
            if e.offset != off:
                self.data[:, off:off + e.rank] = self.data[:, e.offset:e.offset + e.rank]
                e.offset = off
                moved += 1
            off += e.rank
        self.moves += moved
        return moved

    def packed_view(self) -> np.ndarray:
        """Contiguous view of all active columns; requires a compact layout."""
        if not self.is_compact():
            raise ValueError("buffer fragmented; compress before taking packed view")
        return self.data[:, :self.active_width]


class MultiMatrixSet:
    """N per-mode multi-matrices sharing one column layout."""

    def __init__(self, dims: Sequence[int], capacity: int = DEFAULT_R_STAR):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.per_mode = [MultiMatrix(d, self.capacity) for d in dims]

    @property
    def layout(self) -> list[LayoutEntry]:
        return self.per_mode[0].layout

    @property
    def active_width(self) -> int:
        return self.per_mode[0].active_width

    def __iter__(self):
        return iter(self.per_mode)

    def try_insert(self, model: Model) -> bool:
        """Admit a model's factors into every buffer, or change nothing.

        Returns False when the tail cannot take the block (the caller leaves
        the model at the queue front). A rank beyond the buffer capacity is a
        configuration error, not a full buffer.
        """
        if model.rank > self.capacity:
            raise CapacityError(
                f"rank {model.rank} exceeds capacity {self.capacity}"
            )
        if not all(mm.can_insert(model.rank) for mm in self.per_mode):
            return False
        for mm, factor in zip(self.per_mode, model.factors):
            mm.insert(model.id, factor)
        return True

    def views(self, instance_id: str) -> list[np.ndarray]:
        return [mm.view(instance_id) for mm in self.per_mode]

    def remove(self, instance_id: str) -> list[np.ndarray]:
        return [mm.remove(instance_id) for mm in self.per_mode]

    def compress(self) -> int:
        return sum(mm.compress() for mm in self.per_mode)
