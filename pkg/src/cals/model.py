"""CP model container: factor matrices plus fit bookkeeping."""

from __future__ import annotations

import enum
import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ModelStatus(enum.Enum):
    PENDING = "pending"
    ACTIVE = "active"
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"
    FAILED = "failed"


@dataclass
class Model:
    """One CP instance: N factor matrices of a common rank plus its state.

    ``factors[n]`` is a Fortran-ordered ``(I_n, rank)`` float64 array.
    ``error`` is the squared residual against the target tensor, ``fit``
    is ``1 - sqrt(error)/||T||``; both refer to the last completed
    iteration.
    """

    id: str
    rank: int
    factors: list[np.ndarray]
    error: float = np.inf
    fit: float = -np.inf
    iterations_done: int = 0
    status: ModelStatus = ModelStatus.PENDING
    seconds_active: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        for n, f in enumerate(self.factors):
            f = np.asfortranarray(f, dtype=np.float64)
            if f.ndim != 2 or f.shape[1] != self.rank:
                raise ValueError(
                    f"factor {n} has shape {f.shape}, expected (*, {self.rank})"
                )
            # Failed instances are emitted as-is for diagnosis.
            if self.status is not ModelStatus.FAILED and not np.all(np.isfinite(f)):
                raise ValueError(f"factor {n} contains non-finite entries")
            self.factors[n] = f

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @classmethod
    def random(
        cls,
        dims: Sequence[int],
        rank: int,
        rng: np.random.Generator | int | None = None,
        id: str = "",
    ) -> "Model":
        """Starting point with uniform(0, 1) entries from a seeded generator."""
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        factors = [
            np.asfortranarray(rng.random((int(d), rank))) for d in dims
        ]
        return cls(id=id, rank=rank, factors=factors)

    def copy_factors(self) -> list[np.ndarray]:
        return [f.copy(order="F") for f in self.factors]

    def to_dense(self) -> np.ndarray:
        """Materialize the model as a dense N-d array (sum of rank-1 terms)."""
        n = len(self.factors)
        letters = string.ascii_lowercase[:n]
        spec = ",".join(f"{c}z" for c in letters) + "->" + letters
        return np.einsum(spec, *self.factors)
