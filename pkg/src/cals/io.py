"""Tensor file format, synthetic data generation, and run configuration.

Binary format ("CALS1"): a small fixed header followed by raw little-endian
float64 values in first-mode-fastest order.

    bytes 0..4   magic b"CALS1"
    byte  5      scalar kind (0 = float64)
    byte  6      layout (0 = first mode fastest)
    byte  7      reserved (0)
    uint32 LE    order N
    N x uint64   extents
    payload      8 * prod(dims) bytes

Round trips are bitwise exact.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Model
from .multimatrix import DEFAULT_R_STAR
from .tensor import DenseTensor

MAGIC = b"CALS1"
SCALAR_FLOAT64 = 0
LAYOUT_FIRST_FASTEST = 0

EXECUTION_MODES = ("sequential", "parallel", "cals")


class TensorFileError(ValueError):
    """Malformed or truncated tensor file."""


def write_tensor(path, t: DenseTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([SCALAR_FLOAT64, LAYOUT_FIRST_FASTEST, 0]))
        fh.write(struct.pack("<I", t.order))
        fh.write(struct.pack(f"<{t.order}Q", *t.dims))
        fh.write(t.data.astype("<f8", copy=False).tobytes())


def read_tensor(path) -> DenseTensor:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8 or head[:5] != MAGIC:
            raise TensorFileError(f"{path}: not a CALS1 tensor file")
        if head[5] != SCALAR_FLOAT64:
            raise TensorFileError(f"{path}: unsupported scalar kind {head[5]}")
        if head[6] != LAYOUT_FIRST_FASTEST:
            raise TensorFileError(f"{path}: unsupported layout {head[6]}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise TensorFileError(f"{path}: truncated header")
        (order,) = struct.unpack("<I", raw)
        if order < 2:
            raise TensorFileError(f"{path}: order {order} < 2")
        raw = fh.read(8 * order)
        if len(raw) != 8 * order:
            raise TensorFileError(f"{path}: truncated extents")
        dims = struct.unpack(f"<{order}Q", raw)
        want = 8 * math.prod(dims)
        payload = fh.read(want + 1)
        if len(payload) != want:
            raise TensorFileError(
                f"{path}: payload is {len(payload)} bytes, expected {want}"
            )
        data = np.frombuffer(payload, dtype="<f8").astype(np.float64, copy=True)
    return DenseTensor(dims, data)


def write_matrix(path, m: np.ndarray) -> None:
    """Store a factor matrix as an order-2 tensor file."""
    m = np.asarray(m, dtype=np.float64)
    write_tensor(path, DenseTensor(m.shape, m.ravel(order="F")))


def read_matrix(path) -> np.ndarray:
    t = read_tensor(path)
    if t.order != 2:
        raise TensorFileError(f"{path}: expected a matrix, got order {t.order}")
    return np.asfortranarray(t.as_ndarray())


def read_tensor_csv(path, dims) -> DenseTensor:
    """Small test importer: lines of ``i_0,...,i_{N-1},value`` (0-based)."""
    dims = tuple(int(d) for d in dims)
    data = np.zeros(math.prod(dims))
    strides = np.cumprod((1,) + dims[:-1])
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != len(dims) + 1:
                raise TensorFileError(
                    f"{path}:{lineno}: expected {len(dims)} indices + value"
                )
            idx = [int(p) for p in parts[:-1]]
            if any(not 0 <= i < d for i, d in zip(idx, dims)):
                raise TensorFileError(f"{path}:{lineno}: index out of range")
            data[int(np.dot(idx, strides))] = float(parts[-1])
    return DenseTensor(dims, data)


def generate_synthetic(
    dims, true_rank: int, noise_level: float = 0.0, seed: int | None = None
) -> DenseTensor:
    """Random low-rank tensor plus optional scaled Gaussian noise.

    Factors have uniform(0, 1) entries; noise is i.i.d. standard normal
    rescaled so its norm is ``noise_level`` times the signal norm. One seed
    fixes the tensor bitwise.
    """
    dims = tuple(int(d) for d in dims)
    if true_rank < 1:
        raise ValueError("true_rank must be >= 1")
    rng = np.random.default_rng(seed)
    factors = [rng.random((d, true_rank)) for d in dims]
    letters = "abcdefghijklmnopqrstuvwxyz"[:len(dims)]
    spec = ",".join(f"{c}z" for c in letters) + "->" + letters
    signal = np.einsum(spec, *factors)
    if noise_level > 0.0:
        g = rng.standard_normal(dims)
        signal = signal + noise_level * (
            np.linalg.norm(signal) / np.linalg.norm(g)
        ) * g
    return DenseTensor(dims, signal.ravel(order="F"))


def parse_ranks(spec: str) -> list[int]:
    """Parse a rank spec: ``"3"``, ``"1..20"``, or ``"2,5,5,7"``."""
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        lo, hi = int(lo), int(hi)
        if lo < 1 or hi < lo:
            raise ValueError(f"bad rank range {spec!r}")
        return list(range(lo, hi + 1))
    ranks = [int(p) for p in spec.split(",") if p.strip()]
    if not ranks or any(r < 1 for r in ranks):
        raise ValueError(f"bad rank list {spec!r}")
    return ranks


def build_models(dims, ranks, per_rank: int, seed: int) -> list[Model]:
    """Seeded starting points, one per (rank, replicate), in ascending rank
    then replicate order. The (seed, order) pair fixes every factor bitwise.
    """
    models = []
    ss = np.random.SeedSequence(seed)
    children = iter(ss.spawn(len(ranks) * per_rank))
    seen: dict[int, int] = {}
    for rank in ranks:
        for _ in range(per_rank):
            rng = np.random.default_rng(next(children))
            j = seen.get(rank, 0)
            seen[rank] = j + 1  # a requested rank may repeat
            models.append(
                Model.random(dims, rank, rng, id=f"r{rank:02d}-{j:02d}")
            )
    return models


@dataclass
class RunConfig:
    """Validated configuration for a `decompose` run; serialized with the
    results so a run can be reproduced from its output alone."""

    ranks: list[int]
    per_rank: int = 1
    tol: float = 1e-6
    max_iterations: int = 1000
    r_star: int = DEFAULT_R_STAR
    mode: str = "cals"
    threads: int = 1
    line_search: bool = False
    line_search_alpha: float | None = None
    non_negative: bool = False
    seed: int = 0
    deterministic: bool = False
    tensor_path: str | None = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.ranks or any(r < 1 for r in self.ranks):
            raise ValueError("ranks must be a nonempty list of positive ints")
        if self.per_rank < 1:
            raise ValueError("per_rank must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.r_star < max(self.ranks):
            raise ValueError(
                f"r_star {self.r_star} is smaller than the largest rank "
                f"{max(self.ranks)}"
            )
        if self.mode not in EXECUTION_MODES:
            raise ValueError(f"mode must be one of {EXECUTION_MODES}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.line_search_alpha is not None and self.line_search_alpha <= 1:
            raise ValueError("line-search alpha must be > 1")

    def to_dict(self) -> dict:
        return {
            "ranks": list(self.ranks),
            "per_rank": self.per_rank,
            "tol": self.tol,
            "max_iterations": self.max_iterations,
            "r_star": self.r_star,
            "mode": self.mode,
            "threads": self.threads,
            "line_search": self.line_search,
            "line_search_alpha": self.line_search_alpha,
            "non_negative": self.non_negative,
            "seed": self.seed,
            "deterministic": self.deterministic,
            "tensor_path": self.tensor_path,
            **({"extra": self.extra} if self.extra else {}),
        }


def model_record(m: Model, factor_files: list[str] | None = None) -> dict:
    rec = {
        "id": m.id,
        "rank": m.rank,
        "fit": m.fit,
        "error": m.error,
        "iterations": m.iterations_done,
        "status": m.status.value,
        "seconds_active": m.seconds_active,
    }
    if factor_files is not None:
        rec["factor_files"] = factor_files
    return rec


def save_factors(directory, model: Model) -> list[str]:
    """Write each factor as a CALS1 matrix file; returns relative names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for n, f in enumerate(model.factors):
        name = f"{model.id}_mode{n}.cals"
        write_matrix(directory / name, f)
        names.append(name)
    return names
