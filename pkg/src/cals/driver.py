"""Batch drivers: sequential ALS, concurrent instances, and the fused form.

The fused driver advances every admitted instance one iteration at a time:
a single wide MTTKRP per mode over the packed multi-matrices, then a small
per-instance loop for Gramians, factor updates, error/fit, and retirement.
Admission is strict FIFO from the input queue; a compression pass after each
retirement sweep keeps the active columns contiguous.
"""

from __future__ import annotations

import enum
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .als import (
    ConvergenceConfig,
    LineSearchConfig,
    NnlsState,
    alpha_for_iteration,
    extrapolate_factors,
    fast_error,
    fit_from_error,
    nnls_update,
    run_single_als,
    update_factor,
)
from .model import Model, ModelStatus
from .mttkrp import MttkrpWorkspace, fused_mttkrp, mttkrp_flops, select_variant
from .multimatrix import DEFAULT_R_STAR, CapacityError, MultiMatrixSet
from .tensor import DenseTensor, gramian, hadamard_fold


class ExecutionMode(enum.Enum):
    SEQUENTIAL = "sequential"   # one instance at a time, multithreaded kernels
    PARALLEL = "parallel"       # instances in parallel, single-threaded kernels
    CALS = "cals"               # all instances fused through wide kernels


@dataclass
class SegmentTrace:
    """Timing/flop record for one measured segment of a batch run."""

    label: str
    flops: int
    seconds: float
    meta: dict = field(default_factory=dict)


@dataclass
class _InstanceState:
    model: Model
    iteration: int = 0
    f_prev: float = -np.inf
    error: float = np.inf
    fit: float = -np.inf
    grams: list = field(default_factory=list)
    snapshot: list | None = None
    nnls: NnlsState | None = None
    started: float = 0.0
    failed: bool = False


_NUMERICAL_FAILURES = (ValueError, ArithmeticError, np.linalg.LinAlgError)


def run(
    t: DenseTensor,
    models: Iterable[Model],
    cfg: ConvergenceConfig,
    *,
    mode: ExecutionMode = ExecutionMode.CALS,
    r_star: int = DEFAULT_R_STAR,
    ls: LineSearchConfig | None = None,
    nonneg: bool = False,
    threads: int = 1,
    deterministic: bool = False,
    trace: list[SegmentTrace] | None = None,
    variant_table=None,
) -> list[Model]:
    """Fit every queued model against the shared tensor; returns the output
    queue. Input models are treated as read-only starting points.

    ``deterministic`` pins kernels to one BLAS thread so runs of different
    execution modes can be compared bit-for-bit at K=1 (and to tight
    tolerances otherwise).
    """
    if ls is None:
        ls = LineSearchConfig()
    queue = deque(models)
    for m in queue:
        if m.dims != t.dims:
            raise ValueError(f"model {m.id!r} dims {m.dims} != tensor {t.dims}")
    if mode is ExecutionMode.CALS:
        for m in queue:
            if m.rank > r_star:
                raise CapacityError(
                    f"model {m.id!r} rank {m.rank} exceeds r_star {r_star}"
                )
    blas_threads = 1 if deterministic else max(1, threads)
    if mode is ExecutionMode.SEQUENTIAL:
        with threadpool_limits(limits=blas_threads):
            return _run_sequential(t, queue, cfg, ls, nonneg, trace, variant_table)
    if mode is ExecutionMode.PARALLEL:
        # Instance-level parallelism wants single-threaded kernels underneath.
        with threadpool_limits(limits=1):
            return _run_parallel(
                t, queue, cfg, ls, nonneg, max(1, threads), trace, variant_table
            )
    if mode is ExecutionMode.CALS:
        with threadpool_limits(limits=blas_threads):
            return _run_cals(
                t, queue, cfg, r_star, ls, nonneg, trace, variant_table
            )
    raise ValueError(f"unknown execution mode {mode!r}")


def _instance_flops(t: DenseTensor, rank: int, iterations: int) -> int:
    return iterations * t.order * mttkrp_flops(t.dims, rank)


def _run_sequential(t, queue, cfg, ls, nonneg, trace, variant_table):
    out = []
    max_rank = max((m.rank for m in queue), default=1)
    ws = MttkrpWorkspace(t.dims, max_rank)
    while queue:
        m = queue.popleft()
        tic = time.perf_counter()
        res = _fit_or_fail(t, m, cfg, ls, nonneg, ws, variant_table)
        res.seconds_active = time.perf_counter() - tic
        if trace is not None:
            trace.append(SegmentTrace(
                label=f"als:{res.id}",
                flops=_instance_flops(t, res.rank, res.iterations_done),
                seconds=res.seconds_active,
                meta={"id": res.id, "rank": res.rank,
                      "iterations": res.iterations_done},
            ))
        out.append(res)
    return out


def _fit_or_fail(t, m, cfg, ls, nonneg, ws, variant_table) -> Model:
    """Run one instance; numerical blow-ups retire it with FAILED instead of
    taking the whole batch down."""
    try:
        return run_single_als(t, m, cfg, ls, nonneg, ws, variant_table)
    except _NUMERICAL_FAILURES:
        return Model(
            id=m.id, rank=m.rank, factors=m.copy_factors(),
            error=float("nan"), fit=-np.inf, status=ModelStatus.FAILED,
            meta=dict(m.meta),
        )


def _run_parallel(t, queue, cfg, ls, nonneg, workers, trace, variant_table):
    def fit_one(m: Model) -> Model:
        ws = MttkrpWorkspace(t.dims, m.rank)
        tic = time.perf_counter()
        res = _fit_or_fail(t, m, cfg, ls, nonneg, ws, variant_table)
        res.seconds_active = time.perf_counter() - tic
        return res

    inputs = list(queue)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(fit_one, inputs))
    if trace is not None:
        for res in results:
            trace.append(SegmentTrace(
                label=f"als:{res.id}",
                flops=_instance_flops(t, res.rank, res.iterations_done),
                seconds=res.seconds_active,
                meta={"id": res.id, "rank": res.rank,
                      "iterations": res.iterations_done},
            ))
    return results


def _run_cals(t, queue, cfg, r_star, ls, nonneg, trace, variant_table):
    n_modes = t.order
    mms = MultiMatrixSet(t.dims, r_star)
    ws = MttkrpWorkspace(t.dims, r_star)
    ls_ws = None
    if ls.enabled:
        # Separate buffers: extrapolation kernels must not clobber the fused
        # last-mode output while other instances still need their slice.
        max_rank = max((m.rank for m in queue), default=1)
        ls_ws = MttkrpWorkspace(t.dims, max_rank)
    registry: list[_InstanceState] = []
    q_out: list[Model] = []

    while queue or registry:
        # Admit from the queue head while the buffers can take it.
        while queue and mms.try_insert(queue[0]):
            m = queue.popleft()
            m.status = ModelStatus.ACTIVE
            registry.append(_InstanceState(
                model=m,
                grams=[gramian(v) for v in mms.views(m.id)],
                nnls=NnlsState(t.dims, m.rank) if nonneg else None,
                started=time.perf_counter(),
            ))

        tic = time.perf_counter()
        width = mms.active_width
        m_fused = None
        for n in range(n_modes):
            variant = select_variant(t.dims, n, width, variant_table)
            m_fused = fused_mttkrp(t, mms.per_mode, n, ws, variant=variant)
            offsets = {e.instance_id: (e.offset, e.rank) for e in mms.layout}
            for inst in registry:
                if inst.failed:
                    continue
                off, r = offsets[inst.model.id]
                m_k = m_fused[:, off:off + r]
                try:
                    h_k = hadamard_fold(
                        [inst.grams[i] for i in range(n_modes) if i != n]
                    )
                    if nonneg:
                        a_new = nnls_update(m_k, h_k, inst.nnls, n)
                    else:
                        a_new = update_factor(m_k, h_k)
                except _NUMERICAL_FAILURES:
                    inst.failed = True
                    continue
                view = mms.per_mode[n].data[:, off:off + r]
                np.copyto(view, a_new)
                inst.grams[n] = gramian(view)

        # Error/fit per instance from the already-computed last-mode slices,
        # then retire whoever converged, stalled, or failed.
        offsets = {e.instance_id: (e.offset, e.rank) for e in mms.layout}
        retiring: list[tuple[_InstanceState, ModelStatus]] = []
        for inst in registry:
            inst.iteration += 1
            if inst.failed:
                inst.error, inst.fit = float("nan"), -np.inf
                retiring.append((inst, ModelStatus.FAILED))
                continue
            off, r = offsets[inst.model.id]
            views = mms.views(inst.model.id)
            e = fast_error(t.sqnorm, views, m_fused[:, off:off + r], inst.grams)
            if ls.enabled and inst.snapshot is not None and np.isfinite(e):
                alpha = alpha_for_iteration(ls, inst.iteration)
                cand, cand_grams, e_cand = extrapolate_factors(
                    t, inst.snapshot, views, alpha, ls_ws, variant_table
                )
                if e_cand < e:
                    for v, c in zip(views, cand):
                        np.copyto(v, c)
                    inst.grams = cand_grams
                    e = e_cand
            if not np.isfinite(e):
                inst.error, inst.fit = float(e), -np.inf
                retiring.append((inst, ModelStatus.FAILED))
                continue
            fit = fit_from_error(e, t.sqnorm)
            inst.error, inst.fit = float(e), float(fit)
            if cfg.tol > 0 and fit - inst.f_prev < cfg.tol:
                retiring.append((inst, ModelStatus.CONVERGED))
            elif inst.iteration >= cfg.max_iterations:
                retiring.append((inst, ModelStatus.ITERATION_CAP))
            else:
                inst.f_prev = fit
                if ls.enabled:
                    inst.snapshot = [v.copy(order="F") for v in views]
        for inst, status in retiring:
            q_out.append(_retire_and_emit(registry, mms, inst, status))
        mms.compress()

        if trace is not None:
            trace.append(SegmentTrace(
                label="cals-iteration",
                flops=n_modes * mttkrp_flops(t.dims, width),
                seconds=time.perf_counter() - tic,
                meta={"width": width, "n_active": len(registry) + len(retiring)},
            ))
    return q_out


def _retire_and_emit(
    registry: list[_InstanceState],
    mms: MultiMatrixSet,
    inst: _InstanceState,
    status: ModelStatus,
) -> Model:
    """Copy an instance's factors out of the buffers and free its columns."""
    factors = mms.remove(inst.model.id)
    registry.remove(inst)
    return Model(
        id=inst.model.id,
        rank=inst.model.rank,
        factors=factors,
        error=inst.error,
        fit=inst.fit,
        iterations_done=inst.iteration,
        status=status,
        seconds_active=time.perf_counter() - inst.started,
        meta=dict(inst.model.meta),
    )
