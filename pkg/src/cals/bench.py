"""Measurement harness: peak-performance model, MTTKRP sweeps, speedup and
efficiency experiments, with machine-readable reports.

Efficiency is ``flops / seconds / TPP`` where TPP is the theoretical peak of
the host. Flop accounting covers the MTTKRP kernels only (the dominant cost;
2*W*prod(dims) per call), which makes segment totals identical across
execution modes for the same workload. Line-search extrapolation kernels,
when enabled, are excluded from the accounting; benchmarks here run with
line search off.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .als import ConvergenceConfig
from .driver import ExecutionMode, SegmentTrace, run
from .model import Model
from .mttkrp import (
    DEFAULT_VARIANT_TABLE,
    MttkrpVariant,
    MttkrpWorkspace,
    mttkrp,
    mttkrp_flops,
)
from .tensor import DenseTensor


@dataclass(frozen=True)
class TppModel:
    """Theoretical peak: 2 * freq * threads * doubles-per-register * FMA units."""

    freq_ghz: float
    nt: int
    nd: int = 8
    nv: int = 2

    def __post_init__(self):
        for name in ("freq_ghz", "nt", "nd", "nv"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TPP parameter {name} must be positive")

    def gflops(self) -> float:
        return 2.0 * self.freq_ghz * self.nt * self.nd * self.nv


def tpp(model: TppModel) -> float:
    """Theoretical peak performance in GFlops/s."""
    return model.gflops()


@dataclass
class BenchRecord:
    label: str
    flops: int
    seconds: float
    efficiency: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        # Sanity band: turbo can push past nominal TPP, garbage cannot.
        if not 0.0 < self.efficiency < 1.5:
            raise ValueError(
                f"efficiency {self.efficiency:.3f} outside sanity band (0, 1.5) "
                f"for {self.label!r}; check the TPP parameters"
            )


def _efficiency(flops: int, seconds: float, peak_gflops: float) -> float:
    return flops / seconds / 1e9 / peak_gflops


def _valid_variants(order: int, mode: int) -> list[MttkrpVariant]:
    v = [MttkrpVariant.EXPLICIT_KRP_GEMM]
    if mode == 0:
        v.append(MttkrpVariant.FIRST_MODE_GEMM)
    if mode == order - 1:
        v.append(MttkrpVariant.LAST_MODE_GEMM)
    if order == 3 and mode == 1:
        v.append(MttkrpVariant.MIDDLE_MODE_SLICE_GEMM)
    return v


def bench_mttkrp_sweep(
    dims,
    widths,
    *,
    threads: int = 1,
    reps: int = 3,
    tpp_model: TppModel,
    seed: int = 0,
) -> dict:
    """Best-of-variants MTTKRP timing per width (the rising-efficiency sweep).

    Emits one record per (width, mode) for the winning variant and one
    aggregate per width (all modes, total flops over total best time).
    """
    dims = tuple(int(d) for d in dims)
    peak = tpp(tpp_model)
    rng = np.random.default_rng(seed)
    t = DenseTensor(dims, rng.random(math.prod(dims)))
    records: list[BenchRecord] = []
    aggregates: list[BenchRecord] = []
    with threadpool_limits(limits=threads):
        for w in widths:
            factors = [np.asfortranarray(rng.random((d, w))) for d in dims]
            ws = MttkrpWorkspace(dims, w)
            flops_one = mttkrp_flops(dims, w)
            total_best = 0.0
            for mode in range(len(dims)):
                best = np.inf
                best_variant = None
                best_stats = None
                for variant in _valid_variants(len(dims), mode):
                    mttkrp(t, factors, mode, variant=variant, ws=ws)  # warm-up
                    times = []
                    for _ in range(max(reps, 0)):
                        tic = time.perf_counter()
                        mttkrp(t, factors, mode, variant=variant, ws=ws)
                        times.append(time.perf_counter() - tic)
                    if times and min(times) < best:
                        best = min(times)
                        best_variant = variant
                        best_stats = (
                            statistics.fmean(times),
                            statistics.stdev(times) if len(times) > 1 else 0.0,
                        )
                if best_variant is None:
                    continue
                total_best += best
                records.append(BenchRecord(
                    label=f"mttkrp w={w} mode={mode}",
                    flops=flops_one,
                    seconds=best,
                    efficiency=_efficiency(flops_one, best, peak),
                    meta={"width": w, "mode": mode,
                          "variant": best_variant.value, "threads": threads,
                          "seconds_mean": best_stats[0],
                          "seconds_std": best_stats[1]},
                ))
            if total_best > 0.0:
                agg_flops = len(dims) * flops_one
                aggregates.append(BenchRecord(
                    label=f"mttkrp w={w} all-modes",
                    flops=agg_flops,
                    seconds=total_best,
                    efficiency=_efficiency(agg_flops, total_best, peak),
                    meta={"width": w, "threads": threads},
                ))
    return {
        "kind": "mttkrp_sweep",
        "dims": list(dims),
        "widths": list(widths),
        "threads": threads,
        "reps": reps,
        "seed": seed,
        "tpp_gflops": peak,
        "records": [_record_dict(r) for r in records],
        "aggregates": [_record_dict(r) for r in aggregates],
    }


def bench_speedup(
    t: DenseTensor,
    ranks,
    per_rank: int,
    iters: int = 50,
    *,
    threads: int = 1,
    seed: int = 0,
    warmup: bool = True,
) -> dict:
    """Fixed-iteration wall-time comparison: sequential ALS vs the fused
    driver, same starting points, per rank. Speedup = time(ALS) / time(CALS).
    """
    cfg = ConvergenceConfig(tol=0.0, max_iterations=iters)
    rows = []
    for rank in ranks:
        rng = np.random.default_rng(np.random.SeedSequence([seed, rank]))
        models = [
            Model.random(t.dims, rank, rng, id=f"r{rank}-{j}")
            for j in range(per_rank)
        ]
        r_star = rank * per_rank
        if warmup:
            warm_cfg = ConvergenceConfig(tol=0.0, max_iterations=1)
            run(t, models, warm_cfg, mode=ExecutionMode.SEQUENTIAL, threads=threads)
            run(t, models, warm_cfg, mode=ExecutionMode.CALS,
                r_star=r_star, threads=threads)
        tic = time.perf_counter()
        run(t, models, cfg, mode=ExecutionMode.SEQUENTIAL, threads=threads)
        t_als = time.perf_counter() - tic
        tic = time.perf_counter()
        run(t, models, cfg, mode=ExecutionMode.CALS, r_star=r_star, threads=threads)
        t_cals = time.perf_counter() - tic
        rows.append({
            "rank": rank,
            "time_als_s": t_als,
            "time_cals_s": t_cals,
            "speedup": t_als / t_cals,
            "flops": per_rank * iters * t.order * mttkrp_flops(t.dims, rank),
        })
    geomean = math.exp(statistics.fmean(math.log(r["speedup"]) for r in rows))
    return {
        "kind": "speedup",
        "dims": list(t.dims),
        "ranks": list(ranks),
        "per_rank": per_rank,
        "iterations": iters,
        "threads": threads,
        "seed": seed,
        "records": rows,
        "geomean_speedup": geomean,
    }


def gemm_reference(
    p: int,
    *,
    reps: int = 100,
    tpp_model: TppModel,
    threads: int = 1,
    seed: int = 0,
) -> dict:
    """Practical-peak band: mean/median/std efficiency of p x p dgemm."""
    peak = tpp(tpp_model)
    rng = np.random.default_rng(seed)
    a = rng.random((p, p))
    b = rng.random((p, p))
    out = np.empty((p, p))
    flops = 2 * p ** 3
    effs = []
    with threadpool_limits(limits=threads):
        np.matmul(a, b, out=out)  # warm-up
        for _ in range(reps):
            tic = time.perf_counter()
            np.matmul(a, b, out=out)
            effs.append(_efficiency(flops, time.perf_counter() - tic, peak))
    return {
        "p": p,
        "reps": reps,
        "mean": statistics.fmean(effs),
        "median": statistics.median(effs),
        "std": statistics.stdev(effs) if len(effs) > 1 else 0.0,
    }


def bench_efficiency_trace(
    t: DenseTensor,
    ranks,
    per_rank: int,
    iters: int = 50,
    *,
    modes=(ExecutionMode.CALS, ExecutionMode.SEQUENTIAL),
    r_star: int | None = None,
    threads: int = 1,
    tpp_model: TppModel,
    seed: int = 0,
    gemm_reps: int = 100,
) -> dict:
    """Segmented efficiency trace over a fixed-iteration workload.

    One segment per driver iteration (fused mode) or per instance
    (sequential/parallel); progress is cumulative flops normalized by the
    total. Sequential runs process models in ascending rank order; the rank
    transition points are reported. Every mode performs the same flops.
    """
    peak = tpp(tpp_model)
    cfg = ConvergenceConfig(tol=0.0, max_iterations=iters)
    ranks = sorted(ranks)
    models = []
    ss = np.random.SeedSequence(seed)
    children = iter(ss.spawn(len(ranks) * per_rank))
    for rank in ranks:
        for j in range(per_rank):
            rng = np.random.default_rng(next(children))
            models.append(Model.random(t.dims, rank, rng, id=f"r{rank}-{j}"))
    if r_star is None:
        r_star = max(sum(m.rank for m in models), max(m.rank for m in models))

    out_modes = {}
    totals = set()
    for mode in modes:
        trace: list[SegmentTrace] = []
        run(t, models, cfg, mode=mode, r_star=r_star, threads=threads,
            trace=trace)
        total = sum(seg.flops for seg in trace)
        totals.add(total)
        segments = []
        done = 0
        transitions = []
        prev_rank = None
        for seg in trace:
            done += seg.flops
            if mode is not ExecutionMode.CALS:
                rank = seg.meta.get("rank")
                if prev_rank is not None and rank != prev_rank:
                    transitions.append((done - seg.flops) / total)
                prev_rank = rank
            segments.append({
                "label": seg.label,
                "flops": seg.flops,
                "seconds": seg.seconds,
                "efficiency": _efficiency(seg.flops, seg.seconds, peak),
                "progress_fraction": done / total,
                "mode": mode.value,
                "threads": threads,
                **seg.meta,
            })
        out_modes[mode.value] = {
            "total_flops": total,
            "segments": segments,
            "transitions": transitions,
        }
    if len(totals) > 1:
        raise AssertionError(
            f"flop totals differ across execution modes: {sorted(totals)}"
        )
    p = round(math.sqrt(t.size))
    return {
        "kind": "efficiency_trace",
        "dims": list(t.dims),
        "ranks": list(ranks),
        "per_rank": per_rank,
        "iterations": iters,
        "threads": threads,
        "seed": seed,
        "r_star": r_star,
        "tpp_gflops": peak,
        "modes": out_modes,
        "gemm_reference": gemm_reference(
            p, reps=gemm_reps, tpp_model=tpp_model, threads=threads, seed=seed
        ),
    }


def _record_dict(r: BenchRecord) -> dict:
    return {
        "label": r.label,
        "flops": r.flops,
        "seconds": r.seconds,
        "efficiency": r.efficiency,
        **r.meta,
    }


def report_rows(report: dict) -> tuple[list[str], list[dict]]:
    """Flatten a report into plot-ready CSV rows (schema per report kind)."""
    kind = report.get("kind")
    if kind == "mttkrp_sweep":
        cols = ["width", "mode", "variant", "threads", "flops", "seconds",
                "efficiency"]
        rows = [
            {c: r.get(c, "") for c in cols}
            for r in report["records"] + report["aggregates"]
        ]
        for r, src in zip(rows, report["records"] + report["aggregates"]):
            r["variant"] = src.get("variant", "best-of-modes")
        return cols, rows
    if kind == "speedup":
        cols = ["rank", "time_als_s", "time_cals_s", "speedup", "flops"]
        return cols, [{c: r[c] for c in cols} for r in report["records"]]
    if kind == "efficiency_trace":
        cols = ["progress_fraction", "efficiency", "mode", "threads", "flops",
                "seconds", "label"]
        rows = []
        for payload in report["modes"].values():
            for seg in payload["segments"]:
                rows.append({c: seg.get(c, "") for c in cols})
        return cols, rows
    raise ValueError(f"unknown report kind {kind!r}")


def write_report_json(path, report: dict) -> None:
    import json

    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def write_report_csv(path, report: dict) -> None:
    import csv

    cols, rows = report_rows(report)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
