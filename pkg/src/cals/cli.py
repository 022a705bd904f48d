"""Command-line front end: decompose, gen, and the bench subcommands."""

from __future__ import annotations

import json
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from . import io as cio
from .als import ConvergenceConfig, LineSearchConfig
from .driver import ExecutionMode, run
from .multimatrix import DEFAULT_R_STAR


def _fail(message: str, code: str = "config", exit_code: int = 2):
    click.echo(json.dumps({"error": {"code": code, "message": message}}),
               err=True)
    sys.exit(exit_code)


def _parse_dims(spec: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in spec.split(","))
    except ValueError:
        _fail(f"bad dims {spec!r}; expected comma-separated integers")
    if len(dims) < 2 or any(d < 1 for d in dims):
        _fail(f"bad dims {spec!r}; need >= 2 positive extents")
    return dims


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return threads
    env = os.environ.get("CALS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            _fail(f"CALS_THREADS={env!r} is not an integer")
    return 1


def _tpp_from_options(freq, nd, nv, threads) -> tuple[bench_mod.TppModel, str]:
    # Host peak parameters are unreliable to autodetect; when not supplied we
    # fall back to the reference-preset frequency and label the report so.
    if freq is None:
        return bench_mod.TppModel(3.5, threads, nd, nv), "reference-preset"
    return bench_mod.TppModel(freq, threads, nd, nv), "user"


@click.group()
@click.version_option(package_name="cals")
def main():
    """Fit many CP decompositions of one dense tensor concurrently."""


@main.command()
@click.option("--dims", required=True, help="Extents, e.g. 100,100,100.")
@click.option("--rank", type=int, required=True, help="True rank of the signal.")
@click.option("--noise", type=float, default=0.0, show_default=True,
              help="Noise norm relative to the signal norm.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def gen(dims, rank, noise, seed, out_path):
    """Write a synthetic low-rank tensor to a CALS1 file."""
    d = _parse_dims(dims)
    if rank < 1:
        _fail("--rank must be >= 1")
    t = cio.generate_synthetic(d, rank, noise, seed)
    cio.write_tensor(out_path, t)
    click.echo(f"wrote {out_path}: dims={list(d)} rank={rank} noise={noise}")


@main.command()
@click.option("--tensor", "tensor_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ranks", default="1", show_default=True,
              help='Rank spec: "3", "1..20", or "2,5,7".')
@click.option("--per-rank", type=int, default=1, show_default=True)
@click.option("--mode", type=click.Choice(cio.EXECUTION_MODES),
              default="cals", show_default=True)
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--max-iters", type=int, default=1000, show_default=True)
@click.option("--r-star", type=int, default=DEFAULT_R_STAR, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None,
              help="Kernel/instance threads (default: $CALS_THREADS or 1).")
@click.option("--line-search/--no-line-search", default=False, show_default=True)
@click.option("--ls-alpha", type=float, default=None,
              help="Constant extrapolation factor (> 1); default cube-root rule.")
@click.option("--non-negative", is_flag=True, default=False)
@click.option("--deterministic", is_flag=True, default=False,
              help="Single-threaded kernels and FIFO scheduling.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--factors-out", type=click.Path(file_okay=False), default=None,
              help="Directory for per-model factor matrices (CALS1 files).")
def decompose(tensor_path, ranks, per_rank, mode, tol, max_iters, r_star,
              seed, threads, line_search, ls_alpha, non_negative,
              deterministic, out_path, factors_out):
    """Fit a batch of CP models to a tensor and write a results document."""
    threads = _resolve_threads(threads)
    try:
        rank_list = cio.parse_ranks(ranks)
        config = cio.RunConfig(
            ranks=rank_list, per_rank=per_rank, tol=tol,
            max_iterations=max_iters, r_star=r_star, mode=mode,
            threads=threads, line_search=line_search,
            line_search_alpha=ls_alpha, non_negative=non_negative, seed=seed,
            deterministic=deterministic, tensor_path=str(tensor_path),
        )
        config.validate()
    except ValueError as exc:
        _fail(str(exc))
    try:
        t = cio.read_tensor(tensor_path)
    except cio.TensorFileError as exc:
        _fail(str(exc), code="tensor-file")
    models = cio.build_models(t.dims, rank_list, per_rank, seed)
    cfg = ConvergenceConfig(tol=tol, max_iterations=max_iters)
    ls = LineSearchConfig(enabled=line_search, alpha=ls_alpha)
    tic = time.perf_counter()
    results = run(
        t, models, cfg, mode=ExecutionMode(mode), r_star=r_star, ls=ls,
        nonneg=non_negative, threads=threads, deterministic=deterministic,
    )
    total = time.perf_counter() - tic
    results.sort(key=lambda m: m.id)
    records = []
    for m in results:
        files = cio.save_factors(factors_out, m) if factors_out else None
        records.append(cio.model_record(m, files))
    doc = {
        "schema": "cals-results-v1",
        "config": config.to_dict(),
        "tensor": {"dims": list(t.dims), "sqnorm": t.sqnorm},
        "models": records,
        "total_seconds": total,
    }
    with open(out_path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    fits = [m.fit for m in results]
    click.echo(
        f"{len(results)} models in {total:.2f} s; "
        f"best fit {max(fits):.6f}, worst {min(fits):.6f}; wrote {out_path}"
    )


@main.group()
def bench():
    """Performance experiments; reports are written as JSON and CSV."""


def _bench_outputs(report, out_path, csv_path):
    if out_path:
        bench_mod.write_report_json(out_path, report)
        click.echo(f"wrote {out_path}")
    if csv_path:
        bench_mod.write_report_csv(csv_path, report)
        click.echo(f"wrote {csv_path}")


@bench.command("mttkrp")
@click.option("--dims", default="100,100,100", show_default=True)
@click.option("--widths", default="1,2,5,10,20,50,100,200,500,1000",
              show_default=True, help="Comma-separated widths to sweep.")
@click.option("--threads", type=int, default=None)
@click.option("--reps", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tpp-freq", type=float, default=None,
              help="Host frequency in GHz (default: reference preset 3.5).")
@click.option("--tpp-nd", type=int, default=8, show_default=True)
@click.option("--tpp-nv", type=int, default=2, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def bench_mttkrp(dims, widths, threads, reps, seed, tpp_freq, tpp_nd, tpp_nv,
                 out_path, csv_path):
    """Best-variant MTTKRP efficiency for increasing widths."""
    d = _parse_dims(dims)
    threads = _resolve_threads(threads)
    try:
        width_list = [int(w) for w in widths.split(",")]
        tpp_model, source = _tpp_from_options(tpp_freq, tpp_nd, tpp_nv, threads)
        report = bench_mod.bench_mttkrp_sweep(
            d, width_list, threads=threads, reps=reps, tpp_model=tpp_model,
            seed=seed,
        )
    except ValueError as exc:
        _fail(str(exc))
    report["tpp_source"] = source
    for rec in report["aggregates"]:
        click.echo(
            f"width {rec['width']:5d}: {rec['efficiency'] * 100:6.2f} % "
            f"of TPP ({report['tpp_gflops']:.1f} GF/s, {source})"
        )
    _bench_outputs(report, out_path, csv_path)


@bench.command("speedup")
@click.option("--dims", default="100,100,100", show_default=True)
@click.option("--ranks", default="1..20", show_default=True)
@click.option("--per-rank", type=int, default=20, show_default=True)
@click.option("--iters", type=int, default=50, show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def bench_speedup(dims, ranks, per_rank, iters, threads, seed, out_path,
                  csv_path):
    """Fixed-iteration speedup of the fused driver over sequential ALS."""
    d = _parse_dims(dims)
    threads = _resolve_threads(threads)
    try:
        rank_list = cio.parse_ranks(ranks)
        t = cio.generate_synthetic(d, max(rank_list), 0.1, seed)
        report = bench_mod.bench_speedup(
            t, rank_list, per_rank, iters, threads=threads, seed=seed,
        )
    except ValueError as exc:
        _fail(str(exc))
    for rec in report["records"]:
        click.echo(
            f"rank {rec['rank']:3d}: als {rec['time_als_s']:7.3f} s   "
            f"cals {rec['time_cals_s']:7.3f} s   {rec['speedup']:5.2f} x"
        )
    click.echo(f"geometric-mean speedup {report['geomean_speedup']:.2f} x")
    _bench_outputs(report, out_path, csv_path)


@bench.command("efficiency")
@click.option("--dims", default="100,100,100", show_default=True)
@click.option("--ranks", default="1..20", show_default=True)
@click.option("--per-rank", type=int, default=20, show_default=True)
@click.option("--iters", type=int, default=50, show_default=True)
@click.option("--r-star", type=int, default=DEFAULT_R_STAR, show_default=True)
@click.option("--modes", default="cals,sequential", show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--gemm-reps", type=int, default=100, show_default=True)
@click.option("--tpp-freq", type=float, default=None)
@click.option("--tpp-nd", type=int, default=8, show_default=True)
@click.option("--tpp-nv", type=int, default=2, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def bench_efficiency(dims, ranks, per_rank, iters, r_star, modes, threads,
                     seed, gemm_reps, tpp_freq, tpp_nd, tpp_nv, out_path,
                     csv_path):
    """Segmented efficiency trace over a fixed-iteration model workload."""
    d = _parse_dims(dims)
    threads = _resolve_threads(threads)
    try:
        rank_list = cio.parse_ranks(ranks)
        mode_list = [ExecutionMode(m.strip()) for m in modes.split(",")]
        tpp_model, source = _tpp_from_options(tpp_freq, tpp_nd, tpp_nv, threads)
        t = cio.generate_synthetic(d, max(rank_list), 0.1, seed)
        report = bench_mod.bench_efficiency_trace(
            t, rank_list, per_rank, iters, modes=mode_list, r_star=r_star,
            threads=threads, tpp_model=tpp_model, seed=seed,
            gemm_reps=gemm_reps,
        )
    except ValueError as exc:
        _fail(str(exc))
    report["tpp_source"] = source
    for mode_name, payload in report["modes"].items():
        effs = [s["efficiency"] for s in payload["segments"]]
        secs = sum(s["seconds"] for s in payload["segments"])
        click.echo(
            f"{mode_name:10s}: {len(effs)} segments, {secs:7.2f} s, "
            f"mean efficiency {100 * sum(effs) / len(effs):6.2f} %"
        )
    ref = report["gemm_reference"]
    click.echo(
        f"dgemm p={ref['p']}: mean {100 * ref['mean']:.2f} % "
        f"median {100 * ref['median']:.2f} % (+/- {100 * ref['std']:.2f})"
    )
    _bench_outputs(report, out_path, csv_path)


if __name__ == "__main__":
    main()
