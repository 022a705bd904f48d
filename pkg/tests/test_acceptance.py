"""Acceptance suite: every criterion at its stated tolerance.

One test per criterion; each prints a PASS/FAIL line (visible with -s or in
captured output on failure). Criteria 10-12 measure wall time and run last.
"""

import math
from contextlib import contextmanager

import numpy as np
import pytest

from cals.als import ConvergenceConfig, run_single_als
from cals.bench import TppModel, bench_mttkrp_sweep, bench_speedup, tpp
from cals.driver import ExecutionMode, run
from cals.io import build_models, generate_synthetic
from cals.model import Model, ModelStatus
from cals.mttkrp import (
    MttkrpVariant,
    MttkrpWorkspace,
    mttkrp,
    select_variant,
)
from cals.multimatrix import MultiMatrixSet
from cals.tensor import DenseTensor, gramian, khatri_rao

from oracles import (
    mttkrp_oracle,
    nnls_bruteforce,
    reconstruct_oracle,
    residual_sqnorm_oracle,
)


@contextmanager
def criterion(num, name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {num:2d}: {name}")
        raise
    print(f"[PASS] criterion {num:2d}: {name}")


def _valid_variants(order, mode):
    out = [MttkrpVariant.EXPLICIT_KRP_GEMM]
    if mode == 0:
        out.append(MttkrpVariant.FIRST_MODE_GEMM)
    if mode == order - 1:
        out.append(MttkrpVariant.LAST_MODE_GEMM)
    if order == 3 and mode == 1:
        out.append(MttkrpVariant.MIDDLE_MODE_SLICE_GEMM)
    return out


def test_criterion_01_mttkrp_oracle_equivalence():
    with criterion(1, "MTTKRP oracle equivalence, all variants/modes/widths"):
        import time

        tic = time.perf_counter()
        shapes = [(2, 2, 2), (4, 3, 2), (8, 8, 8), (6, 5, 4), (3, 4, 5, 2),
                  (2, 3, 2, 2, 2), (16, 2), (7, 9, 5)]
        assert all(math.prod(s) <= 512 for s in shapes)
        rng = np.random.default_rng(101)
        worst = 0.0
        for dims in shapes:
            arr = rng.standard_normal(dims)
            t = DenseTensor.from_array(arr)
            for width in range(1, 9):
                factors = [
                    np.asfortranarray(rng.standard_normal((d, width)))
                    for d in dims
                ]
                ws = MttkrpWorkspace(dims, width)
                for mode in range(len(dims)):
                    expected = mttkrp_oracle(arr, factors, mode)
                    scale = np.linalg.norm(expected)
                    for variant in _valid_variants(len(dims), mode):
                        got = mttkrp(t, factors, mode, variant=variant, ws=ws)
                        rel = np.linalg.norm(got - expected) / scale
                        worst = max(worst, rel)
        assert worst <= 1e-12, f"max relative error {worst:.3e}"
        assert time.perf_counter() - tic < 10.0


def test_criterion_02_fusion_identity():
    with criterion(2, "KRP fusion identity, 200 random cases, exact"):
        rng = np.random.default_rng(102)
        for _ in range(200):
            ra, rb = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            ia, ib = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            a1 = rng.standard_normal((ia, ra))
            a2 = rng.standard_normal((ia, rb))
            b1 = rng.standard_normal((ib, ra))
            b2 = rng.standard_normal((ib, rb))
            fused = khatri_rao(np.hstack([a1, a2]), np.hstack([b1, b2]))
            blocks = np.hstack([khatri_rao(a1, b1), khatri_rao(a2, b2)])
            assert np.array_equal(fused, blocks)


def test_criterion_03_als_cals_equivalence():
    with criterion(3, "ALS/CALS equivalence, K=5 ranks 1..5, 20 iterations"):
        rng = np.random.default_rng(103)
        dims = (8, 7, 6)
        t = DenseTensor.from_array(rng.standard_normal(dims))
        starts = [Model.random(dims, r, rng, id=f"r{r}") for r in range(1, 6)]
        cfg = ConvergenceConfig(tol=0.0, max_iterations=20)
        outputs = {}
        for mode in (ExecutionMode.SEQUENTIAL, ExecutionMode.PARALLEL,
                     ExecutionMode.CALS):
            out = run(t, starts, cfg, mode=mode, r_star=15, threads=2,
                      deterministic=True)
            assert all(m.iterations_done == 20 for m in out)
            outputs[mode] = {m.id: m for m in out}
        ref = outputs[ExecutionMode.SEQUENTIAL]
        for mode in (ExecutionMode.PARALLEL, ExecutionMode.CALS):
            for id, m in outputs[mode].items():
                for a, b in zip(m.factors, ref[id].factors):
                    rel = np.linalg.norm(a - b) / max(np.linalg.norm(b), 1.0)
                    assert rel <= 1e-10, (mode, id, rel)


def test_criterion_04_fast_error_vs_reconstruction():
    with criterion(4, "fast error vs explicit reconstruction, 100 cases"):
        from cals.als import fast_error

        rng = np.random.default_rng(104)
        for _ in range(100):
            order = int(rng.integers(2, 5))
            dims = tuple(int(d) for d in rng.integers(2, 11, size=order))
            rank = int(rng.integers(1, 5))
            arr = rng.standard_normal(dims)
            t = DenseTensor.from_array(arr)
            factors = [rng.standard_normal((d, rank)) for d in dims]
            grams = [gramian(f) for f in factors]
            m_last = mttkrp_oracle(arr, factors, order - 1)
            e = fast_error(t.sqnorm, factors, m_last, grams)
            truth = residual_sqnorm_oracle(arr, factors)
            assert e == pytest.approx(truth, rel=1e-8)


def test_criterion_05_als_monotonicity():
    with criterion(5, "ALS error non-increasing over 100 randomized runs"):
        rng = np.random.default_rng(105)
        for trial in range(100):
            order = 3 if trial % 2 == 0 else 4
            dims = tuple(int(d) for d in rng.integers(2, 8, size=order))
            rank = int(rng.integers(1, 4))
            arr = rng.standard_normal(dims)
            t = DenseTensor.from_array(arr)
            model = Model.random(dims, rank, rng, id=f"m{trial}")
            slack = 1e-9 * t.sqnorm
            prev = np.inf
            cur = model
            for _ in range(6):
                cur = run_single_als(
                    t, cur, ConvergenceConfig(tol=0.0, max_iterations=1)
                )
                assert cur.error <= prev + slack
                prev = cur.error


def test_criterion_06_nnls():
    with criterion(6, "NNLS nonnegativity, KKT, and 2-variable enumeration"):
        from cals.als import nnls_solve_row

        rng = np.random.default_rng(106)
        for _ in range(200):
            r = int(rng.integers(1, 6))
            h = gramian(rng.standard_normal((r + 2, r))) + 1e-9 * np.eye(r)
            f = rng.standard_normal(r)
            x, active, ok = nnls_solve_row(h, f)
            assert ok
            assert np.all(x >= 0.0)
            assert np.all(x[active] == 0.0)
            scale = max(1.0, float(np.abs(f).max()))
            grad = h @ x - f
            free = ~active
            if free.any():
                assert np.abs(grad[free]).max() <= 1e-8 * scale
            if active.any():
                assert grad[active].min() >= -1e-8 * scale
        # 2-variable cases against exhaustive active-set enumeration, exact.
        for _ in range(100):
            h = gramian(rng.standard_normal((4, 2))) + 1e-6 * np.eye(2)
            f = rng.standard_normal(2)
            x, _, _ = nnls_solve_row(h, f)
            assert np.array_equal(x, nnls_bruteforce(h, f))
        h = np.array([[2.0, 1.0], [1.0, 2.0]])
        f = np.array([1.0, -2.0])
        x, _, _ = nnls_solve_row(h, f)
        assert np.array_equal(x, nnls_bruteforce(h, f))


def test_criterion_07_multimatrix_fuzz():
    with criterion(7, "multi-matrix fuzz, 1000 steps, bitwise preservation"):
        rng = np.random.default_rng(107)
        dims = (6, 5, 4)
        mms = MultiMatrixSet(dims, capacity=24)
        contents: dict[str, list[np.ndarray]] = {}
        counter = 0
        for step in range(1000):
            roll = rng.random()
            if roll < 0.45 or not contents:
                rank = int(rng.integers(1, 6))
                id = f"i{counter}"
                counter += 1
                m = Model.random(dims, rank, rng, id=id)
                if mms.try_insert(m):
                    contents[id] = [f.copy() for f in m.factors]
            elif roll < 0.8:
                victim = list(contents)[int(rng.integers(len(contents)))]
                got = mms.remove(victim)
                want = contents.pop(victim)
                for a, b in zip(got, want):
                    assert np.array_equal(a, b)
            else:
                mms.compress()
                offsets = [(e.offset, e.rank) for e in mms.layout]
                expect = 0
                for off, rank in offsets:
                    assert off == expect
                    expect += rank
            # Invariants after every step.
            layouts = [
                [(e.instance_id, e.offset, e.rank) for e in mm.layout]
                for mm in mms.per_mode
            ]
            assert all(l == layouts[0] for l in layouts)
            assert mms.active_width == sum(e[2] for e in layouts[0])
            spans = sorted((e[1], e[1] + e[2]) for e in layouts[0])
            for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
                assert a1 <= b0  # disjoint in-bounds ranges
            assert all(0 <= s[0] and s[1] <= 24 for s in spans)
            for id, want in contents.items():
                for view, b in zip(mms.views(id), want):
                    assert np.array_equal(view, b)


def test_criterion_08_driver_completeness_liveness():
    with criterion(8, "driver completeness, 400 models, r_star in {25, 4200}"):
        t = generate_synthetic((25, 20, 15), 5, 0.1, seed=108)
        models = build_models(t.dims, list(range(1, 21)), per_rank=20,
                              seed=108)
        assert sum(m.rank for m in models) == 4200
        for r_star in (25, 4200):
            out = run(t, models,
                      ConvergenceConfig(tol=1e-6, max_iterations=3),
                      mode=ExecutionMode.CALS, r_star=r_star)
            assert len(out) == 400
            assert sorted(m.id for m in out) == sorted(m.id for m in models)


def test_criterion_09_convergence_defaults():
    with criterion(9, "20 seeded rank-3 instances reach fit >= 0.999"):
        t = generate_synthetic((50, 40, 30), 3, 0.0, seed=42)
        models = build_models(t.dims, [3], per_rank=20, seed=1234)
        out = run(t, models, ConvergenceConfig(tol=1e-6, max_iterations=1000),
                  mode=ExecutionMode.CALS, r_star=60)
        assert len(out) == 20
        for m in out:
            assert m.status is ModelStatus.CONVERGED
            assert m.fit >= 0.999, (m.id, m.fit)


def test_criterion_10_speedup_per_iteration():
    with criterion(10, "CALS <= ALS per rank and geomean speedup >= 1.3x"):
        t = generate_synthetic((100, 100, 100), 20, 0.1, seed=110)
        report = bench_speedup(t, list(range(1, 21)), per_rank=20, iters=50,
                               threads=1, seed=110)
        for rec in report["records"]:
            assert rec["time_cals_s"] <= rec["time_als_s"], rec
        assert report["geomean_speedup"] >= 1.3, report["geomean_speedup"]


def test_criterion_11_tpp_math():
    with criterion(11, "TPP reference values (112 exact, 998.4)"):
        assert tpp(TppModel(freq_ghz=3.5, nt=1, nd=8, nv=2)) == 112.0
        assert tpp(TppModel(freq_ghz=2.6, nt=12, nd=8, nv=2)) == pytest.approx(
            998.4, rel=1e-12
        )
        with pytest.raises(ValueError):
            TppModel(freq_ghz=3.5, nt=0)


def test_criterion_12_efficiency_trend():
    with criterion(12, "MTTKRP efficiency rises from width 10 to 1000"):
        report = bench_mttkrp_sweep(
            (100, 100, 100), [10, 1000], threads=1, reps=3,
            tpp_model=TppModel(freq_ghz=3.5, nt=1, nd=8, nv=2), seed=112,
        )
        eff = {r["width"]: r["efficiency"] for r in report["aggregates"]}
        assert eff[1000] > eff[10], eff
