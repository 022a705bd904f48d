"""One ALS iteration's mathematics for a single CP instance.

Factor updates solve the normal equations against the Hadamard product of
the other modes' Gramians; the squared residual comes from the fast error
formula (no reconstruction); optional linear extrapolation (line search)
and non-negativity via warm-started active sets.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import Model, ModelStatus
from .mttkrp import MttkrpVariant, MttkrpWorkspace, mttkrp, select_variant
from .tensor import DenseTensor, gramian, hadamard_fold


@dataclass
class ConvergenceConfig:
    """Stopping rule: fit improvement below ``tol`` or ``max_iterations``.

    ``tol <= 0`` disables the fit-change test entirely, so instances run to
    the iteration cap (used for fixed-iteration benchmark runs).
    """

    tol: float = 1e-6
    max_iterations: int = 1000

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class LineSearchConfig:
    """Linear extrapolation between consecutive iterates.

    ``alpha=None`` selects the iteration-cube-root rule (alpha = i^(1/3) at
    iteration i); a constant alpha must exceed 1.
    """

    enabled: bool = False
    alpha: float | None = None

    def __post_init__(self):
        if self.alpha is not None and self.alpha <= 1.0:
            raise ValueError(f"extrapolation alpha must be > 1, got {self.alpha}")


def alpha_for_iteration(cfg: LineSearchConfig, iteration: int) -> float:
    if cfg.alpha is not None:
        return cfg.alpha
    return float(iteration) ** (1.0 / 3.0)


class NnlsState:
    """Per-mode, per-row active sets (True = pinned to zero), kept across
    iterations to warm start the next search."""

    def __init__(self, dims: Sequence[int], rank: int):
        self.active = [np.zeros((int(d), rank), dtype=bool) for d in dims]


class NonConvergedNnlsWarning(RuntimeWarning):
    """Active-set search hit its iteration cap; best feasible iterate kept."""


def update_factor(m: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Solve ``A @ h = m`` for the factor update ``A = m @ pinv(h)``.

    Uses a Cholesky solve while ``h`` admits one; falls back to an
    eigendecomposition pseudoinverse with relative cutoff 1e-12 * lambda_max.
    """
    m = np.asarray(m, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"h must be square, got {h.shape}")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(h))):
        raise ValueError("non-finite input to factor update")
    try:
        c = cho_factor(h, lower=False, check_finite=False)
        a = cho_solve(c, m.T, check_finite=False).T
        if np.all(np.isfinite(a)):
            return np.asfortranarray(a)
    except np.linalg.LinAlgError:
        pass
    lam, vec = np.linalg.eigh(h)
    cutoff = 1e-12 * max(float(lam[-1]), 0.0)
    inv = np.where(lam > cutoff, np.divide(1.0, lam, where=lam > cutoff), 0.0)
    return np.asfortranarray(m @ ((vec * inv) @ vec.T))


def fast_error(
    t_sqnorm: float,
    factors: Sequence[np.ndarray],
    last_mttkrp: np.ndarray,
    grams: Sequence[np.ndarray],
) -> float:
    """Squared residual without reconstruction.

    ``e = ||T||^2 + sum(hadamard of all N Gramians) - 2 * <A_last, M_last>``
    where ``last_mttkrp`` was computed with the current values of every other
    factor and ``factors[-1]`` is the just-updated last factor. Tiny negative
    results from cancellation are clamped to zero.
    """
    model_sq = float(hadamard_fold(grams).sum())
    inner = float(np.einsum("ir,ir->", factors[-1], last_mttkrp))
    e = t_sqnorm + model_sq - 2.0 * inner
    return e if e > 0.0 else 0.0


def fit_from_error(e: float, t_sqnorm: float) -> float:
    """Fit ``F = 1 - sqrt(e) / ||T||``; 1 is a perfect fit."""
    if t_sqnorm <= 0.0:
        raise ValueError("tensor squared norm must be positive")
    if e < 0.0:
        raise ValueError(f"negative squared error {e}")
    return 1.0 - math.sqrt(e) / math.sqrt(t_sqnorm)


def extrapolate_factors(
    t: DenseTensor,
    prev: Sequence[np.ndarray],
    curr: Sequence[np.ndarray],
    alpha: float,
    ws: MttkrpWorkspace,
    variant_table=None,
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """Candidate point ``prev + alpha * (curr - prev)`` with its Gramians and
    exact error (fresh last-mode MTTKRP; one extra kernel call)."""
    cand = [np.asfortranarray(p + alpha * (c - p)) for p, c in zip(prev, curr)]
    grams = [gramian(f) for f in cand]
    n_last = t.order - 1
    width = cand[0].shape[1]
    variant = select_variant(t.dims, n_last, width, variant_table)
    m_last = mttkrp(t, cand, n_last, variant=variant, ws=ws)
    e = fast_error(t.sqnorm, cand, m_last, grams)
    return cand, grams, e


def line_search_step(
    prev: Model,
    curr: Model,
    cfg: LineSearchConfig,
    t: DenseTensor,
    iteration: int | None = None,
    ws: MttkrpWorkspace | None = None,
) -> Model:
    """Extrapolate from two consecutive iterates; keep whichever errs less.

    Accepted or not, the returned model's error never exceeds ``curr``'s.
    """
    if not cfg.enabled:
        raise ValueError("line search disabled in config")
    if prev.rank != curr.rank or prev.dims != curr.dims:
        raise ValueError("prev/curr models do not conform")
    if iteration is None:
        iteration = max(curr.iterations_done, 2)
    alpha = alpha_for_iteration(cfg, iteration)
    if ws is None:
        ws = MttkrpWorkspace(t.dims, curr.rank)
    cand, _, e_cand = extrapolate_factors(
        t, prev.factors, curr.factors, alpha, ws
    )
    if not (e_cand < curr.error):
        return curr
    return Model(
        id=curr.id,
        rank=curr.rank,
        factors=cand,
        error=e_cand,
        fit=fit_from_error(e_cand, t.sqnorm),
        iterations_done=curr.iterations_done,
        status=curr.status,
        meta=dict(curr.meta),
    )


def nnls_solve_row(
    h: np.ndarray,
    f: np.ndarray,
    active: np.ndarray | None = None,
    max_iter: int | None = None,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Minimize ``x^T h x - 2 f^T x`` subject to ``x >= 0``.

    Lawson-Hanson active-set iteration on the normal equations, warm-started
    from a previous active set. Returns ``(x, active, converged)`` where
    ``active`` marks variables pinned to exactly zero. On hitting the
    iteration cap a NonConvergedNnlsWarning is issued and the best feasible
    iterate is returned.
    """
    r = f.size
    if max_iter is None:
        max_iter = 3 * r
    passive = np.zeros(r, dtype=bool) if active is None else ~np.asarray(active, bool)
    scale = float(np.abs(f).max()) if r else 0.0
    tol = 1e-11 * max(scale, 1e-300)

    def solve_passive(p: np.ndarray) -> np.ndarray:
        z = np.zeros(r)
        if p.any():
            hp = h[np.ix_(p, p)]
            try:
                z[p] = np.linalg.solve(hp, f[p])
            except np.linalg.LinAlgError:
                z[p] = np.linalg.lstsq(hp, f[p], rcond=None)[0]
        return z

    x = np.zeros(r)
    steps = 0
    converged = True
    z = solve_passive(passive)
    while True:
        # Restore feasibility of the passive solve (inner loop).
        while passive.any() and z[passive].min() <= 0.0:
            steps += 1
            if steps > max_iter:
                warnings.warn(
                    "active-set search hit its iteration cap",
                    NonConvergedNnlsWarning,
                    stacklevel=2,
                )
                np.maximum(x, 0.0, out=x)
                x[~passive] = 0.0
                return x, ~passive, False
            bad = passive & (z <= 0.0)
            denom = x[bad] - z[bad]
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios = np.where(denom > 0.0, x[bad] / denom, 0.0)
            alpha = float(ratios.min())
            x += alpha * (z - x)
            drop = passive & (x <= tol)
            passive &= ~drop
            x[~passive] = 0.0
            z = solve_passive(passive)
        x = z.copy()
        # KKT: every zeroed variable must have a non-positive gradient f - h x.
        w = f - h @ x
        w[passive] = -np.inf
        j = int(np.argmax(w))
        if w[j] <= tol:
            break
        steps += 1
        if steps > max_iter:
            warnings.warn(
                "active-set search hit its iteration cap",
                NonConvergedNnlsWarning,
                stacklevel=2,
            )
            converged = False
            break
        passive[j] = True
        z = solve_passive(passive)
    np.maximum(x, 0.0, out=x)
    x[~passive] = 0.0
    return x, ~passive, converged


def nnls_update(
    m: np.ndarray, h: np.ndarray, state: NnlsState, mode: int
) -> np.ndarray:
    """Non-negative factor update: one constrained solve per output row,
    warm-started from the active sets saved at the previous iteration."""
    rows, r = m.shape
    out = np.empty((rows, r), order="F")
    act = state.active[mode]
    for i in range(rows):
        x, a, _ = nnls_solve_row(h, np.ascontiguousarray(m[i, :]), act[i])
        out[i, :] = x
        act[i] = a
    return out


def run_single_als(
    t: DenseTensor,
    start: Model,
    cfg: ConvergenceConfig,
    ls: LineSearchConfig | None = None,
    nonneg: bool = False,
    ws: MttkrpWorkspace | None = None,
    variant_table=None,
) -> Model:
    """Fit one CP instance by alternating least squares.

    Sweeps modes 0..N-1 per iteration (MTTKRP, Hadamard of the other
    Gramians, factor update), evaluates the fast error after the last mode,
    then applies line search / checks convergence. The starting model is not
    mutated.
    """
    if ls is None:
        ls = LineSearchConfig()
    if start.dims != t.dims:
        raise ValueError(f"model dims {start.dims} != tensor dims {t.dims}")
    model = Model(
        id=start.id, rank=start.rank, factors=start.copy_factors(),
        meta=dict(start.meta),
    )
    if ws is None:
        ws = MttkrpWorkspace(t.dims, model.rank)
    factors = model.factors
    grams = [gramian(f) for f in factors]
    nn_state = NnlsState(t.dims, model.rank) if nonneg else None
    n_modes = t.order
    f_prev = -np.inf
    e = np.inf
    fit = -np.inf
    snapshot = None
    status = ModelStatus.ITERATION_CAP
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        m_last = None
        for n in range(n_modes):
            variant = select_variant(t.dims, n, model.rank, variant_table)
            m_n = mttkrp(t, factors, n, variant=variant, ws=ws)
            h_n = hadamard_fold([grams[i] for i in range(n_modes) if i != n])
            if nonneg:
                a_new = nnls_update(m_n, h_n, nn_state, n)
            else:
                a_new = update_factor(m_n, h_n)
            np.copyto(factors[n], a_new)
            grams[n] = gramian(factors[n])
            m_last = m_n
        e = fast_error(t.sqnorm, factors, m_last, grams)
        if ls.enabled and snapshot is not None:
            alpha = alpha_for_iteration(ls, it)
            cand, cand_grams, e_cand = extrapolate_factors(
                t, snapshot, factors, alpha, ws, variant_table
            )
            if e_cand < e:
                for n in range(n_modes):
                    np.copyto(factors[n], cand[n])
                grams = cand_grams
                e = e_cand
        if not np.isfinite(e):
            status = ModelStatus.FAILED
            fit = -np.inf
            break
        fit = fit_from_error(e, t.sqnorm)
        if cfg.tol > 0 and fit - f_prev < cfg.tol:
            status = ModelStatus.CONVERGED
            break
        f_prev = fit
        if ls.enabled:
            snapshot = [f.copy(order="F") for f in factors]
    model.error = float(e)
    model.fit = float(fit)
    model.iterations_done = it
    model.status = status
    return model
