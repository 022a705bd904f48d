"""Brute-force reference implementations the library is checked against.

Everything here is deliberately independent of the package internals:
unfoldings are materialized with moveaxis+reshape, Khatri-Rao products with
per-column np.kron, reconstructions with explicit outer-product sums.
"""

import numpy as np


def unfold_oracle(arr: np.ndarray, mode: int) -> np.ndarray:
    """Materialized mode-n unfolding, remaining indices lower-modes-fastest."""
    return np.reshape(
        np.moveaxis(arr, mode, 0), (arr.shape[mode], -1), order="F"
    )


def krp_oracle(mats) -> np.ndarray:
    """Khatri-Rao product via per-column np.kron, left to right."""
    cols = mats[0].shape[1]
    out = []
    for j in range(cols):
        col = mats[0][:, j]
        for m in mats[1:]:
            col = np.kron(col, m[:, j])
        out.append(col)
    return np.column_stack(out)


def mttkrp_oracle(arr: np.ndarray, factors, mode: int) -> np.ndarray:
    """Unfolding times the KRP of the other factors (descending mode order)."""
    others = [factors[i] for i in range(arr.ndim - 1, -1, -1) if i != mode]
    return unfold_oracle(arr, mode) @ krp_oracle(others)


def reconstruct_oracle(factors) -> np.ndarray:
    """Dense model as an explicit sum of outer products."""
    dims = tuple(f.shape[0] for f in factors)
    out = np.zeros(dims)
    for j in range(factors[0].shape[1]):
        term = factors[0][:, j]
        for f in factors[1:]:
            term = np.multiply.outer(term, f[:, j])
        out += term
    return out


def residual_sqnorm_oracle(arr: np.ndarray, factors) -> float:
    d = arr - reconstruct_oracle(factors)
    return float(np.sum(d * d))


def nnls_bruteforce(h: np.ndarray, f: np.ndarray, tol: float = 1e-10):
    """Enumerate every active set; return the KKT-satisfying solution.

    Only usable for tiny systems (2**R subsets).
    """
    r = f.size
    best = None
    for mask in range(2 ** r):
        passive = np.array([(mask >> i) & 1 == 1 for i in range(r)])
        x = np.zeros(r)
        if passive.any():
            try:
                x[passive] = np.linalg.solve(
                    h[np.ix_(passive, passive)], f[passive]
                )
            except np.linalg.LinAlgError:
                continue
        if x.min() < 0:
            continue
        grad = h @ x - f
        scale = max(1.0, float(np.abs(f).max()))
        if np.abs(grad[passive]).max(initial=0.0) > tol * scale:
            continue
        if grad[~passive].min(initial=0.0) < -tol * scale:
            continue
        obj = float(x @ h @ x - 2.0 * f @ x)
        if best is None or obj < best[1]:
            best = (x, obj)
    assert best is not None, "no KKT point found by enumeration"
    return best[0]
