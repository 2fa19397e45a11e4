"""Primal active-set solver for small dense convex QPs.

    minimize    0.5 x'Hx + c'x
    subject to  A x = b,   lo <= x <= hi

Only bound constraints enter the working set; equalities are always active.
Each working-set subproblem is solved through its KKT system with a dense
least-squares factorization, which tolerates redundant equality rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space


class QPError(RuntimeError):
    pass


class QPIterationError(QPError):
    def __init__(self, msg: str, x: np.ndarray, kkt_residual: float):
        super().__init__(f"{msg} (KKT residual {kkt_residual:.3e})")
        self.x = x
        self.kkt_residual = kkt_residual


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    y: np.ndarray          # equality multipliers
    z: np.ndarray          # bound multipliers (>0 at lower, <0 at upper)
    at_lower: np.ndarray
    at_upper: np.ndarray
    iterations: int
    kkt_residual: float
    non_unique: bool


def _kkt_solve(H: np.ndarray, g: np.ndarray, A: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Step p with p[~free] = 0 minimizing 0.5 p'Hp + g'p on {A p = 0}."""
    n = H.shape[0]
    F = np.flatnonzero(free)
    p = np.zeros(n)
    if F.size == 0:
        return p
    HF = H[np.ix_(F, F)]
    AF = A[:, F]
    m = AF.shape[0]
    K = np.block([[HF, AF.T], [AF, np.zeros((m, m))]])
    rhs = np.concatenate([-g[F], np.zeros(m)])
    sol = np.linalg.lstsq(K, rhs, rcond=1e-13)[0]
    p[F] = sol[:F.size]
    return p


def _multipliers(g: np.ndarray, A: np.ndarray, free: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    F = np.flatnonzero(free)
    if A.shape[0] == 0:
        y = np.zeros(0)
    elif F.size:
        y = np.linalg.lstsq(A[:, F].T, g[F], rcond=1e-13)[0]
    else:
        y = np.linalg.lstsq(A.T, g, rcond=1e-13)[0]
    z = g - A.T @ y
    z[free] = 0.0
    return y, z


def kkt_residual(H, c, A, b, lo, hi, x, y, z, at_lower, at_upper) -> float:
    """Max violation of stationarity, primal feasibility and dual sign."""
    stat = H @ x + c - A.T @ y - z
    prim = A @ x - b if A.shape[0] else np.zeros(0)
    bnd = np.concatenate([np.maximum(lo - x, 0), np.maximum(x - hi, 0)])
    dual = np.concatenate([np.minimum(z[at_lower], 0), np.maximum(z[at_upper], 0)])
    comp = z[~(at_lower | at_upper)]
    parts = [stat, prim, bnd, dual, comp]
    return float(max((np.abs(p).max() if p.size else 0.0) for p in parts))


def solve_box_qp(H, c, A, b, lo, hi, x0=None, tol: float = 1e-8, reg: float = 1e-10,
                 max_iter: int | None = None) -> QPResult:
    H = np.asarray(H, float)
    c = np.asarray(c, float)
    n = c.size
    A = np.asarray(A, float).reshape(-1, n)
    b = np.asarray(b, float).reshape(-1)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if np.any(lo > hi):
        raise QPError("inconsistent bounds")
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise QPError("starting point violates bounds")
    if A.shape[0] and np.abs(A @ x - b).max() > tol * max(1.0, np.abs(b).max()):
        raise QPError("starting point violates equality constraints")
    x = np.clip(x, lo, hi)
    max_iter = max_iter or 50 * (n + 10)

    Hr = H + 2.0 * reg * np.eye(n)
    scale = max(1.0, np.abs(H).max() if n else 1.0, np.abs(c).max() if n else 1.0)
    at_lower = (x <= lo) & np.isfinite(lo)
    at_upper = (x >= hi) & np.isfinite(hi) & ~at_lower
    fixed = lo == hi

    it = 0
    while True:
        it += 1
        if it > max_iter:
            y, z = _multipliers(H @ x + c, A, ~(at_lower | at_upper))
            raise QPIterationError("active-set iteration limit exceeded", x,
                                   kkt_residual(H, c, A, b, lo, hi, x, y, z, at_lower, at_upper))
        free = ~(at_lower | at_upper)
        g = Hr @ x + c
        p = _kkt_solve(Hr, g, A, free)
        xs = max(1.0, np.abs(x).max())
        if np.abs(p).max() <= 1e-9 * xs:
            y, z = _multipliers(g, A, free)
            viol = np.where(at_lower, -z, 0.0) + np.where(at_upper, z, 0.0)
            viol[fixed] = 0.0
            j = int(np.argmax(viol)) if n else 0
            if n == 0 or viol[j] <= tol * scale:
                break
            at_lower[j] = at_upper[j] = False
            continue
        # longest feasible step along p, at most 1
        alpha, block, block_upper = 1.0, -1, False
        for j in np.flatnonzero(free):
            if p[j] < 0 and np.isfinite(lo[j]):
                t = (lo[j] - x[j]) / p[j]
                if t < alpha:
                    alpha, block, block_upper = t, j, False
            elif p[j] > 0 and np.isfinite(hi[j]):
                t = (hi[j] - x[j]) / p[j]
                if t < alpha:
                    alpha, block, block_upper = t, j, True
        x = x + max(alpha, 0.0) * p
        if block >= 0:
            if block_upper:
                x[block] = hi[block]
                at_upper[block] = True
            else:
                x[block] = lo[block]
                at_lower[block] = True

    # remove the regularization bias on the final face with a minimum-norm correction
    free = ~(at_lower | at_upper)
    g = H @ x + c
    p = _kkt_solve(H, g, A, free)
    if p.any():
        cand = x + p
        if np.all(cand >= lo - 1e-9 * xs) and np.all(cand <= hi + 1e-9 * xs):
            x = np.clip(cand, lo, hi)
    if A.shape[0]:
        # project out equality drift accumulated over the iterations
        F = np.flatnonzero(free)
        if F.size:
            r = A @ x - b
            dx = np.linalg.lstsq(A[:, F], r, rcond=1e-13)[0]
            cand = x.copy()
            cand[F] -= dx
            if np.all(cand >= lo - 1e-9 * xs) and np.all(cand <= hi + 1e-9 * xs):
                x = np.clip(cand, lo, hi)
    g = H @ x + c
    y, z = _multipliers(g, A, free)
    res = kkt_residual(H, c, A, b, lo, hi, x, y, z, at_lower, at_upper)

    # bounds held only with a zero multiplier do not pin the solution
    loose = free | ((at_lower | at_upper) & (np.abs(z) <= tol * scale) & ~fixed)
    F = np.flatnonzero(loose)
    non_unique = False
    if F.size:
        Z = null_space(A[:, F]) if A.shape[0] else np.eye(F.size)
        if Z.size:
            red = Z.T @ H[np.ix_(F, F)] @ Z
            non_unique = bool(np.linalg.eigvalsh((red + red.T) / 2).min() <= 1e-9 * scale)
    obj = float(0.5 * x @ H @ x + c @ x)
    return QPResult(x, obj, y, z, at_lower.copy(), at_upper.copy(), it, res, non_unique)
