"""Dense two-phase primal simplex for small equality-form LPs.

Solves ``min c @ x  s.t.  A x = b, x >= 0`` keeping the full tableau
``B^{-1} [A | b]`` and recomputing reduced costs from the basis each
iteration.  Pivoting uses Dantzig's most-negative rule for speed and falls
back to Bland's smallest-index rule (entering and leaving) whenever the
objective stalls, which breaks cycles and guarantees termination.  Phase 1
establishes feasibility through artificial variables; redundant rows whose
artificials cannot be pivoted out are dropped.

``SimplexState`` snapshots a solved tableau so later calls with different
costs on the same constraints can warm start from the previous basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, NumericError, UnboundedError

__all__ = ["SimplexResult", "SimplexState", "linprog_simplex", "resolve_with_costs"]

_STALL_LIMIT = 12  # degenerate pivots tolerated before switching to Bland


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int


@dataclass
class SimplexState:
    """Feasible tableau snapshot: ``tab = B^{-1}[A | I | b]`` plus the basis."""

    tab: np.ndarray
    basis: np.ndarray
    n_vars: int

    def solution(self) -> np.ndarray:
        x = np.zeros(self.n_vars)
        rows = self.basis < self.n_vars
        x[self.basis[rows]] = self.tab[rows, -1]
        return np.clip(x, 0.0, None)


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] = tab[row] / tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    basis[row] = col


def _iterate(tab: np.ndarray, basis: np.ndarray, cost: np.ndarray,
             n_cols: int, tol: float, max_iter: int) -> int:
    """Pivot to optimality over columns [0, n_cols); return iteration count."""
    iters = 0
    stall = 0
    bland = False
    while True:
        cb = cost[basis]
        reduced = cost[:n_cols] - cb @ tab[:, :n_cols]
        negative = np.nonzero(reduced < -tol)[0]
        if negative.size == 0:
            return iters
        if bland:
            entering = int(negative[0])
        else:
            entering = int(negative[np.argmin(reduced[negative])])
        col = tab[:, entering]
        eligible = col > tol
        if not np.any(eligible):
            raise UnboundedError("objective is unbounded below")
        ratios = np.where(eligible, tab[:, -1] / np.where(eligible, col, 1.0), np.inf)
        best = float(np.min(ratios))
        ties = np.nonzero(ratios <= best + 1e-15)[0]
        leave_row = int(ties[np.argmin(basis[ties])])
        _pivot(tab, basis, leave_row, entering)
        iters += 1
        if best <= tol:
            stall += 1
            if stall >= _STALL_LIMIT:
                bland = True  # anti-cycling: Bland's rule until real progress
        else:
            stall = 0
            bland = False
        if iters > max_iter:
            raise NumericError(f"simplex exceeded {max_iter} iterations")


def _phase1(a: np.ndarray, b: np.ndarray, tol: float, max_iter: int
            ) -> tuple[np.ndarray, np.ndarray, int]:
    m, n = a.shape
    flip = b < 0
    a = np.where(flip[:, None], -a, a)
    b = np.where(flip, -b, b)
    tab = np.hstack([a, np.eye(m), b[:, None]])
    basis = np.arange(n, n + m)
    cost1 = np.concatenate([np.zeros(n), np.ones(m), [0.0]])
    scale = max(1.0, float(np.max(np.abs(b))) if m else 1.0)
    iters = _iterate(tab, basis, cost1, n + m, tol, max_iter)
    value = float(cost1[basis] @ tab[:, -1])
    if value > tol * scale:
        raise InfeasibleError(f"phase-1 optimum {value:.3e} > 0: no feasible point")
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= n:
            nz = np.nonzero(np.abs(tab[r, :n]) > tol)[0]
            if nz.size:
                _pivot(tab, basis, r, int(nz[0]))
            else:
                keep[r] = False
    return tab[keep], basis[keep], iters


def linprog_simplex(c, a_eq, b_eq, tol: float = 1e-9,
                    max_iter: int | None = None,
                    state: SimplexState | None = None
                    ) -> tuple[SimplexResult, SimplexState]:
    """Exact simplex optimum of an equality-form LP.

    Passing the ``state`` returned by a previous call on the same
    constraints skips phase 1 and re-optimizes from the cached basis.
    Raises :class:`InfeasibleError` when phase 1 cannot reach zero and
    :class:`UnboundedError` for unbounded objectives.
    """
    c = np.asarray(c, dtype=float).ravel()
    a = np.asarray(a_eq, dtype=float)
    b = np.asarray(b_eq, dtype=float).ravel()
    m, n = a.shape
    if c.size != n or b.size != m:
        raise ValueError("inconsistent LP dimensions")
    if max_iter is None:
        max_iter = 200 * (m + n + 10)

    if state is None:
        tab, basis, it1 = _phase1(a, b, tol, max_iter)
    else:
        tab, basis, it1 = state.tab.copy(), state.basis.copy(), 0

    cost2 = np.concatenate([c, np.zeros(tab.shape[1] - n)])
    it2 = _iterate(tab, basis, cost2, n, tol, max_iter)
    new_state = SimplexState(tab=tab, basis=basis, n_vars=n)
    x = new_state.solution()
    return SimplexResult(x=x, fun=float(c @ x), iterations=it1 + it2), new_state


def resolve_with_costs(state: SimplexState, c, tol: float = 1e-9,
                       max_iter: int = 100000) -> tuple[SimplexResult, SimplexState]:
    """Warm re-solve with new costs on the constraints captured in ``state``."""
    c = np.asarray(c, dtype=float).ravel()
    if c.size != state.n_vars:
        raise ValueError("cost vector does not match the cached LP")
    return linprog_simplex(c, np.zeros((0, state.n_vars)), np.zeros(0),
                           tol=tol, max_iter=max_iter, state=state)
