"""Rectangular linear sum assignment (Hungarian method with potentials).

Shortest augmenting path formulation, O(n^2 m) for an n x m cost matrix with
n <= m. Maximisation is done by negating scores.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class AssignmentError(ValueError):
    pass


def _solve_min(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimum-cost injective row -> column map.

    Returns (col_of_row, u, v) with row/column potentials such that
    ``cost[i, j] - u[i] - v[j] >= 0`` everywhere and ``== 0`` on the matching.
    """
    n, m = cost.shape
    INF = np.inf
    # 1-based arrays, index 0 is the virtual source column
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: row matched to column j
    way = np.zeros(m + 1, dtype=int)
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0, :] - u[i0] - v
            upd = free & (cur < minv)
            minv[upd] = cur[upd]
            way[upd] = j0
            cand = np.where(free, minv, INF)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            if not np.isfinite(delta):
                raise AssignmentError("no augmenting path; cost matrix must be finite")
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=int)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def linear_sum_assignment_min(cost) -> np.ndarray:
    """Column index per row minimising total cost (rows <= columns)."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise AssignmentError("cost must be 2-D")
    n, m = cost.shape
    if n == 0:
        return np.zeros(0, dtype=int)
    if n > m:
        raise AssignmentError(f"more rows ({n}) than columns ({m})")
    if not np.all(np.isfinite(cost)):
        raise AssignmentError("cost matrix must be finite")
    return _solve_min(cost)[0]


@dataclass(frozen=True)
class Assignment:
    columns: tuple[int, ...]  # column index per row
    score: float

    def mapping(self, ids=None) -> dict:
        ids = range(max(self.columns, default=-1) + 1) if ids is None else ids
        ids = list(ids)
        return {k: ids[c] for k, c in enumerate(self.columns)}


def maximize(C, *, tol: float = 1e-9) -> Assignment:
    """Injective row -> column map maximising the summed score.

    Among optimal maps the lexicographically smallest column sequence (row 0
    first) is returned, so ties resolve to the lowest column index.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2:
        raise AssignmentError("score matrix must be 2-D")
    n, m = C.shape
    if n == 0:
        return Assignment((), 0.0)
    if n > m:
        raise AssignmentError(f"more rows ({n}) than columns ({m})")
    if not np.all(np.isfinite(C)):
        raise AssignmentError("score matrix must be finite")
    cols, u, v = _solve_min(-C)
    best = C[np.arange(n), cols].sum()
    scale = tol * max(1.0, np.abs(C).max() * n)
    rows_left = list(range(n))
    cols_left = list(range(m))
    fixed: dict[int, int] = {}
    fixed_score = 0.0
    for r in range(n):
        # only zero reduced-cost columns can appear in an optimal matching
        reduced = -C[r] - u[r] - v
        cand = [j for j in cols_left if reduced[j] <= scale]
        current = int(cols[r])
        for j in sorted(cand):
            if j == current:
                chosen = j
                break
            sub_rows = [i for i in rows_left if i != r]
            sub_cols = [c for c in cols_left if c != j]
            rest = 0.0
            if sub_rows:
                sub = C[np.ix_(sub_rows, sub_cols)]
                sc, _, _ = _solve_min(-sub)
                rest = sub[np.arange(len(sub_rows)), sc].sum()
                trial = dict(zip(sub_rows, (sub_cols[c] for c in sc)))
            else:
                trial = {}
            if fixed_score + C[r, j] + rest >= best - scale:
                chosen = j
                cols = cols.copy()
                for i, c in trial.items():
                    cols[i] = c
                break
        else:
            chosen = current
        cols[r] = chosen
        fixed[r] = chosen
        fixed_score += C[r, chosen]
        rows_left.remove(r)
        cols_left.remove(chosen)
    score = float(C[np.arange(n), cols].sum())
    return Assignment(tuple(int(c) for c in cols), score)


def brute_force_maximize(C) -> Assignment:
    """Exhaustive search over all injections, first-found (lexicographic) optimum."""
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    best, best_cols = -np.inf, ()
    for perm in itertools.permutations(range(m), n):
        s = C[np.arange(n), perm].sum() if n else 0.0
        if s > best:
            best, best_cols = s, perm
    return Assignment(tuple(best_cols), float(best if n else 0.0))
