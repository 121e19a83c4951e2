"""Minimum-cost assignment with a deterministic tie-break.

``hungarian`` runs the O(n^3) shortest-augmenting-path Hungarian method, which
also yields optimal dual potentials. Every optimal assignment uses only edges
with zero reduced cost under any optimal dual, so the lexicographically
smallest optimal assignment is the lexicographically smallest perfect matching
of that tight-edge graph, found row by row with alternating-path checks.
"""
from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidCost


def _solve(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Square Hungarian. Returns (row_to_col, u, v) with u_i + v_j <= c_ij, tight on the matching."""
    n = cost.shape[0]
    inf = np.inf
    # 1-based internal indexing; index 0 is the virtual root column.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_owner = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        col_owner[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[col_owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if col_owner[j0] == 0:
                break
        while True:
            j1 = way[j0]
            col_owner[j0] = col_owner[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[col_owner[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _augment(start_row: int, target_col: int, tight: np.ndarray, col_to_row: np.ndarray,
             rows_ok: np.ndarray, cols_ok: np.ndarray) -> Optional[List[Tuple[int, int]]]:
    """Alternating path from a free row to a free column through tight edges (BFS)."""
    n = tight.shape[0]
    parent = {}
    frontier = [start_row]
    seen_cols = np.zeros(n, dtype=bool)
    while frontier:
        nxt = []
        for r in frontier:
            for c in np.flatnonzero(tight[r] & cols_ok & ~seen_cols):
                seen_cols[c] = True
                parent[c] = r
                if c == target_col:
                    path = []
                    while True:
                        r_ = parent[c]
                        path.append((r_, c))
                        if r_ == start_row:
                            return path
                        c = int(np.flatnonzero(col_to_row == r_)[0])
                owner = col_to_row[c]
                if owner >= 0 and rows_ok[owner]:
                    nxt.append(owner)
        frontier = nxt
    return None


def _lexicographic(row_to_col: np.ndarray, tight: np.ndarray) -> np.ndarray:
    n = len(row_to_col)
    row_to_col = row_to_col.copy()
    col_to_row = np.empty(n, dtype=np.int64)
    col_to_row[row_to_col] = np.arange(n)
    rows_ok = np.ones(n, dtype=bool)
    cols_ok = np.ones(n, dtype=bool)
    for r in range(n):
        current = row_to_col[r]
        for c in np.flatnonzero(tight[r] & cols_ok):
            if c >= current:
                break
            # Try r -> c: the displaced row must reach r's old column without using r or c.
            other = col_to_row[c]
            rows_ok[r] = False
            cols_ok[c] = False
            trial_ctr = col_to_row.copy()
            trial_ctr[current] = -1
            path = _augment(other, current, tight, trial_ctr, rows_ok, cols_ok)
            rows_ok[r] = True
            cols_ok[c] = True
            if path is not None:
                for pr, pc in path:
                    row_to_col[pr] = pc
                    col_to_row[pc] = pr
                row_to_col[r] = c
                col_to_row[c] = r
                break
        rows_ok[r] = False
        cols_ok[row_to_col[r]] = False
    return row_to_col


def hungarian(cost) -> np.ndarray:
    """Assign each row a distinct column minimizing total cost.

    Returns ``row_to_col`` (length n_rows); rows left without a column in a
    wide-to-tall mismatch get -1. Among optimal assignments the
    lexicographically smallest ``row_to_col`` sequence is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InvalidCost("cost must be a 2-D matrix")
    if np.isnan(cost).any():
        raise InvalidCost("cost matrix contains NaN")
    if not np.isfinite(cost).all():
        raise InvalidCost("cost matrix contains Inf")
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return np.full(n_rows, -1, dtype=np.int64)
    n = max(n_rows, n_cols)
    square = np.zeros((n, n))
    square[:n_rows, :n_cols] = cost
    row_to_col, u, v = _solve(square)
    reduced = square - u[:, None] - v[None, :]
    tol = 1e-9 * max(1.0, float(np.abs(square).max()))
    tight = reduced <= tol
    tight[np.arange(n), row_to_col] = True
    row_to_col = _lexicographic(row_to_col, tight)[:n_rows]
    row_to_col[row_to_col >= n_cols] = -1
    return row_to_col


def assignment_cost(cost, row_to_col) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[r, c] for r, c in enumerate(row_to_col) if c >= 0))
