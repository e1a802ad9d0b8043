"""One-to-one matching: optimal (Hungarian) and greedy maximum-similarity."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


@dataclass
class Matching:
    pairs: List[Tuple[int, int]]
    unmatched_rows: List[int] = field(default_factory=list)
    unmatched_cols: List[int] = field(default_factory=list)

    def total(self, matrix) -> float:
        """Sum of ``matrix`` entries over the matched pairs, in row order."""
        m = np.asarray(matrix, dtype=float)
        s = 0.0
        for r, c in self.pairs:
            s += m[r, c]
        return s

    def as_dict(self) -> dict:
        return dict(self.pairs)


def _as_matrix(c) -> np.ndarray:
    m = np.array(c, dtype=float)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"matrix must be 2-D with at least one row and column, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def _finish(pairs, n_rows, n_cols) -> Matching:
    pairs = sorted(pairs)
    used_r = {r for r, _ in pairs}
    used_c = {c for _, c in pairs}
    return Matching(
        pairs=pairs,
        unmatched_rows=[r for r in range(n_rows) if r not in used_r],
        unmatched_cols=[c for c in range(n_cols) if c not in used_c],
    )


def _potentials(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method, O(n^3), square input.

    Returns ``(row_to_col, u, v)`` with ``cost[i, j] - u[i] - v[j] >= 0`` everywhere
    and zero along the returned assignment.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) assigned to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _lexicographic_optimum(tight: np.ndarray, row_to_col: np.ndarray) -> np.ndarray:
    """Among perfect matchings inside the tight-edge graph, pick the lexicographically smallest.

    Row by row, try to move the row onto a smaller tight column by rerouting the
    later rows along an alternating path; earlier rows stay fixed.
    """
    n = tight.shape[0]
    r2c = row_to_col.copy()
    c2r = np.empty(n, dtype=int)
    c2r[r2c] = np.arange(n)

    def reroute(row, target, fixed_cols, seen):
        # Find a tight path that lets `row` give up its column and end on `target`.
        for col in np.flatnonzero(tight[row]):
            if fixed_cols[col] or seen[col]:
                continue
            seen[col] = True
            if col == target:
                return [(row, col)]
            rest = reroute(c2r[col], target, fixed_cols, seen)
            if rest is not None:
                return [(row, col)] + rest
        return None

    fixed_cols = np.zeros(n, dtype=bool)
    for i in range(n):
        current = r2c[i]
        for j in np.flatnonzero(tight[i]):
            if j >= current:
                break
            if fixed_cols[j]:
                continue
            # i takes j; its former holder must reach i's old column.
            holder = c2r[j]
            seen = fixed_cols.copy()
            seen[j] = True
            path = reroute(holder, current, fixed_cols | seen, np.zeros(n, dtype=bool))
            if path is None:
                continue
            r2c[i] = j
            c2r[j] = i
            for r, c in path:
                r2c[r] = c
                c2r[c] = r
            break
        fixed_cols[r2c[i]] = True
    return r2c


def hungarian_min(c) -> Matching:
    """Minimum-cost complete matching of ``min(rows, cols)`` pairs.

    Ties between optimal assignments resolve to the lexicographically smallest
    pair list. Rectangular inputs are zero-padded to square; rows or columns
    landing on padding are reported unmatched.
    """
    m = _as_matrix(c)
    n_rows, n_cols = m.shape
    n = max(n_rows, n_cols)
    sq = np.zeros((n, n))
    sq[:n_rows, :n_cols] = m
    r2c, u, v = _potentials(sq)
    reduced = sq - u[:, None] - v[None, :]
    tol = 1e-9 * max(1.0, float(np.abs(sq).max()))
    tight = reduced <= tol
    tight[np.arange(n), r2c] = True
    r2c = _lexicographic_optimum(tight, r2c)
    pairs = [(i, int(r2c[i])) for i in range(n_rows) if r2c[i] < n_cols]
    return _finish(pairs, n_rows, n_cols)


def greedy_max(sim, allowed: Optional[np.ndarray] = None) -> Matching:
    """Repeatedly take the globally largest remaining entry and retire its row and column.

    Ties go to the smallest ``(row, col)``. With ``allowed`` (boolean, same shape),
    disallowed pairs are never taken, so fewer than ``min(rows, cols)`` pairs may result.
    """
    m = _as_matrix(sim)
    n_rows, n_cols = m.shape
    ok = np.ones(m.shape, dtype=bool) if allowed is None else np.array(allowed, dtype=bool)
    if ok.shape != m.shape:
        raise ValueError("allowed mask must match the similarity matrix shape")
    # Row-major flattening + stable sort on -value gives the (row, col) tie rule.
    order = np.argsort(-m, axis=None, kind="stable")
    rows_used = np.zeros(n_rows, dtype=bool)
    cols_used = np.zeros(n_cols, dtype=bool)
    pairs = []
    limit = min(n_rows, n_cols)
    for flat in order:
        r, col = divmod(int(flat), n_cols)
        if rows_used[r] or cols_used[col] or not ok[r, col]:
            continue
        pairs.append((r, col))
        rows_used[r] = True
        cols_used[col] = True
        if len(pairs) == limit:
            break
    return _finish(pairs, n_rows, n_cols)
