"""Exact rectangular linear sum assignment.

Hungarian method with row/column potentials and shortest augmenting paths
(the O(n^2 m) Kuhn-Munkres variant). The inner column scan is vectorised with
numpy; the outer loops are plain Python, which is plenty for matrices of a few
hundred rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    rows: np.ndarray
    cols: np.ndarray
    objective: float

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def __len__(self) -> int:
        return len(self.rows)


def _check(values) -> np.ndarray:
    a = np.asarray(values)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise AssignmentError(f"cost matrix must be 2-D and non-empty, got shape {a.shape}")
    if not np.isfinite(a).all():
        bad = np.argwhere(~np.isfinite(a))[:5].tolist()
        raise AssignmentError(f"cost matrix has non-finite entries, e.g. at {bad}")
    return a


def _hungarian(cost: np.ndarray) -> np.ndarray:
    """Column index assigned to each row; requires rows <= cols."""
    n, m = cost.shape
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=np.intp)  # match[j] = row holding column j, 0 = free
    way = np.zeros(m + 1, dtype=np.intp)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))  # first minimum: deterministic tie-break
            delta = cand[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.intp)
    cols = np.flatnonzero(match[1:]) + 1
    row_to_col[match[cols] - 1] = cols - 1
    return row_to_col


def solve_min(costs) -> Assignment:
    """Minimum-cost one-to-one pairing of min(L, K) rows and columns."""
    a = _check(costs)
    work = a.astype(np.float64)
    transposed = work.shape[0] > work.shape[1]
    if transposed:
        work = work.T
    col_of_row = _hungarian(work)
    rows = np.arange(work.shape[0])
    cols = col_of_row
    if transposed:
        rows, cols = cols, rows
        order = np.argsort(rows)
        rows, cols = rows[order], cols[order]
    objective = a[rows, cols].sum()
    return Assignment(rows, cols, objective.item())


def solve_max(scores) -> Assignment:
    """Maximum-score pairing, solved as a minimisation of the negated matrix."""
    a = _check(scores)
    res = solve_min(-a)
    return Assignment(res.rows, res.cols, a[res.rows, res.cols].sum().item())
