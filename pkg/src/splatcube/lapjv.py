"""Dense linear assignment via the Jonker-Volgenant algorithm.

Classic three-phase scheme: column reduction (with reduction transfer),
augmenting row reduction, then shortest augmenting paths for the remaining
free rows.  On geometric cost matrices the row-reduction exchange chains can
thrash, so that phase runs under a work budget; whatever it leaves
unassigned is finished by the (always exact) augmenting-path phase.  Costs
are processed in double precision; the hot loops are JIT-compiled.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import DataError

# Row solves granted to the augmenting-row-reduction phase, per matrix row.
_ARR_BUDGET_PER_ROW = 4


@njit(cache=True)
def _solve(cost):  # pragma: no cover - exercised through lap_solve
    n = cost.shape[0]
    v = np.empty(n)
    rowsol = np.full(n, -1, dtype=np.int64)
    colsol = np.full(n, -1, dtype=np.int64)
    matches = np.zeros(n, dtype=np.int64)
    free = np.empty(n, dtype=np.int64)

    # Column reduction.  Column minima are gathered row-major for locality;
    # columns are then assigned in descending index order, each to the first
    # row attaining its minimum.
    vrow = np.zeros(n, dtype=np.int64)
    for j in range(n):
        v[j] = cost[0, j]
    for i in range(1, n):
        for j in range(n):
            if cost[i, j] < v[j]:
                v[j] = cost[i, j]
                vrow[j] = i
    for j in range(n - 1, -1, -1):
        i = vrow[j]
        matches[i] += 1
        if matches[i] == 1:
            rowsol[i] = j
            colsol[j] = i
        else:
            colsol[j] = -1

    # Reduction transfer from singly-assigned rows.
    numfree = 0
    for i in range(n):
        if matches[i] == 0:
            free[numfree] = i
            numfree += 1
        elif matches[i] == 1:
            j1 = rowsol[i]
            mn = np.inf
            for j in range(n):
                if j != j1:
                    h = cost[i, j] - v[j]
                    if h < mn:
                        mn = h
            v[j1] -= mn

    # Augmenting row reduction, two sweeps under a global work budget.
    budget = _ARR_BUDGET_PER_ROW * n + 64
    for _ in range(2):
        k = 0
        prvnumfree = numfree
        numfree = 0
        while k < prvnumfree and budget > 0:
            budget -= 1
            i = free[k]
            k += 1
            umin = cost[i, 0] - v[0]
            j1 = 0
            usubmin = np.inf
            j2 = -1
            for j in range(1, n):
                h = cost[i, j] - v[j]
                if h < usubmin:
                    if h >= umin:
                        usubmin = h
                        j2 = j
                    else:
                        usubmin = umin
                        umin = h
                        j2 = j1
                        j1 = j
            i0 = colsol[j1]
            if umin < usubmin:
                v[j1] -= usubmin - umin
            elif i0 >= 0:
                j1 = j2
                i0 = colsol[j1]
            rowsol[i] = j1
            colsol[j1] = i
            if i0 >= 0:
                if umin < usubmin:
                    k -= 1
                    free[k] = i0
                else:
                    free[numfree] = i0
                    numfree += 1
        if budget <= 0:
            break

    # Rebuild the free-row list from the column solution (row pointers of
    # rows displaced during row reduction are stale).
    assigned = np.zeros(n, dtype=np.bool_)
    for j in range(n):
        if colsol[j] >= 0:
            assigned[colsol[j]] = True
    numfree = 0
    for i in range(n):
        if not assigned[i]:
            free[numfree] = i
            numfree += 1

    # Shortest augmenting paths for the remaining free rows.
    d = np.empty(n)
    pred = np.empty(n, dtype=np.int64)
    collist = np.empty(n, dtype=np.int64)
    for f in range(numfree):
        freerow = free[f]
        for j in range(n):
            d[j] = cost[freerow, j] - v[j]
            pred[j] = freerow
            collist[j] = j
        low = 0   # columns [0, low) are finalized
        up = 0    # columns [low, up) sit at the current minimum
        last = -1
        mn = 0.0
        endofpath = -1
        found = False
        while not found:
            if up == low:
                last = low - 1
                mn = d[collist[up]]
                up += 1
                for k in range(up, n):
                    j = collist[k]
                    h = d[j]
                    if h <= mn:
                        if h < mn:
                            up = low
                            mn = h
                        collist[k] = collist[up]
                        collist[up] = j
                        up += 1
                for k in range(low, up):
                    j = collist[k]
                    if colsol[j] < 0:
                        endofpath = j
                        found = True
                        break
            if not found:
                j1 = collist[low]
                low += 1
                i = colsol[j1]
                h = cost[i, j1] - v[j1] - mn
                for k in range(up, n):
                    j = collist[k]
                    v2 = cost[i, j] - v[j] - h
                    if v2 < d[j]:
                        pred[j] = i
                        if v2 == mn:
                            if colsol[j] < 0:
                                endofpath = j
                                found = True
                                break
                            collist[k] = collist[up]
                            collist[up] = j
                            up += 1
                        d[j] = v2
        for k in range(last + 1):
            j1 = collist[k]
            v[j1] += d[j1] - mn
        while True:
            i = pred[endofpath]
            colsol[endofpath] = i
            j1 = endofpath
            endofpath = rowsol[i]
            rowsol[i] = j1
            if i == freerow:
                break

    # Rebuild row assignments from colsol (authoritative throughout).
    for j in range(n):
        rowsol[colsol[j]] = j
    return rowsol


def lap_solve(cost):
    """Solve the square linear assignment problem.

    Returns ``(assignment, total_cost)`` where ``assignment[i]`` is the column
    matched to row ``i`` and ``total_cost`` the minimal assignment cost.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DataError(f"cost matrix must be square, got shape {cost.shape}")
    if cost.shape[0] == 0:
        raise DataError("cost matrix must be at least 1x1")
    if not np.isfinite(cost).all():
        raise DataError("cost matrix contains non-finite entries")
    assignment = _solve(np.ascontiguousarray(cost))
    total = float(np.sum(cost[np.arange(cost.shape[0]), assignment]))
    return assignment, total
