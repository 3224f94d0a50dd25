"""Exact linear assignment solvers.

Two interchangeable routes are provided: a shortest-augmenting-path Hungarian
method written here, and scipy's ``linear_sum_assignment`` (a C implementation
of the same family of algorithms), which is the default for speed inside
training loops.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInputError

SOLVERS = ("scipy", "hungarian")


def hungarian(cost):
    """Solve min-cost perfect assignment on a square cost matrix.

    Returns ``cols`` such that row ``i`` is matched to column ``cols[i]``.
    O(n^3) with the inner relaxation vectorized over columns.
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise InvalidInputError(f"square cost matrix required, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InvalidInputError("cost matrix has non-finite entries")
    # 1-based bookkeeping; column 0 is the virtual source.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
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
    cols = np.empty(n, dtype=np.intp)
    cols[p[1:] - 1] = np.arange(n)
    return cols


def linear_assignment(cost, solver="scipy"):
    """Return the optimal column for each row of a square cost matrix."""
    cost = np.asarray(cost, dtype=float)
    if solver == "hungarian":
        return hungarian(cost)
    if solver == "scipy":
        if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
            raise InvalidInputError(f"square cost matrix required, got {cost.shape}")
        rows, cols = linear_sum_assignment(cost)
        out = np.empty(cost.shape[0], dtype=np.intp)
        out[rows] = cols
        return out
    raise InvalidInputError(f"unknown assignment solver {solver!r}; expected one of {SOLVERS}")
