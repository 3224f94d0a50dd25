"""Hooke-Jeeves pattern search."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SearchResult:
    x: np.ndarray
    fun: float
    evals: int
    step_ratio: float
    history: list = field(default_factory=list)


def pattern_search(f, x0, scales, max_evals=200, initial_ratio=0.1, min_ratio=1e-3):
    """Minimize ``f`` by exploratory coordinate moves plus pattern moves.

    Step along coordinate ``i`` is ``ratio * scales[i]``. The ratio starts at
    ``initial_ratio``, halves whenever no exploratory move improves, and the
    search ends once it falls below ``min_ratio`` or ``max_evals`` objective
    evaluations have been spent. The returned point is never worse than ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    scales = np.asarray(scales, dtype=float)
    ratio = initial_ratio
    evals = 0
    history = []

    def evaluate(x):
        nonlocal evals
        evals += 1
        val = float(f(x))
        history.append((x.copy(), val))
        return val

    if max_evals <= 0:
        return SearchResult(x0.copy(), float("nan"), 0, ratio, history)

    base = x0.copy()
    f_base = evaluate(base)

    def explore(x, fx):
        x = x.copy()
        for i in range(x.size):
            for sign in (1.0, -1.0):
                if evals >= max_evals:
                    return x, fx
                trial = x.copy()
                trial[i] += sign * ratio * scales[i]
                ft = evaluate(trial)
                if ft < fx:
                    x, fx = trial, ft
                    break
        return x, fx

    while ratio >= min_ratio and evals < max_evals:
        x_new, f_new = explore(base, f_base)
        if f_new < f_base:
            # Keep moving along the successful direction while it pays off.
            while True:
                jump = x_new + (x_new - base)
                base, f_base = x_new, f_new
                if evals >= max_evals:
                    break
                f_jump = evaluate(jump)
                x_try, f_try = explore(jump, f_jump)
                if f_try < f_base:
                    x_new, f_new = x_try, f_try
                else:
                    break
        else:
            ratio *= 0.5
    return SearchResult(base, f_base, evals, ratio, history)
