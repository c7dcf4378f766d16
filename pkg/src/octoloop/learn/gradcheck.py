"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-5
ABS_FLOOR = 1e-8


def rel_error(a: float, n: float) -> float:
    denom = max(abs(a), abs(n))
    if denom < ABS_FLOOR:
        return abs(a - n)
    return abs(a - n) / denom


def grad_check(params: dict[str, np.ndarray], loss_and_grad: Callable[[], tuple[float, dict]],
               n: int = 100, seed: int = 0, step: float = FD_STEP) -> float:
    """Max relative error over `n` random coordinates (half drawn where the gradient is nonzero)."""
    _, grads = loss_and_grad()
    grads = {k: v.copy() for k, v in grads.items()}
    rng = np.random.default_rng(seed)
    names = sorted(params)
    sizes = np.array([params[k].size for k in names], dtype=float)
    picks: list[tuple[str, int]] = []
    active = [(k, int(i)) for k in names for i in np.flatnonzero(grads[k])]
    for _ in range(n - n // 2):
        k = names[rng.choice(len(names), p=sizes / sizes.sum())]
        picks.append((k, int(rng.integers(params[k].size))))
    for _ in range(n // 2):
        picks.append(active[int(rng.integers(len(active)))] if active else picks[0])
    worst = 0.0
    for k, i in picks:
        arr = params[k]
        old = arr.flat[i]
        arr.flat[i] = old + step
        lp = loss_and_grad()[0]
        arr.flat[i] = old - step
        lm = loss_and_grad()[0]
        arr.flat[i] = old
        numeric = (lp - lm) / (2 * step)
        worst = max(worst, rel_error(float(grads[k].flat[i]), numeric))
    return worst
