"""
Projected limited-memory BFGS with Armijo backtracking on a box.

Variables sitting on a bound with the gradient pushing outward are frozen for
the step; the two-loop recursion acts on the remaining free set and the trial
point is projected back onto the box. Only steps satisfying the Armijo
condition are accepted, so the objective history is monotone.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class LineSearchError(RuntimeError):
    """Backtracking exhausted without sufficient decrease."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    elapsed: float = 0.0
    line_search_failure: Optional[dict] = None


def projected_gradient(x, g, lo, hi) -> np.ndarray:
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def minimize_box(fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]], x0,
                 lower=None, upper=None, memory: int = 10, max_iters: int = 200,
                 gtol: float = 1e-6, ftol: float = 0.0, c1: float = 1e-4, shrink: float = 0.5,
                 max_backtracks: int = 30, initial_step: float = 0.1,
                 raise_on_failure: bool = False,
                 callback: Optional[Callable[[int, np.ndarray, float], None]] = None) -> OptimResult:
    """Minimize ``fun_grad`` over the box [lower, upper].

    Stops when the sup-norm of the projected gradient drops below ``gtol``,
    when the relative decrease over one step is below ``ftol``, or at
    ``max_iters``. A line-search failure ends the run with the best iterate
    and a diagnostics dict (raised instead if ``raise_on_failure``).
    """
    t0 = time.perf_counter()
    x = np.asarray(x0, dtype=float).copy()
    lo = np.full_like(x, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), x.shape)
    hi = np.full_like(x, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), x.shape)
    if np.any(lo > hi):
        raise ValueError("empty box")
    x = np.clip(x, lo, hi)
    f, g = fun_grad(x)
    nfev = 1
    hist, gn = [float(f)], []
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    message, converged, failure = "iteration cap", False, None
    it = 0
    for it in range(max_iters + 1):
        pg = projected_gradient(x, g, lo, hi)
        gn.append(float(np.max(np.abs(pg))) if pg.size else 0.0)
        if gn[-1] <= gtol:
            message, converged = "projected gradient below tolerance", True
            break
        if it == max_iters:
            break
        free = pg != 0
        d = -_two_loop(np.where(free, g, 0.0), S, Y)
        d[~free] = 0.0
        slope = g @ d
        if slope >= 0:                       # quasi-Newton model lost descent
            S.clear(), Y.clear()
            d = -np.where(free, g, 0.0)
            slope = g @ d
        # a fresh memory has no curvature scale: cap the sup-norm of the step
        alpha = 1.0 if S else min(1.0, initial_step / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        for _ in range(max_backtracks):
            xt = np.clip(x + alpha * d, lo, hi)
            ft, gt = fun_grad(xt)
            nfev += 1
            if np.isfinite(ft) and ft <= f + c1 * (g @ (xt - x)) and ft <= f:
                accepted = True
                break
            alpha *= shrink
        if not accepted:
            failure = {"iteration": it, "f": float(f), "slope": float(slope),
                       "last_alpha": float(alpha), "proj_grad_norm": gn[-1]}
            message = "line search failed"
            if raise_on_failure:
                raise LineSearchError(message, failure)
            break
        s, y = xt - x, gt - g
        if s @ y > 1e-12 * max(np.linalg.norm(s) * np.linalg.norm(y), 1e-300):
            S.append(s), Y.append(y)
        df = f - ft
        x, f, g = xt, ft, gt
        hist.append(float(f))
        if callback is not None:
            callback(it, x, f)
        if ftol > 0 and df <= ftol * max(abs(f), 1e-300):
            message, converged = "relative decrease below ftol", True
            pg = projected_gradient(x, g, lo, hi)
            gn.append(float(np.max(np.abs(pg))) if pg.size else 0.0)
            it += 1
            break
    return OptimResult(x, float(f), g, it, nfev, converged, message, hist, gn,
                       time.perf_counter() - t0, failure)


def _two_loop(g, S, Y) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a))
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q
