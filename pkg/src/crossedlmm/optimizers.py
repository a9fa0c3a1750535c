"""Derivative-free optimizers for the variance-parameter search.

Three bounded minimizers, tried in a fixed cascade by the fitting engine:

1. :func:`quadratic_trust_region` -- interpolates a separable quadratic
   model on a coordinate stencil and takes trust-region steps with bound
   clipping; cheap per iteration at any dimension.
2. :func:`nelder_mead_reflected` -- simplex search in an unconstrained
   mirror space; coordinates with a zero lower bound are reflected
   through it (``theta = |phi|``).
3. :func:`lbfgsb_bounded` -- quasi-Newton with numerical gradients and
   box constraints.

All three are deterministic for a given start and budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

__all__ = [
    "OptimizeOutcome",
    "quadratic_trust_region",
    "nelder_mead_reflected",
    "lbfgsb_bounded",
]


@dataclass
class OptimizeOutcome:
    x: np.ndarray
    fun: float
    n_evals: int
    success: bool


class _BudgetExhausted(Exception):
    pass


class _Counted:
    """Objective wrapper enforcing an evaluation budget and tracking the best."""

    def __init__(self, fun, max_evals):
        self.fun = fun
        self.max_evals = max_evals
        self.n = 0
        self.best_x = None
        self.best_f = np.inf

    def __call__(self, x):
        if self.n >= self.max_evals:
            raise _BudgetExhausted
        self.n += 1
        f = float(self.fun(x))
        if not np.isfinite(f):
            f = np.inf
        if f < self.best_f:
            self.best_f = f
            self.best_x = np.array(x, dtype=float)
        return f


def quadratic_trust_region(
    fun,
    x0,
    lower,
    max_evals: int,
    radius0: float = 0.25,
    radius_min: float = 1e-8,
    radius_max: float = 8.0,
) -> OptimizeOutcome:
    """Bounded quadratic-approximation trust-region minimization.

    Each outer iteration evaluates a two-point stencil per coordinate
    (one-sided near the lower bound), fits gradient and diagonal
    curvature, and takes up to a few separable trust-region steps under
    the current model.  The radius shrinks on model failure and the run
    converges when it collapses.
    """
    x0 = np.asarray(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    n = x0.size
    scale = 1.0 + np.abs(x0)
    f = _Counted(fun, max_evals)
    x = np.clip(x0, lower, None)

    try:
        fx = f(x)
        radius = radius0
        while radius >= radius_min:
            h = radius * scale
            grad = np.zeros(n)
            curv = np.zeros(n)
            stencil_best = (np.inf, None)
            big = abs(fx) + 1e6 * (1.0 + abs(fx))
            for i in range(n):
                hi = h[i]
                if x[i] - hi >= lower[i]:
                    xp = x.copy(); xp[i] += hi
                    xm = x.copy(); xm[i] -= hi
                    fp = min(f(xp), big)
                    fm = min(f(xm), big)
                    grad[i] = (fp - fm) / (2 * hi)
                    curv[i] = (fp - 2 * fx + fm) / hi**2
                    if fp < stencil_best[0]:
                        stencil_best = (fp, xp)
                    if fm < stencil_best[0]:
                        stencil_best = (fm, xm)
                else:
                    x1 = x.copy(); x1[i] += hi
                    x2 = x.copy(); x2[i] += 2 * hi
                    f1 = min(f(x1), big)
                    f2 = min(f(x2), big)
                    grad[i] = (-3 * fx + 4 * f1 - f2) / (2 * hi)
                    curv[i] = (f2 - 2 * f1 + fx) / hi**2
                    if f1 < stencil_best[0]:
                        stencil_best = (f1, x1)

            if stencil_best[0] < fx:
                # model center is not the best known point; recenter first
                fx = stencil_best[0]
                x = stencil_best[1]

            improved_any = False
            for _ in range(4):
                step = np.zeros(n)
                for i in range(n):
                    lo = max(lower[i] - x[i], -radius * scale[i])
                    hi = radius * scale[i]
                    if curv[i] > 1e-12:
                        step[i] = np.clip(-grad[i] / curv[i], lo, hi)
                    elif grad[i] > 0:
                        step[i] = lo
                    elif grad[i] < 0:
                        step[i] = hi
                predicted = -(grad @ step + 0.5 * (curv * step) @ step)
                if predicted <= 1e-13 * (1.0 + abs(fx)):
                    break
                fnew = f(x + step)
                ratio = (fx - fnew) / predicted
                if fnew < fx:
                    x = x + step
                    fx = fnew
                    grad = grad + curv * step  # shift the model to the new center
                    improved_any = True
                if ratio < 0.1:
                    break
            if improved_any:
                radius = min(radius * 1.5, radius_max)
            else:
                radius *= 0.35
        return OptimizeOutcome(x, fx, f.n, True)
    except _BudgetExhausted:
        best_x = f.best_x if f.best_x is not None else x
        return OptimizeOutcome(np.clip(best_x, lower, None), f.best_f, f.n, False)


def nelder_mead_reflected(fun, x0, bounded_mask, max_evals: int) -> OptimizeOutcome:
    """Nelder-Mead in a mirror space; bounded coordinates reflect at zero."""
    x0 = np.asarray(x0, dtype=float)
    bounded_mask = np.asarray(bounded_mask, dtype=bool)

    def reflect(phi):
        out = np.array(phi, dtype=float)
        out[bounded_mask] = np.abs(out[bounded_mask])
        return out

    f = _Counted(lambda phi: fun(reflect(phi)), max_evals)
    try:
        res = minimize(
            f,
            x0,
            method="Nelder-Mead",
            options={
                "maxfev": max_evals,
                "xatol": 1e-8,
                "fatol": 1e-10,
                "adaptive": x0.size >= 10,
            },
        )
        return OptimizeOutcome(reflect(res.x), float(res.fun), f.n, bool(res.success))
    except _BudgetExhausted:
        phi = f.best_x if f.best_x is not None else x0
        return OptimizeOutcome(reflect(phi), f.best_f, f.n, False)


def lbfgsb_bounded(fun, x0, lower, max_evals: int) -> OptimizeOutcome:
    """Bounded quasi-Newton with two-point numerical gradients."""
    x0 = np.asarray(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    f = _Counted(fun, max_evals)
    bounds = [(lo if np.isfinite(lo) else None, None) for lo in lower]
    try:
        res = minimize(
            f,
            np.clip(x0, lower, None),
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxfun": max_evals, "ftol": 1e-13, "gtol": 1e-9, "eps": 1e-6},
        )
        return OptimizeOutcome(
            np.clip(res.x, lower, None), float(res.fun), f.n, bool(res.success)
        )
    except _BudgetExhausted:
        best_x = f.best_x if f.best_x is not None else x0
        return OptimizeOutcome(np.clip(best_x, lower, None), f.best_f, f.n, False)
