"""
Limited-memory BFGS with box constraints.

Follows the gradient-projection scheme of Byrd, Lu, Nocedal and Zhu: each
iteration finds the generalized Cauchy point along the projected steepest
descent path, minimizes the quadratic model over the variables left free
there, and runs a strong-Wolfe line search toward that point. The Hessian
approximation uses the compact form B = theta I - W M W'.

This module minimizes; :func:`maximize_box_constrained` flips signs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

EPS = np.finfo(float).eps


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    converged: bool
    message: str


class LineSearchError(RuntimeError):
    pass


def project(x, lower, upper):
    return np.minimum(np.maximum(x, lower), upper)


def projected_gradient_norm(x, g, lower, upper) -> float:
    if x.size == 0:
        return 0.0
    return float(np.abs(project(x - g, lower, upper) - x).max())


class _Memory:
    """Correction pairs and the compact-form matrices W and M."""

    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        self.s: list[np.ndarray] = []
        self.y: list[np.ndarray] = []
        self.theta = 1.0
        self.W = np.zeros((n, 0))
        self.M = np.zeros((0, 0))

    def __len__(self):
        return len(self.s)

    def update(self, s: np.ndarray, y: np.ndarray) -> bool:
        sy = float(s @ y)
        yy = float(y @ y)
        if not sy > EPS * yy or yy == 0.0:
            return False
        if len(self.s) == self.m:
            self.s.pop(0)
            self.y.pop(0)
        self.s.append(s.copy())
        self.y.append(y.copy())
        self.theta = yy / sy
        self._rebuild()
        return True

    def _rebuild(self):
        S = np.column_stack(self.s)
        Y = np.column_stack(self.y)
        theta = self.theta
        SY = S.T @ Y
        D = np.diag(np.diag(SY))
        L = np.tril(SY, -1)
        k = S.shape[1]
        middle = np.empty((2 * k, 2 * k))
        middle[:k, :k] = -D
        middle[:k, k:] = L.T
        middle[k:, :k] = L
        middle[k:, k:] = theta * (S.T @ S)
        self.W = np.hstack([Y, theta * S])
        self.M = np.linalg.inv(middle)

    def reset(self):
        self.s.clear()
        self.y.clear()
        self.theta = 1.0
        self.W = np.zeros((self.n, 0))
        self.M = np.zeros((0, 0))


def _cauchy_point(x, g, lower, upper, mem: _Memory):
    """Generalized Cauchy point and the vector c = W'(xc - x)."""
    n = x.size
    theta, W, M = mem.theta, mem.W, mem.M
    t = np.full(n, np.inf)
    neg = g < 0
    pos = g > 0
    t[neg] = (x[neg] - upper[neg]) / g[neg]
    t[pos] = (x[pos] - lower[pos]) / g[pos]
    d = np.where(t == 0.0, 0.0, -g)

    xc = x.copy()
    p = W.T @ d
    c = np.zeros(W.shape[1])
    fp = -float(d @ d)
    fpp = -theta * fp - float(p @ (M @ p))
    fpp0 = -theta * fp
    if fpp <= 0:
        fpp = EPS * fpp0 if fpp0 > 0 else 1.0
    dt_min = -fp / fpp if fpp > 0 else 0.0

    free = np.flatnonzero((t > 0) & np.isfinite(t))
    order = free[np.argsort(t[free], kind="stable")]
    t_old = 0.0
    k = 0
    while k < order.size:
        b = order[k]
        tb = t[b]
        dt = tb - t_old
        if dt_min < dt:
            break
        xc[b] = upper[b] if d[b] > 0 else lower[b]
        zb = xc[b] - x[b]
        c = c + dt * p
        gb = g[b]
        wb = W[b]
        Mc = M @ c
        Mp = M @ p
        Mw = M @ wb
        fp = fp + dt * fpp + gb * gb + theta * gb * zb - gb * float(wb @ Mc)
        fpp = fpp - theta * gb * gb - 2.0 * gb * float(wb @ Mp) - gb * gb * float(wb @ Mw)
        fpp = max(EPS * fpp0, fpp)
        p = p + gb * wb
        d[b] = 0.0
        dt_min = -fp / fpp if fpp > 0 else 0.0
        t_old = tb
        k += 1
    dt_min = max(dt_min, 0.0)
    t_old = t_old + dt_min
    rest = order[k:]
    xc[rest] = x[rest] + t_old * d[rest]
    # variables with infinite breakpoints never hit a bound
    inf_free = np.flatnonzero(np.isinf(t))
    xc[inf_free] = x[inf_free] + t_old * d[inf_free]
    c = c + dt_min * p
    return project(xc, lower, upper), c


def _subspace_min(x, g, lower, upper, xc, c, mem: _Memory):
    """Direct primal subspace minimization, truncated to stay in the box."""
    at_bound = (xc <= lower) | (xc >= upper)
    free = np.flatnonzero(~at_bound)
    if free.size == 0:
        return xc
    theta, W, M = mem.theta, mem.W, mem.M
    r = g + theta * (xc - x)
    if W.shape[1]:
        r = r - W @ (M @ c)
    r = r[free]
    if W.shape[1]:
        WZ = W[free]
        v = M @ (WZ.T @ r)
        N = np.eye(M.shape[0]) - (M @ (WZ.T @ WZ)) / theta
        try:
            v = np.linalg.solve(N, v)
        except np.linalg.LinAlgError:
            return xc
        du = -r / theta - (WZ @ v) / theta**2
    else:
        du = -r / theta
    alpha = 1.0
    xf = xc[free]
    lo = lower[free]
    hi = upper[free]
    pos = du > 0
    neg = du < 0
    if pos.any():
        alpha = min(alpha, float(np.min((hi[pos] - xf[pos]) / du[pos])))
    if neg.any():
        alpha = min(alpha, float(np.min((lo[neg] - xf[neg]) / du[neg])))
    alpha = max(alpha, 0.0)
    xbar = xc.copy()
    xbar[free] = xf + alpha * du
    return project(xbar, lower, upper)


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb)."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _line_search(phi, f0, g0, step0, step_max, c1=1e-3, c2=0.9, max_eval=30):
    """Strong-Wolfe search on phi(a) -> (f, dphi) with a in (0, step_max]."""
    if g0 >= 0:
        raise LineSearchError("not a descent direction")
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = min(step0, step_max)
    evals = 0
    best = None
    while evals < max_eval:
        f, g = phi(a)
        evals += 1
        if not np.isfinite(f):
            # backtrack into the finite region
            a = a_prev + 0.1 * (a - a_prev)
            continue
        if best is None or f < best[1]:
            best = (a, f, g)
        if f > f0 + c1 * a * g0 or (evals > 1 and f >= f_prev):
            return _zoom(phi, f0, g0, a_prev, f_prev, g_prev, a, f, g, c1, c2, max_eval - evals, best)
        if abs(g) <= -c2 * g0:
            return a, f, g, evals
        if g >= 0:
            return _zoom(phi, f0, g0, a, f, g, a_prev, f_prev, g_prev, c1, c2, max_eval - evals, best)
        if a >= step_max:
            return a, f, g, evals
        a_prev, f_prev, g_prev = a, f, g
        a = min(step_max, 2.0 * a if math.isinf(step_max) else min(4.0 * a, step_max))
    if best is not None and best[1] < f0:
        return best[0], best[1], best[2], evals
    raise LineSearchError("line search did not find a point with sufficient decrease")


def _zoom(phi, f0, g0, lo, flo, glo, hi, fhi, ghi, c1, c2, budget, best):
    evals = 0
    while evals < budget:
        a = _cubic_min(lo, flo, glo, hi, fhi, ghi)
        left, right = min(lo, hi), max(lo, hi)
        width = right - left
        if a is None or not (left + 0.1 * width <= a <= right - 0.1 * width):
            a = 0.5 * (lo + hi)
        f, g = phi(a)
        evals += 1
        if np.isfinite(f) and (best is None or f < best[1]):
            best = (a, f, g)
        if not np.isfinite(f) or f > f0 + c1 * a * g0 or f >= flo:
            hi, fhi, ghi = a, (f if np.isfinite(f) else np.inf), (g if np.isfinite(f) else 0.0)
            if not np.isfinite(f):
                fhi, ghi = flo + abs(flo) + 1.0, 0.0
        else:
            if abs(g) <= -c2 * g0:
                return a, f, g, evals
            if g * (hi - lo) >= 0:
                hi, fhi, ghi = lo, flo, glo
            lo, flo, glo = a, f, g
        if abs(hi - lo) <= EPS * max(1.0, abs(lo)):
            break
    if best is not None and best[1] < f0:
        return best[0], best[1], best[2], evals
    raise LineSearchError("zoom failed to find sufficient decrease")


def minimize_lbfgsb(
    fun_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    lower=None,
    upper=None,
    *,
    memory: int = 10,
    pgtol: float = 1e-5,
    ftol: float = 1e-8,
    max_iter: int = 1000,
) -> OptimizeResult:
    """Minimize a smooth function over the box ``lower <= x <= upper``.

    Stops when the projected gradient max-norm drops to ``pgtol`` or the
    function decreases by less than ``ftol`` in one iteration.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float).reshape(-1)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float).reshape(-1)
    if lower.shape != (n,) or upper.shape != (n,):
        raise ValueError("bounds must match the length of x0")
    if (lower > upper).any():
        raise ValueError("infeasible bounds: some lower bound exceeds its upper bound")
    x = project(x, lower, upper)

    f, g = fun_and_grad(x)
    evals = 1
    g = np.asarray(g, dtype=float)
    if not (np.isfinite(f) and np.isfinite(g).all()):
        raise ValueError("objective or gradient is not finite at the starting point")

    mem = _Memory(n, memory)
    message = "iteration limit reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if projected_gradient_norm(x, g, lower, upper) <= pgtol:
            converged, message = True, "projected gradient below tolerance"
            it -= 1
            break
        xc, c = _cauchy_point(x, g, lower, upper, mem)
        xbar = _subspace_min(x, g, lower, upper, xc, c, mem) if len(mem) else xc
        d = xbar - x
        gd = float(g @ d)
        if not gd < 0:
            if len(mem):
                mem.reset()
                continue
            converged, message = True, "no descent direction from the projected gradient"
            break

        step0 = 1.0
        if len(mem) == 0:
            dn = float(np.linalg.norm(d))
            step0 = min(1.0, 1.0 / dn) if dn > 0 else 1.0

        cache = {}

        def phi(a):
            xa = project(x + a * d, lower, upper)
            fa, ga = fun_and_grad(xa)
            ga = np.asarray(ga, dtype=float)
            cache[a] = (xa, fa, ga)
            return fa, float(ga @ d)

        try:
            a, f_new, _, k = _line_search(phi, f, gd, step0, 1.0)
        except LineSearchError:
            evals += len(cache)
            if len(mem):
                mem.reset()
                continue
            message = "line search failed"
            break
        evals += len(cache)
        x_new, f_new, g_new = cache[a]
        s = x_new - x
        y = g_new - g
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        mem.update(s, y)
        if decrease < ftol:
            converged = True
            message = "function decrease below tolerance"
            break

    return OptimizeResult(x, float(f), g, it, evals, converged, message)


def maximize_box_constrained(
    fun_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    lower=None,
    upper=None,
    **options,
) -> OptimizeResult:
    """Maximize via :func:`minimize_lbfgsb`; ``fun`` and ``grad`` are returned un-negated."""

    def neg(x):
        v, g = fun_and_grad(x)
        return -v, -np.asarray(g, dtype=float)

    res = minimize_lbfgsb(neg, x0, lower, upper, **options)
    res.fun = -res.fun
    res.grad = -res.grad
    return res
