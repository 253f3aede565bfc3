"""Dense BFGS with a Wolfe line search, and Adam.

Objectives are callables ``fun(x) -> (value, gradient)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CurvatureSkip, LineSearchError, NotDescentDirection, NumericError, UsageError

ObjectiveFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

GRADIENT_TOLERANCE = "gradient-tolerance"
MAX_ITERATIONS = "max-iterations"
LINE_SEARCH_FAILURE = "line-search-failure"
CURVATURE_SKIP_LIMIT = "curvature-skip-limit"


@dataclass
class LineSearchResult:
    alpha: float
    evaluations: int
    x: np.ndarray
    f: float
    g: np.ndarray
    # step stopped at alpha_max with Armijo satisfied; curvature may not hold
    capped: bool = False


@dataclass
class MinimizeReport:
    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    reason: str
    evaluations: int = 0
    curvature_skips: int = 0
    H: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)


def _evaluate(fun, x):
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericError(f"objective returned non-finite value or gradient (f={f})")
    return f, g


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic interpolating (a, fa, da) and (b, fb, db), or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def wolfe_line_search(fun: ObjectiveFn, x: np.ndarray, d: np.ndarray, g: np.ndarray,
                      f0: Optional[float] = None, c1: float = 1e-4, c2: float = 0.9,
                      alpha0: float = 1.0, max_evals: int = 50, alpha_max: float = 1e10) -> LineSearchResult:
    """Bracket-and-zoom search for a step satisfying the strong Wolfe conditions.

    The strong conditions imply the weak ones:
    ``f(x + a d) <= f(x) + c1 a g.d`` and ``grad f(x + a d).d >= c2 g.d``.
    If the function is still decreasing at ``alpha_max`` that step is
    returned with ``capped=True``.
    """
    x = np.asarray(x, dtype=np.float64)
    dphi0 = float(np.dot(g, d))
    if not dphi0 < 0:
        raise NotDescentDirection(f"g.d = {dphi0:.3e} >= 0")
    if not 0 < c1 < c2 < 1:
        raise UsageError("line search needs 0 < c1 < c2 < 1")
    evals = 0
    if f0 is None:
        f0, _ = _evaluate(fun, x)
        evals += 1

    def phi(a):
        nonlocal evals
        evals += 1
        xa = x + a * d
        fa, ga = _evaluate(fun, xa)
        return fa, float(np.dot(ga, d)), xa, ga

    def zoom(lo, flo, dlo, hi, fhi, dhi):
        while evals < max_evals:
            width = abs(hi - lo)
            if width <= 1e-16 * max(1.0, abs(lo)):
                break
            trial = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            # stay clear of the bracket ends, otherwise bisect
            if trial is None or not (min(lo, hi) + 0.1 * width <= trial <= max(lo, hi) - 0.1 * width):
                trial = 0.5 * (lo + hi)
            fa, da, xa, ga = phi(trial)
            if fa > f0 + c1 * trial * dphi0 or fa >= flo:
                hi, fhi, dhi = trial, fa, da
            else:
                if abs(da) <= -c2 * dphi0:
                    return LineSearchResult(trial, evals, xa, fa, ga)
                if da * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = trial, fa, da
        raise LineSearchError(f"zoom exhausted after {evals} evaluations")

    prev, fprev, dprev = 0.0, f0, dphi0
    a = alpha0
    first = True
    while evals < max_evals:
        fa, da, xa, ga = phi(a)
        if fa > f0 + c1 * a * dphi0 or (not first and fa >= fprev):
            return zoom(prev, fprev, dprev, a, fa, da)
        if abs(da) <= -c2 * dphi0:
            return LineSearchResult(a, evals, xa, fa, ga)
        if da >= 0:
            return zoom(a, fa, da, prev, fprev, dprev)
        if a >= alpha_max:
            return LineSearchResult(a, evals, xa, fa, ga, capped=True)
        prev, fprev, dprev = a, fa, da
        a = min(2.0 * a, alpha_max)
        first = False
    raise LineSearchError(f"no Wolfe step found within {max_evals} evaluations")


def bfgs_update(H: np.ndarray, s: np.ndarray, y: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Inverse-Hessian BFGS update.

    Computes (I - rho s y^T) H (I - rho y s^T) + rho s s^T with rho = 1 / y.s,
    expanded into rank-one terms so that symmetry of H is kept exactly.
    Raises ``CurvatureSkip`` when ``s.y <= floor * |s| |y|``.
    """
    sy = float(np.dot(s, y))
    if not sy > floor * np.linalg.norm(s) * np.linalg.norm(y):
        raise CurvatureSkip(f"s.y = {sy:.3e} below curvature floor")
    rho = 1.0 / sy
    Hy = H @ y
    yHy = float(np.dot(y, Hy))
    cross = np.outer(s, Hy)
    return H - rho * (cross + cross.T) + (rho * rho * yHy + rho) * np.outer(s, s)


LineSearch = Callable[..., LineSearchResult]


def bfgs_minimize(fun: ObjectiveFn, x0, tol: float = 1e-6, max_iter: int = 200,
                  line_search: Optional[LineSearch] = None, max_skips: int = 20, max_step: Optional[float] = None,
                  callback: Optional[Callable] = None, trace: bool = False) -> MinimizeReport:
    """Minimise ``fun`` with dense BFGS starting from H = I.

    Stops when ``|g| <= tol`` or after ``max_iter`` iterations. A failed line
    search or ``max_skips`` consecutive curvature skips end the run early and
    return the current (best) iterate. ``callback(k, x, f, g)`` is invoked for
    the start point and every accepted iterate. ``line_search`` replaces the
    Wolfe search; it receives ``(fun, x, d, g, f)``. ``max_step`` bounds the
    infinity norm of every step taken by the default Wolfe search.
    """
    x = np.array(x0, dtype=np.float64).reshape(-1)
    n = x.size
    f, g = _evaluate(fun, x)
    evals = 1
    H = np.eye(n)
    if line_search is not None:
        search = line_search
    elif max_step is None:
        search = lambda fn, xk, dk, gk, fk: wolfe_line_search(fn, xk, dk, gk, f0=fk)
    else:
        def search(fn, xk, dk, gk, fk):
            amax = max_step / float(np.max(np.abs(dk)))
            return wolfe_line_search(fn, xk, dk, gk, f0=fk, alpha0=min(1.0, amax), alpha_max=amax)
    k = 0
    skips = total_skips = 0
    rows = []
    if callback is not None:
        callback(0, x, f, g)
    reason = MAX_ITERATIONS
    while True:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            reason = GRADIENT_TOLERANCE
            break
        if k >= max_iter:
            reason = MAX_ITERATIONS
            break
        d = -(H @ g)
        if not np.dot(d, g) < 0:
            # H lost definiteness through rounding; fall back to steepest descent
            H = np.eye(n)
            d = -g
        try:
            ls = search(fun, x, d, g, f)
        except LineSearchError:
            reason = LINE_SEARCH_FAILURE
            break
        evals += ls.evaluations
        s = ls.x - x
        yv = ls.g - g
        skipped = False
        try:
            H = bfgs_update(H, s, yv)
            skips = 0
        except CurvatureSkip:
            skipped = True
            skips += 1
            total_skips += 1
        x, f, g = ls.x, ls.f, ls.g
        k += 1
        if trace:
            rows.append((k, f, float(np.linalg.norm(g)), ls.alpha, skipped))
        if callback is not None:
            callback(k, x, f, g)
        if skips >= max_skips:
            reason = CURVATURE_SKIP_LIMIT
            break
    return MinimizeReport(x, f, float(np.linalg.norm(g)), k, reason, evals, total_skips, H, rows)


def write_trace(report: MinimizeReport, path) -> None:
    from .model import atomic_write_text

    lines = ["k,f,grad_norm,alpha,curvature_skipped"]
    lines += [f"{k},{f!r},{gn!r},{a!r},{int(sk)}" for k, f, gn, a, sk in report.trace]
    atomic_write_text(path, "\n".join(lines) + "\n")


def adam_minimize(fun: ObjectiveFn, x0, step: float = 0.1, iters: int = 200, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8, callback: Optional[Callable] = None) -> MinimizeReport:
    """Adam with bias correction; reports the lowest-objective iterate seen."""
    if iters < 1:
        raise UsageError("adam needs iters >= 1")
    x = np.array(x0, dtype=np.float64).reshape(-1)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    f, g = _evaluate(fun, x)
    best = (f, x.copy(), g)
    if callback is not None:
        callback(0, x, f, g)
    for t in range(1, iters + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - step * m_hat / (np.sqrt(v_hat) + eps)
        f, g = _evaluate(fun, x)
        if callback is not None:
            callback(t, x, f, g)
        if f < best[0]:
            best = (f, x.copy(), g)
    fb, xb, gb = best
    return MinimizeReport(xb, fb, float(np.linalg.norm(gb)), iters, MAX_ITERATIONS, iters + 1)
