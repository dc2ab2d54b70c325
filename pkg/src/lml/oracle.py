"""Reference implementations used to check the fast paths.

Nothing here imports the solver in :mod:`lml.core`: the dual is found by plain
two-point bisection in pure Python with exactly rounded sums, so a bug in
the multi-sample search cannot hide in both places.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, LmlPoint


@dataclass(frozen=True)
class OracleConfig:
    bisection_tol: float = 1e-14
    fd_step: float = 1e-6
    kkt_tol: float = 1e-9


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _g(x, k, nu):
    return math.fsum(_sigmoid(v + nu) for v in x) - k


def reference_project(x, k: int, cfg: OracleConfig | None = None) -> LmlPoint:
    """Solve the projection by bisection on the dual to ``cfg.bisection_tol``."""
    cfg = cfg or OracleConfig()
    x = [float(v) for v in np.asarray(x, dtype=np.float64).ravel()]
    n = len(x)
    if n < 2 or not all(math.isfinite(v) for v in x):
        raise DomainError("need at least two finite scores")
    if not 1 <= k <= n - 1:
        raise DomainError(f"k={k} is outside [1, {n - 1}]")

    step = 1.0
    lo = -max(x)
    while _g(x, k, lo) >= 0:
        lo -= step
        step *= 2
    step = 1.0
    hi = -min(x)
    while _g(x, k, hi) <= 0:
        hi += step
        step *= 2

    while hi - lo > cfg.bisection_tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gm = _g(x, k, mid)
        if gm == 0:
            lo = hi = mid
            break
        if gm < 0:
            lo = mid
        else:
            hi = mid
    nu = 0.5 * (lo + hi)
    probs = np.array([_sigmoid(v + nu) for v in x])
    return LmlPoint(probs, k, nu)


@dataclass
class KktReport:
    """Residuals of the projection's optimality conditions.

    ``stationarity`` is the largest ``|dL/dy_i| / h_i``: the gradient of the
    Lagrangian in y, ``logit(y_i) - x_i - nu``, scaled by the inverse of its
    Hessian diagonal ``h_i = 1/y_i + 1/(1 - y_i)``. It measures how far each
    coordinate sits from the stationary point in y units, and unlike the raw
    logit residual it is not dominated by float64 rounding of saturated
    coordinates. ``logit_residual`` keeps the raw, unscaled value. The dual
    used is estimated from y alone; ``dual_gap`` compares it to the dual
    stored on the point.
    """

    stationarity: float
    logit_residual: float
    feasibility: float
    dual_estimate: float
    dual_gap: float
    passed: bool


def check_kkt(x, y: LmlPoint, cfg: OracleConfig | None = None) -> KktReport:
    cfg = cfg or OracleConfig()
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(y.probs, dtype=np.float64)
    if not np.all((p > 0) & (p < 1)):
        raise DomainError("KKT check needs an interior point")
    r = np.log(p) - np.log1p(-p) - x
    w = p * (1 - p)
    nu_hat = float((w * r).sum() / w.sum())
    stat = float(np.max(w * np.abs(r - nu_hat)))
    logit_res = float(np.max(np.abs(r - nu_hat)))
    feas = float(abs(math.fsum(p) - y.k))
    gap = abs(nu_hat - float(y.dual)) if np.isfinite(y.dual) else float("nan")
    passed = stat <= cfg.kkt_tol and feas <= 1e-8 * len(p)
    return KktReport(stat, logit_res, feas, nu_hat, gap, passed)


def finite_diff_jvp(f, x, direction, step: float = 1e-6) -> np.ndarray:
    """Central difference ``(f(x + s*v) - f(x - s*v)) / (2 s)``."""
    if not step > 0:
        raise DomainError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(direction, dtype=np.float64)
    return (np.asarray(f(x + step * v)) - np.asarray(f(x - step * v))) / (2 * step)


def finite_diff_grad(f, x, step: float = 1e-6) -> np.ndarray:
    """Gradient of a scalar function by central differences, one axis at a time."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = 1.0
        out.flat[i] = float(finite_diff_jvp(f, x, e, step))
    return out
