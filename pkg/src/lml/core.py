"""Projection onto the interior of the (n, k) limited multi-label polytope.

The polytope is ``{p in R^n : 0 <= p <= 1, sum(p) = k}``. The projection

    argmin_{0 < y < 1}  -x.y - H_b(y)   s.t.  sum(y) = k

has the solution ``y = sigmoid(x + nu)`` where the scalar dual ``nu`` is the
root of the monotone function ``g(nu) = sum(sigmoid(x + nu)) - k``. The root
is found with a multi-sample bracketing method; the backward pass solves the
perturbed KKT system analytically.

All functions accept a single score vector of shape ``(n,)`` or a batch of
shape ``(batch, n)``; batched rows are solved independently.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "ConvergenceError",
    "SolverConfig",
    "DualBracket",
    "DualSolution",
    "LmlPoint",
    "sigmoid",
    "g_dual",
    "initial_bracket",
    "solve_dual",
    "find_dual",
    "lml_project",
    "lml_backward",
    "binary_entropy",
    "shannon_entropy",
    "entropy_surface_grid",
]

# |g(midpoint)| below this ends the search early.
G_ATOL = 1e-14
BACKWARD_CLAMP = 1e-12


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class ConvergenceError(RuntimeError):
    """The dual search exhausted its iteration budget."""


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the bracketing dual solver.

    ``samples_per_iter`` counts both bracket endpoints, so every iteration
    shrinks the bracket by a factor of ``samples_per_iter - 1``. ``workers``
    above one splits the per-iteration samples across threads.
    """

    samples_per_iter: int = 10
    saturation_offset: float = 7.0
    tol: float = 1e-12
    max_iters: int = 100
    workers: int = 1

    def __post_init__(self):
        if self.samples_per_iter < 3:
            # two samples are just the endpoints and the bracket never shrinks
            raise DomainError("samples_per_iter must be >= 3")
        if not self.saturation_offset > 0:
            raise DomainError("saturation_offset must be positive")
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")


@dataclass(frozen=True)
class DualBracket:
    lo: float
    hi: float


@dataclass
class DualSolution:
    """Result of the dual search, one entry per row.

    ``width`` is the final bracket width; it is zero when a sample hit
    g = 0 exactly, since that point brackets the root on its own.
    """

    nu: np.ndarray
    iterations: np.ndarray
    width: np.ndarray


@dataclass
class LmlPoint:
    """A projected point ``probs`` with its optimal dual.

    For a batched projection ``probs`` has shape ``(batch, n)`` and ``dual``,
    ``iterations`` have shape ``(batch,)``; otherwise they are scalars.
    """

    probs: np.ndarray
    k: int
    dual: float | np.ndarray
    iterations: int | np.ndarray = 0

    @property
    def n(self) -> int:
        return self.probs.shape[-1]


def sigmoid(z):
    """Logistic function, evaluated without overflow for any finite input."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    r = 1.0 / (1.0 + e)
    return np.where(z >= 0, r, e * r)


def _as_scores(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise DomainError(f"scores must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[-1] < 2:
        raise DomainError(f"need at least 2 scores, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise DomainError("scores must be finite")
    return x


def _check_k(k, n: int) -> int:
    if isinstance(k, (bool, np.bool_)) or int(k) != k:
        raise DomainError(f"k must be an integer, got {k!r}")
    k = int(k)
    if not 1 <= k <= n - 1:
        raise DomainError(
            f"k={k} is outside [1, {n - 1}] for n={n}: with k=0 or k=n the "
            "polytope is a single vertex and has no interior point"
        )
    return k


# Above this score spread exp(max - x) could overflow; use the tanh form.
_MAX_SPREAD = 600.0


class _Rows:
    """Score rows with the per-row exponentials ``exp(max(x) - x)`` cached.

    With them ``sigmoid(x + nu) = 1 / (1 + exp(max - x) * exp(-(nu + max)))``
    costs one multiply-add and a reciprocal per element. ``exp(max - x)``
    lies in ``[1, e^600]``, so the product is never NaN and saturates to the
    right limit. Rows with a larger spread use
    ``sigmoid(z) = (1 + tanh(z / 2)) / 2``. Either way the absolute error
    per term is at the 1e-16 level, which is all g needs.
    """

    def __init__(self, x2: np.ndarray):
        self.x = x2
        self.top = x2.max(axis=1)
        self.fast = bool(np.all(self.top - x2.min(axis=1) < _MAX_SPREAD))
        self.ex = np.exp(self.top[:, None] - x2) if self.fast else None

    def take(self, keep: np.ndarray) -> "_Rows":
        out = object.__new__(_Rows)
        out.x, out.top, out.fast = self.x[keep], self.top[keep], self.fast
        out.ex = self.ex[keep] if self.fast else None
        return out

    def sigmoid_sum(self, nus: np.ndarray) -> np.ndarray:
        if self.fast:
            c = np.exp(-(nus + self.top[:, None]))
            t = self.ex[:, None, :] * c[:, :, None]
            t += 1.0
            np.reciprocal(t, out=t)
            return t.sum(axis=-1)
        z = 0.5 * self.x[:, None, :] + 0.5 * nus[:, :, None]
        return 0.5 * (self.x.shape[-1] + np.tanh(z).sum(axis=-1))


def _g_rows(rows, k: int, nus: np.ndarray, workers: int = 1) -> np.ndarray:
    """``g`` for each score row (b, n) at each dual in ``nus`` (b, m)."""
    if not isinstance(rows, _Rows):
        rows = _Rows(rows)
    if workers == 1 or nus.shape[1] < 2:
        return rows.sigmoid_sum(nus) - k
    chunks = np.array_split(np.arange(nus.shape[1]), min(workers, nus.shape[1]))
    out = np.empty(nus.shape)

    def work(cols):
        out[:, cols] = rows.sigmoid_sum(nus[:, cols]) - k

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(work, chunks))
    return out


def g_dual(x, k: int, nu: float) -> float:
    """Return ``sum(sigmoid(x + nu)) - k``, strictly increasing in ``nu``."""
    x = _as_scores(x)
    if x.ndim != 1:
        raise DomainError("g_dual takes a single score vector")
    k = _check_k(k, x.shape[0])
    if not np.isfinite(nu):
        raise DomainError("nu must be finite")
    return float(_g_rows(x[None, :], k, np.array([[nu]]))[0, 0])


def _bracket_rows(x2: np.ndarray, k: int, offset: float):
    """Saturation bracket for every row, widened until the signs of g hold."""
    n = x2.shape[1]
    part = np.partition(x2, (n - k - 1, n - k), axis=1)
    kth, next_ = part[:, n - k], part[:, n - k - 1]

    rows = _Rows(x2)
    off = np.full(len(x2), float(offset))
    lo = -kth - off
    glo = _g_rows(rows, k, lo[:, None])[:, 0]
    bad = glo >= 0
    while bad.any():
        off[bad] *= 2.0
        lo[bad] = -kth[bad] - off[bad]
        glo[bad] = _g_rows(rows.take(bad), k, lo[bad, None])[:, 0]
        bad = glo >= 0

    off = np.full(len(x2), float(offset))
    hi = -next_ + off
    ghi = _g_rows(rows, k, hi[:, None])[:, 0]
    bad = ghi <= 0
    while bad.any():
        off[bad] *= 2.0
        hi[bad] = -next_[bad] + off[bad]
        ghi[bad] = _g_rows(rows.take(bad), k, hi[bad, None])[:, 0]
        bad = ghi <= 0
    return lo, hi, rows


def initial_bracket(x, k: int, cfg: SolverConfig | None = None) -> DualBracket:
    """Bracket ``[-x_(k) - offset, -x_(k+1) + offset]`` around the root of g.

    ``x_(j)`` is the j-th largest score. If the saturation offset is too small
    for the sign of g to hold at an endpoint, that endpoint's offset is
    doubled until it does.
    """
    cfg = cfg or SolverConfig()
    x = _as_scores(x)
    if x.ndim != 1:
        raise DomainError("initial_bracket takes a single score vector")
    k = _check_k(k, x.shape[0])
    lo, hi, _ = _bracket_rows(x[None, :], k, cfg.saturation_offset)
    return DualBracket(float(lo[0]), float(hi[0]))


def _solve_row(rows: _Rows, k: int, cfg: SolverConfig, lo: float, hi: float):
    """Single-row version of the search in :func:`solve_dual`."""
    frac = np.linspace(0.0, 1.0, cfg.samples_per_iter)[1:-1]
    m = frac.size
    nus = np.empty((1, m + 1))
    for it in range(1, cfg.max_iters + 1):
        mid = 0.5 * (lo + hi)
        np.multiply(frac, hi - lo, out=nus[0, :m])
        nus[0, :m] += lo
        nus[0, m] = mid
        gs = _g_rows(rows, k, nus, cfg.workers)[0].tolist()
        samples = nus[0].tolist()
        last = -1
        for i in range(m):
            if gs[i] == 0:
                return samples[i], it, 0.0
            if gs[i] < 0:
                last = i
        if abs(gs[m]) <= G_ATOL:
            return mid, it, hi - lo
        new_lo = samples[last] if last >= 0 else lo
        new_hi = samples[last + 1] if last + 1 < m else hi
        stalled = new_lo == lo and new_hi == hi
        lo, hi = new_lo, new_hi
        if hi - lo <= cfg.tol or stalled:
            return 0.5 * (lo + hi), it, hi - lo
    raise ConvergenceError(f"dual search did not converge in {cfg.max_iters} iterations")


def solve_dual(x, k: int, cfg: SolverConfig | None = None) -> DualSolution:
    """Multi-sample bracketing search for the root of g, row by row.

    Each iteration places ``samples_per_iter`` equally spaced points on the
    current bracket (endpoints included; their g values are carried over),
    returns immediately at a point where g is exactly zero, and otherwise
    keeps the pair around the last negative sample. A row stops when the
    bracket is narrower than ``cfg.tol``, when |g| at the bracket midpoint is
    below ``G_ATOL``, or when the bracket can no longer shrink in floating
    point. The answer is the bracket midpoint.
    """
    cfg = cfg or SolverConfig()
    x = _as_scores(x)
    x2 = np.atleast_2d(x)
    b = x2.shape[0]
    k = _check_k(k, x2.shape[1])

    lo, hi, rows = _bracket_rows(x2, k, cfg.saturation_offset)
    if b == 1:
        nu, it, width = _solve_row(rows, k, cfg, float(lo[0]), float(hi[0]))
        return DualSolution(np.array([nu]), np.array([it]), np.array([width]))
    m = cfg.samples_per_iter - 2
    frac = np.linspace(0.0, 1.0, cfg.samples_per_iter)[1:-1]
    nu = np.full(b, np.nan)
    width = hi - lo
    iters = np.zeros(b, dtype=np.int64)
    ids, xa, la, ha = np.arange(b), rows, lo, hi

    for it in range(1, cfg.max_iters + 1):
        if ids.size == 0:
            break
        iters[ids] = it
        nus = np.empty((ids.size, m + 1))
        nus[:, :m] = la[:, None] + (ha - la)[:, None] * frac
        nus[:, m] = 0.5 * (la + ha)
        gs = _g_rows(xa, k, nus, cfg.workers)
        g_in = gs[:, :m]
        rows = np.arange(ids.size)

        # last interior sample with g < 0; -1 keeps the lower endpoint
        neg = g_in < 0
        last = np.where(neg.any(axis=1), m - 1 - np.argmax(neg[:, ::-1], axis=1), -1)
        new_lo = np.where(last >= 0, nus[rows, np.maximum(last, 0)], la)
        new_hi = np.where(last + 1 < m, nus[rows, np.minimum(last + 1, m - 1)], ha)

        stalled = (new_lo == la) & (new_hi == ha)
        done = (new_hi - new_lo <= cfg.tol) | stalled
        result = 0.5 * (new_lo + new_hi)
        fin_width = new_hi - new_lo
        small = np.abs(gs[:, m]) <= G_ATOL
        hit = g_in == 0
        zero = hit.any(axis=1)
        if small.any() or zero.any():
            early = small | zero
            result = np.where(small, nus[:, m], result)
            result = np.where(zero, nus[rows, np.argmax(hit, axis=1)], result)
            fin_width = np.where(small, ha - la, fin_width)
            fin_width = np.where(zero, 0.0, fin_width)
            done |= early

        la, ha = new_lo, new_hi
        if done.any():
            nu[ids[done]] = result[done]
            width[ids[done]] = fin_width[done]
            keep = ~done
            ids, xa, la, ha = ids[keep], xa.take(keep), la[keep], ha[keep]

    if ids.size:
        raise ConvergenceError(
            f"dual search did not converge in {cfg.max_iters} iterations "
            f"for {ids.size} row(s)"
        )
    return DualSolution(nu=nu, iterations=iters, width=width)


def find_dual(x, k: int, cfg: SolverConfig | None = None):
    """Optimal dual variable for one score vector (float) or a batch (array)."""
    sol = solve_dual(x, k, cfg)
    return float(sol.nu[0]) if np.ndim(x) == 1 else sol.nu


_ONE_BELOW = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


def _interior(p: np.ndarray) -> np.ndarray:
    # Saturated coordinates round to exactly 1.0 (or underflow to 0.0); the
    # nearest representable interior value is within one ulp of the true one.
    return np.clip(p, _TINY, _ONE_BELOW)


def _separate_ties(x2: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Keep distinct scores on distinct probabilities.

    sigmoid(x + nu) is monotone but rounding merges neighbours, mostly near
    1 where doubles are 1.1e-16 apart. Walking down from the largest score,
    a value that fails to drop below its predecessor is stepped one ulp
    toward zero, so each coordinate moves by at most n ulps.
    """
    ps = np.sort(p2, axis=1)
    rows = np.flatnonzero((np.diff(ps, axis=1) == 0).any(axis=1))
    for r in rows:
        order = np.argsort(-x2[r], kind="stable")
        xs, ys = x2[r, order], p2[r, order]
        for i in range(1, ys.size):
            if xs[i] < xs[i - 1] and ys[i] >= ys[i - 1]:
                ys[i] = np.nextafter(ys[i - 1], 0.0)
            elif xs[i] == xs[i - 1]:
                ys[i] = ys[i - 1]
        p2[r, order] = ys
    return p2


def lml_project(x, k: int, cfg: SolverConfig | None = None) -> LmlPoint:
    """Project scores onto the interior of the (n, k) polytope."""
    x = _as_scores(x)
    k = _check_k(k, x.shape[-1])
    sol = solve_dual(x, k, cfg)
    x2 = np.atleast_2d(x)
    probs = _separate_ties(x2, _interior(sigmoid(x2 + sol.nu[:, None])))
    if x.ndim == 1:
        return LmlPoint(probs[0], k, float(sol.nu[0]), int(sol.iterations[0]))
    return LmlPoint(probs, k, sol.nu, sol.iterations)


def lml_backward(y, grad_out, clamp_eps: float = BACKWARD_CLAMP) -> np.ndarray:
    """Gradient of a loss with respect to the scores, given ``dloss/dy``.

    ``y`` is an :class:`LmlPoint` or the raw projected probabilities. With
    ``h = 1/y + 1/(1 - y)`` the KKT perturbation gives
    ``d_nu = sum(grad_out / h) / sum(1 / h)`` and the result
    ``(grad_out - d_nu) / h``, which sums to zero along each row.
    """
    probs = y.probs if isinstance(y, LmlPoint) else np.asarray(y, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != probs.shape:
        raise DomainError(
            f"upstream gradient shape {grad_out.shape} does not match {probs.shape}"
        )
    if not np.all(np.isfinite(grad_out)):
        raise DomainError("upstream gradient must be finite")
    p = np.clip(probs, clamp_eps, 1.0 - clamp_eps)
    h = 1.0 / p + 1.0 / (1.0 - p)
    hinv = 1.0 / h
    d_nu = (hinv * grad_out).sum(axis=-1, keepdims=True) / hinv.sum(axis=-1, keepdims=True)
    d_y = hinv * (d_nu - grad_out)
    return -d_y


def binary_entropy(y) -> float:
    """``-sum(y log y + (1 - y) log(1 - y))`` for entries in (0, 1)."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y > 0) & (y < 1)):
        raise DomainError("binary entropy needs every entry strictly inside (0, 1)")
    return float(-(y * np.log(y) + (1 - y) * np.log1p(-y)).sum())


def shannon_entropy(y) -> float:
    """``-sum(y log y)`` for positive entries."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all(y > 0):
        raise DomainError("entropy needs strictly positive entries")
    return float(-(y * np.log(y)).sum())


PENALTIES = {"binary": binary_entropy, "shannon": shannon_entropy}


def entropy_surface_grid(n: int, k: int, penalty: str = "binary", resolution: int = 60,
                         margin: float = 1e-6):
    """Evaluate an entropy penalty on a regular grid over the (n, k) polytope.

    The first ``n - 1`` coordinates range over ``{0, 1/R, ..., 1}`` with
    ``R = resolution``; the last one is fixed by the sum constraint. Points
    closer than ``margin`` to the boundary of the hypercube are dropped. The
    polytope center ``k/n`` lies on the grid whenever ``R`` is a multiple of
    ``n``.

    Returns ``(points, values)`` with shapes ``(m, n)`` and ``(m,)``.
    """
    if n not in (3, 4):
        raise DomainError(f"surface grids are defined for n in {{3, 4}}, got {n}")
    k = _check_k(k, n)
    if penalty not in PENALTIES:
        raise DomainError(f"unknown penalty {penalty!r}; choose from {sorted(PENALTIES)}")
    if resolution < 2:
        raise DomainError("resolution must be >= 2")

    counts = np.array(list(itertools.product(range(resolution + 1), repeat=n - 1)))
    last = k * resolution - counts.sum(axis=1)
    pts = np.column_stack([counts, last]) / resolution
    keep = np.all((pts > margin) & (pts < 1 - margin), axis=1)
    pts = pts[keep]
    fn = PENALTIES[penalty]
    vals = np.array([fn(p) for p in pts])
    return pts, vals
