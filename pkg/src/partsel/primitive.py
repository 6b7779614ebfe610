"""The optimal unweighted partition selection primitive and its step map.

``step_l(q, eps, delta, alpha)`` is the largest release probability ``p >= q``
such that Ber(p) and Ber(q) are within ``eps`` of each other in both
directions under the ``delta``-approximate Rényi divergence. Iterating it
from 0 gives the optimal primitive ``pi_star``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .divergence import RenyiBudget, _check_alpha

_MAX_ITER = 200
_LOGIT_CAP = 745.0  # exp(-745) underflows, so 1 - p is resolved up to here


@dataclass(frozen=True)
class PrimitiveTable:
    """Release probabilities indexed by count, starting at ``probs[0] == 0``.

    ``saturation_index`` is the first ``n`` with ``probs[n] == 1`` (None when
    the table stops before reaching 1). Entries after saturation are 1.
    """

    probs: np.ndarray
    budget: Optional[RenyiBudget] = None
    saturation_index: Optional[int] = None

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return len(self.probs)

    @property
    def n_max(self) -> int:
        return len(self.probs) - 1

    def __getitem__(self, n):
        return self.probs[n]

    def at(self, n: int) -> float:
        """Release probability at count ``n``; 1 beyond a saturated table."""
        if n < 0:
            raise IndexError("counts are non-negative")
        if n < len(self.probs):
            return float(self.probs[n])
        if self.saturation_index is not None:
            return 1.0
        raise IndexError(f"count {n} beyond table range {self.n_max}; extend the table")


def _log_pair(x):
    """``log p`` and ``log(1 - p)`` for ``p = expit(x)`` without rounding p."""
    return -np.logaddexp(0.0, -x), -np.logaddexp(0.0, x)


def _divergence_up(x, qq, alpha):
    """(alpha-1) D_alpha(Ber(p) || Ber(qq)) at ``p = expit(x)`` and its x-derivative."""
    lp, l1p = _log_pair(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        a1 = alpha * lp + (1 - alpha) * np.log(qq)
        a2 = alpha * l1p + (1 - alpha) * np.log1p(-qq)
        g = np.logaddexp(a1, a2)
        w1 = np.exp(a1 - g)
        w2 = np.exp(a2 - g)
    return g, alpha * (w1 * np.exp(l1p) - w2 * np.exp(lp))


def _divergence_down(x, qq, alpha):
    """(alpha-1) D_alpha(Ber(qq) || Ber(p)) at ``p = expit(x)`` and its x-derivative."""
    lp, l1p = _log_pair(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        a1 = np.where(qq > 0, alpha * np.log(qq) + (1 - alpha) * lp, -np.inf)
        a2 = alpha * np.log1p(-qq) + (1 - alpha) * l1p
        g = np.logaddexp(a1, a2)
        w1 = np.exp(a1 - g)
        w2 = np.exp(a2 - g)
    return g, (alpha - 1) * (w2 * np.exp(lp) - w1 * np.exp(l1p))


def _solve_increasing(fn, target, qq, guess):
    """Vectorised safeguarded Newton for ``fn(logit p, qq) == target`` with ``p > qq``.

    ``fn`` is increasing in ``p`` from 0 at ``p == qq`` and returns its value
    and derivative in ``logit p``. Newton runs on
    ``log fn`` against ``logit(p)``, which is close to concave and converges
    in a handful of steps; steps leaving the bracket fall back to bisection.
    Returns the final iterate when it is within rounding of the target,
    otherwise the largest iterate known to satisfy ``fn <= target``.
    """
    lo = logit(qq)
    hi = np.full_like(qq, _LOGIT_CAP)
    x = logit(np.clip(guess, qq, 1.0))
    x = np.where((x <= lo) | (x >= hi), 0.5 * (lo + hi), x)
    out = np.empty_like(qq)
    act = np.arange(qq.size)
    t, q = target, qq
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(_MAX_ITER):
            p = expit(x)
            g, dg = fn(x, q)
            f = np.log(np.maximum(g, 1e-300)) - np.log(t)
            below = f <= 0
            lo = np.where(below, x, lo)
            hi = np.where(below, hi, x)
            hit = np.abs(g - t) <= 1e-13 * np.maximum(1.0, t)
            stuck = hi - lo <= 4 * np.spacing(np.abs(hi))
            fin = hit | stuck
            if fin.any():
                out[act[hit]] = p[hit]
                sl = stuck & ~hit
                out[act[sl]] = expit(lo[sl])
                keep = ~fin
                if not keep.any():
                    return out
                act, x, lo, hi, t, q = act[keep], x[keep], lo[keep], hi[keep], t[keep], q[keep]
                p, g, dg, f = p[keep], g[keep], dg[keep], f[keep]
            xn = x - f * g / dg
            bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            # p no longer moves in double precision: settle on the feasible side
            flat = (expit(xn) == p) & (expit(lo) == p)
            if flat.any():
                out[act[flat]] = p[flat]
                keep = ~flat
                if not keep.any():
                    return out
                act, xn, lo, hi, t, q = act[keep], xn[keep], lo[keep], hi[keep], t[keep], q[keep]
            x = xn
    raise ArithmeticError("root solve for the step map did not converge")


def step_l(q, eps, delta, alpha: float):
    """Largest ``p in [q, 1]`` with both approximate divergences ``<= eps``.

    Follows the iteration of the optimal-primitive procedure: return 1 when
    ``q + delta >= 1``; otherwise rescale ``q' = q / (1 - delta)``, find the
    largest ``p`` with ``D(Ber(p)||Ber(q')) <= eps`` and
    ``D(Ber(q')||Ber(p)) <= eps`` by root finding, and return
    ``p + delta - p * delta``. When ``q' == 0`` no ``p > 0`` keeps the first
    divergence finite, so the result is ``delta``.

    Broadcasts over ``q``, ``eps`` and ``delta``; scalar in, float out.
    """
    _check_alpha(alpha)
    q, eps, delta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (q, eps, delta)))
    if np.any((q < 0) | (q > 1) | np.isnan(q)):
        raise ValueError("q must lie in [0, 1]")
    if np.any((eps < 0) | np.isnan(eps)):
        raise ValueError("eps must be >= 0")
    if np.any((delta < 0) | (delta >= 1)):
        raise ValueError("delta must be in [0, 1)")
    scalar = q.ndim == 0
    q, eps, delta = (np.atleast_1d(v).astype(float) for v in (q, eps, delta))

    out = np.ones(q.shape)
    # exact test of q + delta < 1 (TwoSum), so a sum that rounds up to 1 does
    # not trigger the saturation guard
    s = q + delta
    bv = s - q
    err = (q - (s - bv)) + (delta - bv)
    live = (s < 1) | ((s == 1) & (err < 0))
    if live.any():
        ql, el, dl = q[live], eps[live], delta[live]
        qq = np.minimum(1.0, ql / (1 - dl))
        out[live] = _step_core(qq, el, dl, alpha)
    return float(out[0]) if scalar else out


def _step_core(qq, eps, delta, alpha):
    k = (alpha - 1) * eps
    p = qq.copy()
    grow = (eps > 0) & (qq > 0)
    inf_budget = np.isinf(eps)
    p = np.where(inf_budget, 1.0, p)
    grow &= ~inf_budget

    # q' == 0 stays at p = 0 since D(Ber(p)||Ber(0)) is infinite for p > 0
    if grow.any():
        qg, kg = qq[grow], k[grow]
        guess = qg + np.sqrt(2 * eps[grow] * qg * (1 - qg) / alpha)

        # upward constraint: D(Ber(p)||Ber(q')) <= eps, value at p=1 is -log q'
        at_one = -(alpha - 1) * np.log(qg)
        p1 = np.ones_like(qg)
        need = at_one > kg
        if need.any():
            p1[need] = _solve_increasing(
                lambda x, qn: _divergence_up(x, qn, alpha), kg[need], qg[need], guess[need])

        # downward constraint: D(Ber(q')||Ber(p)) <= eps, unbounded as p -> 1
        p2 = _solve_increasing(lambda x, qn: _divergence_down(x, qn, alpha), kg, qg, guess)
        # q' itself is always feasible; guards roots that underflow for subnormal q'
        root = np.maximum(np.minimum(p1, p2), qg)
        p[grow] = _round_feasible(root, qg, kg, alpha)
    out = np.minimum(1.0, p + delta - p * delta)
    # rounding p + delta(1 - p) may land above the root; step down so the
    # divergence checks, which undo the map as (out - delta)/(1 - delta), pass
    for _ in range(8):
        over = (p < 1.0) & ((out - delta) / (1 - delta) > p)
        if not over.any():
            break
        out[over] = np.nextafter(out[over], 0.0)
    return out


def _round_feasible(p, qq, k, alpha):
    """Largest double ``<= p`` at which both constraints hold.

    The roots are found in logit space; rounding to a probability can shrink
    ``1 - p`` enough to overshoot the budget by more than rounding noise.
    Offending entries are bracketed by doubling steps and then bisected on the
    integer bit patterns, which order positive doubles.
    """
    p = p.copy()
    lim = k + 1e-12 * np.maximum(1.0, k)

    def bad(v, i):
        with np.errstate(divide="ignore"):
            x = logit(v)
            return (v > qq[i]) & ((_divergence_up(x, qq[i], alpha)[0] > lim[i])
                                  | (_divergence_down(x, qq[i], alpha)[0] > lim[i]))

    idx = np.flatnonzero(bad(p, slice(None)))
    if idx.size == 0:
        return p
    hi = p[idx].view(np.int64)            # infeasible
    floor = qq[idx].view(np.int64)        # p == qq is always feasible
    lo = np.maximum(floor, hi - 1)
    step = np.ones_like(hi)
    for _ in range(64):
        still = bad(lo.view(np.float64), idx) & (lo > floor)
        if not still.any():
            break
        hi = np.where(still, lo, hi)
        step = np.where(still, step * 2, step)
        lo = np.where(still, np.maximum(floor, lo - step), lo)
    while np.any(hi - lo > 1):
        mid = lo + (hi - lo) // 2
        ok = ~bad(mid.view(np.float64), idx)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    p[idx] = lo.view(np.float64)
    return p


_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def pi_star(n_max: int, budget: RenyiBudget) -> PrimitiveTable:
    """Optimal primitive on counts ``0..n_max`` for the given budget.

    Tables are cached per budget and extended on demand; computation stops at
    the first count released with probability 1.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    with _CACHE_LOCK:
        probs = _CACHE.setdefault(budget, [0.0])
        while len(probs) <= n_max and probs[-1] < 1.0:
            probs.append(step_l(probs[-1], budget.epsilon, budget.delta, budget.alpha))
        vals = list(probs[:n_max + 1])
    sat = vals.index(1.0) if 1.0 in vals else None
    if sat is None and probs[-1] == 1.0:
        sat = len(probs) - 1
    vals.extend([1.0] * (n_max + 1 - len(vals)))
    if sat is not None and sat > n_max:
        sat = None
    return PrimitiveTable(np.array(vals), budget, sat)


def saturation_count(budget: RenyiBudget, limit: Optional[int] = None) -> Optional[int]:
    """First ``n`` with ``pi_star(n) == 1``; None if not reached by ``limit``.

    The default limit is ``ceil(1/delta)``, which always suffices for
    ``delta > 0``.
    """
    if limit is None:
        if budget.delta == 0:
            raise ValueError("with delta == 0 the primitive never saturates; pass a limit")
        limit = math.ceil(1 / budget.delta)
    return pi_star(limit, budget).saturation_index


def pi_star_max_divergence(n_max: int, eps: float, delta: float) -> np.ndarray:
    """Closed-form optimal primitive for ``(eps, delta)``-DP.

    This is the ``alpha -> inf`` limit of :func:`pi_star`:
    ``pi(n) = min(1, e^eps pi(n-1) + delta, 1 - e^-eps (1 - delta - pi(n-1)))``.
    """
    out = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        prev = out[n - 1]
        if prev + delta >= 1:
            out[n] = 1.0
            continue
        out[n] = min(1.0, math.exp(eps) * prev + delta,
                     1 - math.exp(-eps) * (1 - delta - prev))
    return out


def check_no_optimal_precondition(budget: RenyiBudget) -> bool:
    """True iff ``pi_star(2) > 3 * pi_star(1)``.

    Under this condition no optimal selection mechanism exists once users may
    contribute to two partitions.
    """
    t = pi_star(2, budget)
    return bool(t[2] > 3 * t[1])


def saturating_epsilon(n_d: int, delta: float, alpha: float, tol: float = 1e-12) -> float:
    """Smallest ``eps`` for which ``pi_star`` reaches 1 by count ``n_d``.

    Bisection on ``eps``; the returned value is the upper end of the final
    bracket, so ``pi_star(n_d) == 1`` holds at it.
    """
    if n_d < 1:
        raise ValueError("n_d must be >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")

    def saturates(e):
        vals = [0.0]
        for _ in range(n_d):
            vals.append(step_l(vals[-1], e, delta, alpha))
            if vals[-1] >= 1.0:
                return True
        return False

    if saturates(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while not saturates(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if saturates(mid):
            hi = mid
        else:
            lo = mid
    return hi
