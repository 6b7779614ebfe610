"""Additive-noise partition selection.

A mechanism adds integer noise ``Z ~ P`` (support at most ``tau``) to the count
and keeps the partition when ``n + Z > tau``. Its privacy is the larger of the
two directed approximate Rényi divergences between ``P`` and ``P`` shifted by
one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import logsumexp

from .divergence import (DiscreteDistribution, RenyiBudget, _check_alpha, _check_delta,
                         approx_renyi_divergence)
from .primitive import PrimitiveTable, pi_star, saturating_epsilon

GAP_TOL = 1e-6


@dataclass(frozen=True)
class AdditiveMechanism:
    noise: DiscreteDistribution
    tau: int

    def __post_init__(self):
        if self.noise.max_point > self.tau:
            raise ValueError("noise support must not exceed the threshold tau")


def primitive_of_additive(mech: AdditiveMechanism, n_max: int) -> PrimitiveTable:
    """``probs[n] = P(n + Z > tau)`` for ``n = 0..n_max``."""
    pmf, off = mech.noise.pmf, mech.noise.offset
    # suffix sums: tail[i] = P(Z >= off + i)
    tail = np.concatenate([np.cumsum(pmf[::-1])[::-1], [0.0]])
    n = np.arange(n_max + 1)
    idx = np.clip(mech.tau - n + 1 - off, 0, pmf.size)
    probs = np.minimum(tail[idx], 1.0)
    probs[0] = 0.0
    sat = np.flatnonzero(idx == 0)
    return PrimitiveTable(probs, None, int(sat[0]) if sat.size else None)


def additive_privacy(noise: DiscreteDistribution, delta: float, alpha: float) -> float:
    """``max(D(P+ || P), D(P || P+))`` at the given ``delta`` and order."""
    _check_alpha(alpha)
    _check_delta(delta)
    shifted = noise.shifted(1)
    return max(approx_renyi_divergence(shifted, noise, delta, alpha),
               approx_renyi_divergence(noise, shifted, delta, alpha))


def pi_to_additive(table: PrimitiveTable) -> AdditiveMechanism:
    """Noise whose additive mechanism reproduces a saturating table.

    With ``n_d`` the saturation count, ``P(x) = pi(n_d - x) - pi(n_d - 1 - x)``
    on ``{0, ..., n_d - 1}`` and ``tau = n_d - 1``.
    """
    nd = table.saturation_index
    if nd is None:
        raise ValueError("table never reaches 1; no bounded noise reproduces it")
    pi = np.asarray(table.probs[:nd + 1], dtype=float)
    x = np.arange(nd)
    pmf = pi[nd - x] - pi[nd - 1 - x]
    if np.any(pmf < 0):
        raise ValueError("table is not monotone")
    return AdditiveMechanism(DiscreteDistribution(0, pmf), nd - 1)


# ---------------------------------------------------------------------------
# optimal bounded noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimalNoise:
    """Solver output. ``gap`` is the relative duality gap of ``exp((alpha-1) eps)``."""

    noise: DiscreteDistribution
    epsilon: float
    gap: float
    alpha: float
    delta: float

    @property
    def converged(self) -> bool:
        return self.gap <= GAP_TOL

    @property
    def mechanism(self) -> AdditiveMechanism:
        return AdditiveMechanism(self.noise, self.noise.max_point)


class _Layout:
    """Index bookkeeping for symmetric noise on ``{0..n-1}`` with pinned ends."""

    def __init__(self, n):
        self.n = n
        self.half = np.arange(1, (n - 1) // 2 + 1)  # free orbit representatives
        self.orbit = np.minimum(np.arange(n), n - 1 - np.arange(n))
        self.size = np.where(self.half == n - 1 - self.half, 1, 2)

    def full(self, log_half, log_end):
        lp = np.empty(self.n)
        lp[self.orbit == 0] = log_end
        for j, v in zip(self.half, log_half):
            lp[self.orbit == j] = v
        return lp


def _log_objective(lp, alpha):
    """log sum_{x=1}^{n-1} P(x)^alpha P(x-1)^(1-alpha) and its gradient in log P."""
    terms = alpha * lp[1:] + (1 - alpha) * lp[:-1]
    val = logsumexp(terms)
    s = np.exp(terms - val)
    grad = np.zeros_like(lp)
    grad[1:] += alpha * s
    grad[:-1] += (1 - alpha) * s
    return val, grad


def _certificate(y, alpha, delta, layout):
    """Relative gap ``1 - LB / f(y)`` for the symmetric program at ``y``.

    ``y`` holds ``y_1..y_{n-1}``. By convexity and degree-one homogeneity of
    ``f(y) = sum y_x^alpha y_{n-x}^(1-alpha)``, ``f* >= min_{y'} g . y'`` over
    the feasible set with ``g = grad log f``. That LP has the one-dimensional
    concave dual ``nu - max_O sum_{x in O} (nu - g_x)_+ / ((1-delta) |O|)``
    over orbits ``O = {j, n-1-j}``; any ``nu`` gives a valid bound and golden
    section finds the best one.
    """
    n = layout.n
    ly = np.log(y)
    terms = alpha * ly + (1 - alpha) * ly[::-1]  # reversed index is y_{n-x}
    logf = logsumexp(terms)
    s = np.exp(terms - logf)
    g = (alpha * s + (1 - alpha) * s[::-1]) / y
    orbit = layout.orbit[1:]
    osize = np.where(np.arange(n) == n - 1 - np.arange(n), 1.0, 2.0)

    def dual(nu):
        load = np.bincount(orbit, weights=np.maximum(nu - g, 0.0), minlength=n) / osize
        return nu - load.max() / (1 - delta)

    lo = float(g.min())
    span = max(float(g.max()) - lo, 1.0)
    hi = lo + span
    while dual(hi) >= dual(0.5 * (lo + hi)):
        span *= 2
        hi = lo + span
    best = max(dual(lo), dual(hi))
    r = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - r * (b - a), a + r * (b - a)
    fc, fd = dual(c), dual(d)
    for _ in range(300):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - r * (b - a)
            fc = dual(c)
        else:
            a, c, fc = c, d, fd
            d = a + r * (b - a)
            fd = dual(d)
        if b - a <= 4 * np.spacing(max(abs(a), abs(b))):
            break
    best = max(best, fc, fd)
    return max(0.0, 1.0 - best), logf


def _solve_symmetric(n, delta, alpha, theta0, layout):
    """Minimise the log objective over the free half, ends pinned at ``delta``.

    ``theta`` are softmax logits of the orbit masses. L-BFGS gets close and
    Newton with the exact Hessian polishes to full precision, which the
    linear-space certificate needs.
    """
    log_end = math.log(delta)
    base = math.log1p(-2 * delta) - np.log(layout.size)
    S = (layout.orbit[:, None] == layout.half[None, :]).astype(float)
    B = np.zeros((n - 1, n))
    B[np.arange(n - 1), np.arange(1, n)] = alpha
    B[np.arange(n - 1), np.arange(n - 1)] = 1 - alpha

    def unpack(theta):
        lw = theta - logsumexp(theta)
        lp = S @ (base + lw)
        lp[layout.orbit == 0] = log_end
        return lp, np.exp(lw)

    def fun(theta, hess=False):
        lp, w = unpack(theta)
        t = B @ lp
        val = logsumexp(t)
        sm = np.exp(t - val)
        a = S.T @ (B.T @ sm)
        grad = a - w * a.sum()
        if not hess:
            return val, grad
        BS = B @ S
        h_lw = BS.T @ (sm[:, None] * BS) - np.outer(BS.T @ sm, BS.T @ sm)
        J = np.eye(w.size) - w[None, :]
        h = J.T @ h_lw @ J - a.sum() * (np.diag(w) - np.outer(w, w))
        return val, grad, h

    res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 20000, "maxcor": 30, "ftol": 1e-16, "gtol": 1e-12})
    theta = res.x - res.x[-1]
    free = slice(0, theta.size - 1)  # last logit pinned to remove the shift invariance
    val, grad, h = fun(theta, hess=True)
    for _ in range(100):
        g = grad[free]
        if g.size == 0 or np.max(np.abs(g)) <= 1e-15:
            break
        try:
            step = -np.linalg.solve(h[free, free], g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(h[free, free], g, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            cand = theta.copy()
            cand[free] += t * step
            v2, g2, h2 = fun(cand, hess=True)
            if v2 <= val + 1e-4 * t * (g @ step) or np.max(np.abs(g2[free])) < np.max(np.abs(g)):
                break
            t *= 0.5
        else:
            break
        theta, val, grad, h = cand, v2, g2, h2
    lp, _ = unpack(theta)
    return theta, lp


def optimal_additive(n_d: int, delta: float, alpha: float, seed: int = 0) -> OptimalNoise:
    """Symmetric noise on ``{0..n_d-1}`` minimising the additive mechanism's epsilon.

    The outer ends are pinned at ``delta`` (exactly the mass that can be
    clipped) and the interior is optimised in log-probabilities from three
    starts: uniform, truncated discrete Laplace and random. Each candidate is
    certified by the relative duality gap of the convex program in linear
    space and ``epsilon`` is taken from the best certified primal value.
    """
    if n_d < 2:
        raise ValueError("n_d must be >= 2")
    _check_alpha(alpha)
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    if delta * n_d >= 1:
        return OptimalNoise(DiscreteDistribution(0, np.full(n_d, 1.0 / n_d)), 0.0, 0.0, alpha, delta)
    if n_d == 2:
        # both points are ends; only feasible when 2 delta >= 1
        raise ValueError("n_d = 2 requires delta >= 1/2")

    layout = _Layout(n_d)
    k = layout.half.size
    lap, _ = truncated_discrete_laplace(n_d, delta, _quiet=True)
    starts = [np.zeros(k),
              np.log(lap.pmf[layout.half] * layout.size),
              np.random.default_rng(seed).normal(0, 1, k)]
    best = None
    for th in starts:
        theta, lp = _solve_symmetric(n_d, delta, alpha, th, layout)
        pmf = np.exp(lp)
        pmf /= math.fsum(pmf)
        y = pmf[1:] / (1 - delta)
        gap, logf = _certificate(y, alpha, delta, layout)
        cand = (logf, gap, pmf)
        if best is None or (gap <= GAP_TOL, -logf) > (best[1] <= GAP_TOL, -best[0]):
            best = cand
    logf, gap, pmf = best
    return OptimalNoise(DiscreteDistribution(0, pmf), logf / (alpha - 1), gap, alpha, delta)


# ---------------------------------------------------------------------------
# closed-form and baseline noise
# ---------------------------------------------------------------------------

def truncated_discrete_laplace(n_d: int, delta: float, _quiet: bool = False):
    """Tight ``(eps*, delta)``-DP truncated discrete Laplace on ``{0..n_d-1}``.

    ``P(x) = delta * exp(eps* (mu - |x - mu|))`` with ``mu = (n_d - 1)/2`` and
    ``eps*`` the root of ``delta * sum_x exp(eps (mu - |x - mu|)) = 1``.
    Even ``n_d`` uses a half-integer centre; the construction is exposed but
    its optimality is only established for odd ``n_d``.
    """
    if n_d < 2:
        raise ValueError("n_d must be >= 2")
    if not 0 < delta <= 1 / n_d:
        raise ValueError("delta must be in (0, 1/n_d]")
    if n_d % 2 == 0 and not _quiet:
        warnings.warn("even n_d: not covered by the optimality proof", stacklevel=2)
    mu = (n_d - 1) / 2
    h = mu - np.abs(np.arange(n_d) - mu)

    def log_z(e):
        return math.log(delta) + logsumexp(e * h)

    if log_z(0.0) >= 0:
        eps = 0.0
    else:
        if h.max() == 0:
            raise ValueError("n_d = 2 requires delta = 1/2")
        eps = brentq(log_z, 0.0, math.log(1 / delta) / h.max(), xtol=1e-15, rtol=4 * np.finfo(float).eps)
    pmf = np.exp(math.log(delta) + eps * h)
    pmf /= math.fsum(pmf)
    return DiscreteDistribution(0, pmf), eps


def bounded_baseline(kind: str, half_width: int, delta: float) -> DiscreteDistribution:
    """Truncated discrete Laplace or Gaussian on ``{-w..w}`` with end masses ``delta``."""
    if half_width < 1:
        raise ValueError("half_width must be >= 1")
    if not 0 < delta < 1 / (2 * half_width + 1):
        raise ValueError("delta must be in (0, 1/(2 half_width + 1))")
    x = np.arange(-half_width, half_width + 1)
    if kind == "laplace":
        shape = lambda b: -b * np.abs(x)
    elif kind == "gaussian":
        shape = lambda b: -b * x.astype(float) ** 2
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")

    def end_gap(log_b):
        s = shape(math.exp(log_b))
        return s[0] - logsumexp(s) - math.log(delta)

    lo, hi = -60.0, 5.0
    while end_gap(hi) > 0:
        hi += 5.0
    log_b = brentq(end_gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    s = shape(math.exp(log_b))
    pmf = np.exp(s - logsumexp(s))
    return DiscreteDistribution(-half_width, pmf)


# ---------------------------------------------------------------------------
# figure data
# ---------------------------------------------------------------------------

def noise_rows(n_d: int, delta: float, alphas: Iterable[float]):
    """Rows ``(alpha, x, P(x), epsilon, gap)`` of optimal noise per order."""
    for a in alphas:
        sol = optimal_additive(n_d, delta, a)
        for x, m in zip(sol.noise.support, sol.noise.pmf):
            yield a, int(x), float(m), sol.epsilon, sol.gap


@dataclass(frozen=True)
class PrivacyComparison:
    alpha: float
    eps_pistar: float
    eps_opt_additive: float
    eps_pi: float
    eps_trunc_laplace: float
    eps_trunc_gauss: float
    gap: float


def compare_privacy(n_d: int, delta: float, alpha: float) -> PrivacyComparison:
    """Epsilon of each mechanism constrained to release at count ``n_d`` surely."""
    e_star = saturating_epsilon(n_d, delta, alpha)
    table = pi_star(n_d, RenyiBudget(delta, alpha, e_star))
    e_pi = additive_privacy(pi_to_additive(table).noise, delta, alpha)
    opt = optimal_additive(n_d, delta, alpha)
    lap, _ = truncated_discrete_laplace(n_d, delta, _quiet=True)
    w = (n_d - 1) // 2
    e_lap = additive_privacy(lap, delta, alpha)
    e_gauss = additive_privacy(bounded_baseline("gaussian", w, delta), delta, alpha) \
        if n_d % 2 else math.nan
    return PrivacyComparison(alpha, e_star, opt.epsilon, e_pi, e_lap, e_gauss, opt.gap)
