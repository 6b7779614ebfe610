"""Rényi, approximate Rényi and hockey-stick divergences on finite supports.

Every divergence is in nats. The approximate divergence is computed by the
water-filling construction: clip the likelihood ratio of ``P`` from above
until ``delta`` mass is gone, then clip ``Q`` against the clipped ``P`` from
below. The clipped pair does not depend on the Rényi order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp

SUM_TOL = 1e-12
CLIP_SUM_TOL = 1e-10
KKT_TOL = 1e-8


class DivergenceIsZero(ValueError):
    """Raised by :func:`compute_cutoff` when TV(A, B) <= delta."""


class InfiniteDivergence(ValueError):
    """Raised when more than ``delta`` mass sits where the reference is zero."""


def _check_alpha(alpha: float) -> None:
    if not alpha > 1:
        raise ValueError(f"alpha must be > 1, got {alpha}")


def _check_delta(delta: float) -> None:
    if not 0 <= delta < 1:
        raise ValueError(f"delta must be in [0, 1), got {delta}")


@dataclass(frozen=True)
class RenyiBudget:
    """A ``(delta, alpha, epsilon)`` approximate-RDP guarantee."""

    delta: float
    alpha: float
    epsilon: float

    def __post_init__(self):
        _check_delta(self.delta)
        _check_alpha(self.alpha)
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability masses on the consecutive integers ``offset, offset+1, ...``.

    Construction trims zero masses at both ends, so ``pmf[0]`` and
    ``pmf[-1]`` are always positive.
    """

    offset: int
    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float).ravel()
        if pmf.size == 0 or np.any(~np.isfinite(pmf)) or np.any(pmf < 0):
            raise ValueError("pmf must be a non-empty vector of non-negative reals")
        total = math.fsum(pmf)
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"pmf sums to {total!r}, not 1")
        nz = np.flatnonzero(pmf)
        lo, hi = nz[0], nz[-1]
        pmf = pmf[lo:hi + 1].copy()
        pmf.setflags(write=False)
        object.__setattr__(self, "offset", int(self.offset) + int(lo))
        object.__setattr__(self, "pmf", pmf)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.pmf.size)

    @property
    def max_point(self) -> int:
        return self.offset + self.pmf.size - 1

    def shifted(self, k: int = 1) -> "DiscreteDistribution":
        return DiscreteDistribution(self.offset + k, self.pmf)

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return self.offset == other.offset and np.array_equal(self.pmf, other.pmf)

    def __hash__(self):
        return hash((self.offset, self.pmf.tobytes()))


Distribution = Union[DiscreteDistribution, Sequence[float], np.ndarray]


def align(p: DiscreteDistribution, q: DiscreteDistribution):
    """Return ``(offset, a, b)`` with both mass vectors on the union support."""
    lo = min(p.offset, q.offset)
    hi = max(p.max_point, q.max_point)
    a = np.zeros(hi - lo + 1)
    b = np.zeros(hi - lo + 1)
    a[p.offset - lo:p.offset - lo + p.pmf.size] = p.pmf
    b[q.offset - lo:q.offset - lo + q.pmf.size] = q.pmf
    return lo, a, b


def _as_arrays(p: Distribution, q: Distribution):
    if isinstance(p, DiscreteDistribution) and isinstance(q, DiscreteDistribution):
        _, a, b = align(p, q)
        return a, b
    if isinstance(p, DiscreteDistribution) or isinstance(q, DiscreteDistribution):
        raise TypeError("pass two DiscreteDistributions or two aligned arrays")
    a = np.asarray(p, dtype=float).ravel()
    b = np.asarray(q, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("mass vectors are not aligned")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("masses must be non-negative")
    return a, b


# ---------------------------------------------------------------------------
# Bernoulli kernels
# ---------------------------------------------------------------------------

def _xlogy_terms(u, v, alpha):
    """Log of ``u**alpha * v**(1-alpha)`` with 0*anything = 0 and u/0 = inf."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = alpha * np.log(u) + (1 - alpha) * np.log(v)
    t = np.where(u == 0, -np.inf, t)
    t = np.where((u > 0) & (v == 0), np.inf, t)
    return t


def renyi_bernoulli(p, q, alpha: float):
    """Rényi divergence of order ``alpha`` between Ber(p) and Ber(q).

    Broadcasts over array inputs. Returns ``inf`` when Ber(p) is not
    absolutely continuous with respect to Ber(q).
    """
    _check_alpha(alpha)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((p < 0) | (p > 1) | (q < 0) | (q > 1)) or np.any(np.isnan(p) | np.isnan(q)):
        raise ValueError("Bernoulli parameters must lie in [0, 1]")
    t1 = _xlogy_terms(p, q, alpha)
    t2 = _xlogy_terms(1 - p, 1 - q, alpha)
    out = np.logaddexp(t1, t2) / (alpha - 1)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def approx_renyi_bernoulli(p, q, delta, alpha: float):
    """Approximate Rényi divergence between Ber(p) and Ber(q).

    Closed form: zero when ``|p - q| <= delta``, otherwise the exact
    divergence after moving ``delta`` mass of each side towards the other.
    ``delta`` broadcasts like ``p`` and ``q``.
    """
    _check_alpha(alpha)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any((delta < 0) | (delta >= 1)):
        raise ValueError("delta must be in [0, 1)")
    if np.any((p < 0) | (p > 1) | (q < 0) | (q > 1)):
        raise ValueError("Bernoulli parameters must lie in [0, 1]")
    p, q, delta = np.broadcast_arrays(p, q, delta)
    up = p > q + delta
    down = p < q - delta
    s = 1 - delta
    pp = np.where(up, (p - delta) / s, np.where(down, p / s, 0.5))
    qq = np.where(up, q / s, np.where(down, (q - delta) / s, 0.5))
    pp = np.clip(pp, 0.0, 1.0)
    qq = np.clip(qq, 0.0, 1.0)
    out = np.where(up | down, renyi_bernoulli(pp, qq, alpha), 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Water-filling
# ---------------------------------------------------------------------------

def _cutoff(a: np.ndarray, b: np.ndarray, delta: float):
    """Scan sorted ratios ``a/b`` and return ``lam`` with removed mass ``delta``.

    Returns ``inf`` when the mass of ``a`` on ``{b == 0}`` is at least
    ``delta``: no finite cutoff removes exactly ``delta`` in that case.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        r = a / b
    r = np.where(b == 0, np.where(a > 0, np.inf, 0.0), r)
    order = np.argsort(-r, kind="stable")
    ra = r[order]
    sa = np.cumsum(a[order])
    sb = np.cumsum(b[order])
    nxt = np.append(ra[1:], 0.0)
    with np.errstate(invalid="ignore"):
        removed = np.where(sb == 0, sa, sa - nxt * sb)
    removed = np.where(np.isinf(nxt) & (sb == 0), sa, removed)
    hit = np.flatnonzero(removed >= delta)
    k = hit[0]
    if sb[k] == 0:
        return math.inf
    return float((sa[k] - delta) / sb[k])


def compute_cutoff(a, b, delta: float) -> float:
    """Cutoff ``lam`` with ``sum(min(a, lam * b)) == 1 - delta``.

    ``a`` and ``b`` are aligned probability vectors. Ratios are sorted in
    descending order (ties by ascending index, ``b == 0`` first) and the
    prefix sums are scanned once, so the cost is O(n log n).

    Raises:
      DivergenceIsZero: if the total variation of ``a`` and ``b`` is at most
        ``delta``.
      InfiniteDivergence: if ``a`` puts more than ``delta`` mass where ``b``
        is zero.
    """
    _check_delta(delta)
    a, b = _as_arrays(a, b)
    if math.fsum(np.minimum(a, b)) >= 1 - delta:
        raise DivergenceIsZero("divergence is zero: total variation <= delta")
    lam = _cutoff(a, b, delta)
    if math.isinf(lam):
        if math.fsum(a[b == 0]) > delta + CLIP_SUM_TOL:
            raise InfiniteDivergence("more than delta mass where b == 0")
        # exactly delta on {b == 0}: any cutoff above the largest finite ratio works
        with np.errstate(divide="ignore", invalid="ignore"):
            finite = np.where(b > 0, a / b, 0.0)
        lam = float(finite.max()) if finite.size else 1.0
    return lam


@dataclass(frozen=True)
class ClippedPair:
    """Clipped masses ``p_tilde <= P``, ``q_tilde <= Q``, each summing to 1 - delta."""

    p_tilde: np.ndarray
    q_tilde: np.ndarray
    lambda_p: float
    lambda_q: float


def clip_pair(p: Distribution, q: Distribution, delta: float) -> ClippedPair:
    """Water-filling optimiser for the approximate Rényi divergence.

    Raises ``DivergenceIsZero`` / ``InfiniteDivergence`` as
    :func:`compute_cutoff` does.
    """
    a, b = _as_arrays(p, q)
    lam_p = compute_cutoff(a, b, delta)
    pt = np.minimum(a, lam_p * b)
    pt[b == 0] = 0.0
    # Q is clipped against the clipped P; here Q mass on {pt == 0} is free,
    # since those points contribute nothing to the objective.
    c = _cutoff(b, pt, delta)
    if math.isinf(c):
        qt = b.copy()
        free = pt == 0
        extra = math.fsum(b[free]) - delta
        qt[free] = b[free] * (extra / math.fsum(b[free]))
        lam_q = 0.0
    else:
        qt = np.minimum(b, c * pt)
        lam_q = 1.0 / c
    return ClippedPair(pt, qt, lam_p, lam_q)


def _renyi_from_masses(pt: np.ndarray, qt: np.ndarray, alpha: float, scale: float) -> float:
    mask = pt > 0
    if np.any(mask & (qt == 0)):
        return math.inf
    terms = alpha * np.log(pt[mask]) + (1 - alpha) * np.log(qt[mask])
    val = float(logsumexp(terms) - math.log(scale)) / (alpha - 1)
    return max(val, 0.0) if val > -1e-12 else val


def approx_renyi_divergence(p: Distribution, q: Distribution, delta: float, alpha: float,
                            return_pair: bool = False):
    """Approximate Rényi divergence ``D_alpha^delta(P || Q)``.

    With ``return_pair=True`` also returns the certifying
    :class:`ClippedPair`, or ``None`` when the divergence is zero or infinite.
    """
    _check_alpha(alpha)
    _check_delta(delta)
    try:
        pair = clip_pair(p, q, delta)
    except DivergenceIsZero:
        return (0.0, None) if return_pair else 0.0
    except InfiniteDivergence:
        return (math.inf, None) if return_pair else math.inf
    val = _renyi_from_masses(pair.p_tilde, pair.q_tilde, alpha, 1 - delta)
    if val < 0:
        raise ArithmeticError(f"negative divergence {val!r}")
    return (val, pair) if return_pair else val


def renyi_divergence(p: Distribution, q: Distribution, alpha: float) -> float:
    """Exact Rényi divergence of order ``alpha`` on a finite support."""
    _check_alpha(alpha)
    a, b = _as_arrays(p, q)
    return max(_renyi_from_masses(a, b, alpha, 1.0), 0.0)


@dataclass(frozen=True)
class KKTReport:
    ok: bool
    max_violation: float
    stationarity: float
    primal: float
    dual: float
    slackness: float

    def __bool__(self):
        return self.ok


def verify_kkt(p: Distribution, q: Distribution, pair: ClippedPair, alpha: float,
               delta: float, tol: float = KKT_TOL) -> KKTReport:
    """Check the KKT conditions of the clipped pair for the convex program.

    The multipliers are ``nu_P = alpha lam_P^(alpha-1)``,
    ``nu_Q = (1-alpha) lam_Q^alpha`` and the box multipliers derived from the
    pointwise ratio ``R = p_tilde / q_tilde``. Multipliers are reported
    divided by ``nu_P`` and ``(alpha-1) R^alpha`` so that the tolerance is
    scale-free for large ``alpha``.
    """
    a, b = _as_arrays(p, q)
    pt = np.asarray(pair.p_tilde, dtype=float)
    qt = np.asarray(pair.q_tilde, dtype=float)
    lp, lq = pair.lambda_p, pair.lambda_q

    primal = max(
        abs(math.fsum(pt) - (1 - delta)),
        abs(math.fsum(qt) - (1 - delta)),
        float(np.max(pt - a, initial=0.0)),
        float(np.max(qt - b, initial=0.0)),
        float(np.max(-pt, initial=0.0)),
        float(np.max(-qt, initial=0.0)),
    )
    if np.any((pt > 0) & (qt <= 0)):
        primal = max(primal, math.inf)

    live = (pt > 0) & (qt > 0)
    log_r = np.log(pt[live]) - np.log(qt[live])
    # mu_P / nu_P and mu_Q / ((alpha-1) R^alpha)
    mu_p = -np.expm1((alpha - 1) * (log_r - math.log(lp)))
    if lq > 0:
        mu_q = -np.expm1(alpha * (math.log(lq) - log_r))
    else:
        mu_q = np.ones_like(log_r)
    dual = float(np.max(np.concatenate([-mu_p, -mu_q]), initial=0.0))
    dual = max(dual, 0.0)

    # multipliers are defined so the gradient of the Lagrangian vanishes;
    # recompute it from scratch to catch inconsistent lambdas
    grad_p = np.exp((alpha - 1) * (log_r - math.log(lp))) - 1 + mu_p
    stationarity = float(np.max(np.abs(grad_p), initial=0.0))

    gap_p = (a - pt)[live]
    gap_q = (b - qt)[live]
    slack = np.concatenate([np.abs(mu_p * gap_p), np.abs(mu_q * gap_q)])
    slackness = float(np.max(slack, initial=0.0))
    # mass clipped away from points outside the live set must sit where the
    # other side is zero (forced) or be the free Q mass when lam_q == 0
    dead = ~live
    if np.any(dead & (pt < a) & (b > 0) & (qt > 0)):
        slackness = max(slackness, float(np.max((a - pt)[dead & (b > 0) & (qt > 0)])))

    worst = max(stationarity, primal, dual, slackness)
    return KKTReport(worst <= tol, worst, stationarity, primal, dual, slackness)


def hockey_stick(p: Distribution, q: Distribution, eps: float) -> float:
    """``sum_x max(P(x) - e^eps Q(x), 0)``."""
    if not eps >= 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    a, b = _as_arrays(p, q)
    return float(math.fsum(np.maximum(a - math.exp(eps) * b, 0.0)))


def total_variation(p: Distribution, q: Distribution) -> float:
    a, b = _as_arrays(p, q)
    return 0.5 * float(np.abs(a - b).sum())
