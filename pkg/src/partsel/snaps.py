"""Weighted partition selection (SNAPS).

A partition with total weight ``y`` is released with probability
``phi(y) = psi(floor(y / delta_disc))``. The discrete table ``psi`` follows the
recursion

    psi(n) = min_{1 <= i <= min(n, N)} L(psi(n - i), eps_i, delta_i),
    eps_i = eps0 + eps1 * (delta_disc * (i - 1)) ** r   (same for delta_i)

with ``L`` the step map of the unweighted primitive and
``N = ceil(delta_cap / delta_disc)``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np

from .accounting import DpBudget, calibrate_rdp_epsilon, rdp_to_dp
from .divergence import RenyiBudget, _check_alpha
from .primitive import PrimitiveTable, step_l


class TableRangeError(IndexError):
    """A weight falls beyond a table that has not saturated."""


class NonMonotoneTable(ArithmeticError):
    pass


@dataclass(frozen=True)
class SnapsParams:
    eps0: float
    delta0: float
    eps1: float
    delta1: float
    r: float = 2.0
    delta_disc: float = 5e-4
    delta_cap: float = 1.0
    alpha: float = 18.5

    def __post_init__(self):
        for name in ("eps0", "delta0", "eps1", "delta1"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.r >= 1:
            raise ValueError("r must be >= 1")
        if not (self.delta_disc > 0 and self.delta_cap > 0):
            raise ValueError("delta_disc and delta_cap must be > 0")
        _check_alpha(self.alpha)
        top = self.delta0 + self.delta1 * self.delta_cap ** self.r
        if top >= 1:
            raise ValueError("per-step delta reaches 1 within the weight cap")

    @property
    def n_disc(self) -> int:
        # guard against 1/5e-4 landing a hair above an integer
        return max(1, math.ceil(self.delta_cap / self.delta_disc - 1e-9))

    def step_budgets(self):
        """Arrays ``(eps_i, delta_i)`` for jumps ``i = 1..n_disc``."""
        span = (self.delta_disc * np.arange(self.n_disc)) ** self.r
        return self.eps0 + self.eps1 * span, self.delta0 + self.delta1 * span

    @classmethod
    def for_target(cls, target: DpBudget, l0: int, lr: float = 1.0, *,
                   alpha: float = 18.5, eps0_frac: float = 1e-5,
                   delta0_frac: float = 5e-5, r: float = 2.0,
                   delta_disc: float = 5e-4, delta_cap: float = 1.0,
                   delta_split: float = 0.5) -> "SnapsParams":
        """Split a calibrated RDP budget between the per-partition and per-weight rates.

        The RDP budget meeting ``target`` at order ``alpha`` is found first.
        ``eps0`` and ``delta0`` are the given fractions of it and
        ``eps1, delta1`` take what is left after ``l0`` partitions pay the
        base rate.
        """
        rdp = calibrate_rdp_epsilon(alpha, target, delta_split)
        eps0 = eps0_frac * rdp.epsilon
        delta0 = delta0_frac * rdp.delta
        eps1 = (rdp.epsilon - l0 * eps0) / lr ** r
        delta1 = (rdp.delta - l0 * delta0) / lr ** r
        if eps1 < 0 or delta1 < 0:
            raise ValueError("base rates exceed the budget for this many partitions")
        return cls(eps0, delta0, eps1, delta1, r, delta_disc, delta_cap, alpha)


@dataclass(frozen=True)
class SensitivityBound:
    l0: int
    lr: float
    linf: Optional[float] = None

    def __post_init__(self):
        if self.l0 < 1:
            raise ValueError("l0 must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.linf is not None and not self.linf > 0:
            raise ValueError("linf must be > 0")

    def check_norm(self, r: float) -> None:
        """An L_r bound cannot exceed what ``l0`` entries of size ``linf`` allow."""
        if self.linf is not None and self.lr > self.l0 ** (1 / r) * self.linf * (1 + 1e-12):
            raise ValueError(f"lr={self.lr} exceeds l0^(1/r) * linf = {self.l0 ** (1 / r) * self.linf}")


_TABLES: dict = {}
_TABLES_LOCK = threading.Lock()


def psi_table(params: SnapsParams, n_max: int) -> PrimitiveTable:
    """Discrete SNAPS table on ``0..n_max``.

    Each row evaluates the step map for every admissible jump at once and
    keeps the minimum. Rows are cached per parameter set and extended on
    demand; computation stops once the table reaches 1. Raises
    :class:`NonMonotoneTable` if a row decreases.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    with _TABLES_LOCK:
        psi = _TABLES.get(params, [0.0])
        if len(psi) <= n_max and psi[-1] < 1.0:
            psi = _extend(params, psi, n_max)
            _TABLES[params] = psi
    vals = np.ones(n_max + 1)
    m = min(len(psi), n_max + 1)
    vals[:m] = psi[:m]
    sat = len(psi) - 1 if psi[-1] >= 1.0 and len(psi) - 1 <= n_max else None
    return PrimitiveTable(vals, None, sat)


def _extend(params, psi, n_max):
    eps_i, delta_i = params.step_budgets()
    nd = params.n_disc
    out = np.empty(n_max + 1)
    out[:len(psi)] = psi
    for n in range(len(psi), n_max + 1):
        k = min(n, nd)
        prev = out[n - k:n][::-1]  # psi(n - i) for i = 1..k
        cand = step_l(prev, eps_i[:k], delta_i[:k], params.alpha)
        out[n] = cand.min()
        if out[n] < out[n - 1]:
            raise NonMonotoneTable(f"psi decreases at n={n}")
        if out[n] >= 1.0:
            return list(out[:n + 1])
    return list(out)


def phi(params: SnapsParams, table: PrimitiveTable, y):
    """Release probability ``psi(floor(y / delta_disc))``; vectorised over ``y``."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(~np.isfinite(y)):
        raise ValueError("weights must be finite and >= 0")
    d = params.delta_disc
    idx = np.floor(y / d).astype(np.int64)
    # the division can round across an integer; settle against k * d
    idx = idx + ((idx + 1) * d <= y) - (idx * d > y)
    top = table.n_max
    if np.any(idx > top):
        if table.saturation_index is None:
            raise TableRangeError(f"weight index {idx.max()} beyond table range {top}; extend the table")
        idx = np.minimum(idx, top)
    out = table.probs[idx]
    return float(out) if out.ndim == 0 else out


def snaps_budget(params: SnapsParams, bound: SensitivityBound) -> RenyiBudget:
    """RDP guarantee of releasing every partition through ``phi``.

    ``(l0 * delta0 + delta1 * lr^r, alpha, l0 * eps0 + eps1 * lr^r)``.
    """
    bound.check_norm(params.r)
    d = bound.l0 * params.delta0 + params.delta1 * bound.lr ** params.r
    e = bound.l0 * params.eps0 + params.eps1 * bound.lr ** params.r
    return RenyiBudget(d, params.alpha, e)


def certify(params: SnapsParams, bound: SensitivityBound, target: DpBudget,
            rel_tol: float = 1e-9) -> DpBudget:
    """DP guarantee at ``target.epsilon``; raises if it misses ``target.delta``."""
    achieved = rdp_to_dp(snaps_budget(params, bound), target.epsilon)
    if achieved > target.delta * (1 + rel_tol):
        raise ValueError(
            f"parameters give ({target.epsilon}, {achieved:.6g})-DP, "
            f"weaker than the target delta {target.delta}")
    return DpBudget(target.epsilon, min(achieved, 1.0))


def table_for_weights(params: SnapsParams, max_weight: float) -> PrimitiveTable:
    """Table long enough to cover weights up to ``max_weight``."""
    return psi_table(params, int(math.floor(max_weight / params.delta_disc)) + 1)


def snaps_select(weights: Mapping, params: SnapsParams, seed=None,
                 table: Optional[PrimitiveTable] = None) -> set:
    """Keep each item independently with probability ``phi(weight)``.

    Items are visited in the mapping's iteration order, one uniform draw each.
    """
    if not weights:
        return set()
    items = list(weights)
    w = np.array([weights[k] for k in items], dtype=float)
    if table is None:
        table = table_for_weights(params, float(w.max()))
    probs = phi(params, table, w)
    rng = np.random.default_rng(seed)
    keep = rng.random(len(items)) < probs
    return {k for k, flag in zip(items, keep) if flag}


def expected_size(weights: Iterable[float], params: SnapsParams, table: PrimitiveTable) -> float:
    return math.fsum(np.atleast_1d(phi(params, table, np.fromiter(weights, float))))


def table_rows(params: SnapsParams, table: PrimitiveTable):
    """Rows ``(n, n * delta_disc, psi(n))`` for export."""
    for n, p in enumerate(table.probs):
        yield n, n * params.delta_disc, float(p)
