"""Composition of approximate-RDP budgets and conversion to (eps, delta)-DP."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .divergence import RenyiBudget


class InfeasibleBudget(ValueError):
    """No RDP budget at the requested order reaches the DP target."""


@dataclass(frozen=True)
class DpBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must be in [0, 1]")


def compose(budgets: Iterable[RenyiBudget]) -> RenyiBudget:
    """Sequential composition at a common order.

    Epsilons add and deltas combine as ``1 - prod(1 - delta_i)``. See
    :func:`union_delta` for the looser additive form.
    """
    budgets = _same_order(budgets)
    eps = math.fsum(b.epsilon for b in budgets)
    delta = -math.expm1(math.fsum(math.log1p(-b.delta) for b in budgets))
    return RenyiBudget(delta, budgets[0].alpha, eps)


def union_delta(budgets: Iterable[RenyiBudget]) -> float:
    """Union-bound composition of deltas, ``sum(delta_i)`` (may exceed 1)."""
    return math.fsum(b.delta for b in _same_order(budgets))


def _same_order(budgets):
    budgets = list(budgets)
    if not budgets:
        raise ValueError("nothing to compose")
    if any(b.alpha != budgets[0].alpha for b in budgets):
        raise ValueError("all budgets must share the same order alpha")
    return budgets


def _log_conversion_term(alpha, eps_rdp, eps_dp):
    # log of exp((alpha-1)(eps_rdp - eps_dp)) / alpha * (1 - 1/alpha)^(alpha-1)
    return ((alpha - 1) * (eps_rdp - eps_dp) - math.log(alpha)
            + (alpha - 1) * math.log1p(-1 / alpha))


def rdp_to_dp(budget: RenyiBudget, eps_dp: float) -> float:
    """DP delta implied by an approximate-RDP budget at target ``eps_dp``.

    ``delta_dp = delta + exp((alpha-1)(eps - eps_dp)) / alpha * (1-1/alpha)^(alpha-1)``,
    capped at 1.
    """
    if eps_dp < 0:
        raise ValueError("eps_dp must be >= 0")
    t = _log_conversion_term(budget.alpha, budget.epsilon, eps_dp)
    if t >= 0:
        return 1.0
    return min(1.0, budget.delta + math.exp(t))


def calibrate_rdp_epsilon(alpha: float, target: DpBudget, delta_split: float = 0.5) -> RenyiBudget:
    """Largest RDP epsilon at order ``alpha`` meeting a DP target.

    A fraction ``delta_split`` of the target delta goes to the approximate-RDP
    delta and the rest to the conversion term, which is then inverted in
    closed form.
    """
    if not 0 <= delta_split < 1:
        raise ValueError("delta_split must be in [0, 1)")
    if alpha <= 1:
        raise ValueError("alpha must be > 1")
    rest = target.delta * (1 - delta_split)
    if rest <= 0:
        raise InfeasibleBudget("conversion term needs a positive share of delta")
    eps = target.epsilon + (math.log(rest) + math.log(alpha)
                            - (alpha - 1) * math.log1p(-1 / alpha)) / (alpha - 1)
    if eps < 0:
        raise InfeasibleBudget(
            f"target ({target.epsilon}, {target.delta}) unreachable at alpha={alpha}")
    return RenyiBudget(target.delta * delta_split, alpha, eps)
