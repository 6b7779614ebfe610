"""Corpus ingestion, contribution bounding and weighted partition selection.

Each line of a corpus is one user's document and each distinct token is a
partition the user contributes to. After bounding, a user holding ``k`` items
gives each of them weight ``1/sqrt(k)`` so every user vector has unit L2 norm.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr, ndtr, ndtri

from .accounting import DpBudget
from .snaps import SensitivityBound, SnapsParams, certify, phi, table_for_weights


class EmptyCorpus(ValueError):
    pass


@dataclass
class WeightedDataset:
    users: List[frozenset]
    user_ids: List[str]
    kept: Optional[List[tuple]] = None
    aggregated: Dict[str, float] = field(default_factory=dict)

    def user_norms(self) -> np.ndarray:
        """L2 norm of each user's weighted contribution vector."""
        if self.kept is None:
            raise ValueError("dataset has not been bounded yet")
        return np.array([math.sqrt(math.fsum([1 / len(k)] * len(k))) if k else 0.0
                         for k in self.kept])


def ingest(path, user_column: bool = False) -> WeightedDataset:
    """Read a line-delimited corpus; tokens are whitespace-separated.

    With ``user_column`` each line is ``user_id<TAB>text`` and documents of
    the same user are merged. Blank documents give users with no items.
    """
    text = Path(path).read_text(encoding="utf-8")
    merged: Dict[str, set] = {}
    order: List[str] = []
    for i, line in enumerate(text.splitlines()):
        if user_column:
            uid, _, doc = line.partition("\t")
        else:
            uid, doc = str(i), line
        if uid not in merged:
            merged[uid] = set()
            order.append(uid)
        merged[uid].update(doc.split())
    if not any(merged.values()):
        raise EmptyCorpus(f"no tokens in {path}")
    return WeightedDataset([frozenset(merged[u]) for u in order], order)


def bound_and_weight(ds: WeightedDataset, l0: int, seed: int = 0, mode: str = "sample") -> WeightedDataset:
    """Cap each user at ``l0`` items and aggregate ``1/sqrt(kept)`` weights.

    ``mode='sample'`` keeps a uniform subset drawn from a generator keyed on
    ``(seed, user index)``, so the result does not depend on processing
    order; ``mode='first'`` keeps the ``l0`` smallest items.
    """
    if l0 < 1:
        raise ValueError("l0 must be >= 1")
    if mode not in ("sample", "first"):
        raise ValueError(f"unknown bounding mode {mode!r}")
    kept = []
    contrib = defaultdict(list)
    for idx, items in enumerate(ds.users):
        ordered = sorted(items)
        if len(ordered) > l0:
            if mode == "sample":
                rng = np.random.default_rng([seed, idx])
                pick = np.sort(rng.choice(len(ordered), size=l0, replace=False))
                ordered = [ordered[j] for j in pick]
            else:
                ordered = ordered[:l0]
        kept.append(tuple(ordered))
        if ordered:
            w = 1 / math.sqrt(len(ordered))
            for item in ordered:
                contrib[item].append(w)
    agg = {item: math.fsum(contrib[item]) for item in sorted(contrib)}
    return WeightedDataset(ds.users, ds.user_ids, kept, agg)


def zipf_corpus(n_users: int, vocab: int = 5000, mean_len: float = 20.0,
                exponent: float = 1.1, seed: int = 0) -> List[str]:
    """Synthetic documents with Zipf-distributed token frequencies."""
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, vocab + 1)
    p = ranks ** -exponent
    p /= p.sum()
    lengths = 1 + rng.poisson(mean_len - 1, size=n_users)
    lines = []
    for n in lengths:
        toks = rng.choice(vocab, size=n, p=p)
        lines.append(" ".join(f"t{t}" for t in toks))
    return lines


# ---------------------------------------------------------------------------
# Gaussian thresholding baseline
# ---------------------------------------------------------------------------

def gaussian_delta(eps: float, sigma: float) -> float:
    """Exact delta of the Gaussian mechanism with L2 sensitivity 1."""
    a = 1 / (2 * sigma)
    b = eps * sigma
    return float(ndtr(a - b) - math.exp(eps + log_ndtr(-a - b)))


def calibrate_sigma(eps: float, delta: float) -> float:
    """Smallest noise scale with ``gaussian_delta(eps, sigma) <= delta``."""
    if not (eps >= 0 and 0 < delta < 1):
        raise ValueError("need eps >= 0 and delta in (0, 1)")
    f = lambda ls: gaussian_delta(eps, math.exp(ls)) - delta
    lo, hi = -10.0, 10.0
    while f(hi) > 0:
        hi += 10.0
    return math.exp(brentq(f, lo, hi, xtol=1e-14))


@dataclass(frozen=True)
class GaussianBaseline:
    sigma: float
    tau: float
    l0: int

    @classmethod
    def calibrate(cls, target: DpBudget, l0: int) -> "GaussianBaseline":
        """Half of delta to the noise, half to the threshold."""
        half = target.delta / 2
        sigma = calibrate_sigma(target.epsilon, half)
        k = np.arange(1, l0 + 1)
        # Phi^-1((1 - half)^(1/k)) written as -Phi^-1(1 - (1 - half)^(1/k))
        u = -np.expm1(np.log1p(-half) / k)
        tau = float(np.max(1 / np.sqrt(k) - sigma * ndtri(u)))
        return cls(sigma, tau, l0)

    def release_probability(self, w):
        out = ndtr((np.asarray(w, dtype=float) - self.tau) / self.sigma)
        return float(out) if np.ndim(out) == 0 else out


def gaussian_select(ds: WeightedDataset, target: DpBudget, l0: int, seed=None) -> set:
    """Keep items whose noisy aggregated weight exceeds the threshold."""
    base = GaussianBaseline.calibrate(target, l0)
    items = sorted(ds.aggregated)
    if not items:
        return set()
    w = np.array([ds.aggregated[k] for k in items])
    noisy = w + base.sigma * np.random.default_rng(seed).standard_normal(len(items))
    return {k for k, v in zip(items, noisy) if v > base.tau}


# ---------------------------------------------------------------------------
# SNAPS selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Selection:
    items: frozenset
    guarantee: DpBudget
    expected_size: float


def snaps_select_pipeline(ds: WeightedDataset, target: DpBudget, params: SnapsParams,
                          l0: int, seed=None) -> Selection:
    """Release each item with probability ``phi(weight)`` after certifying the budget.

    Raises ``ValueError`` when ``params`` with L0 bound ``l0`` and unit L2
    bound do not meet ``target``.
    """
    guarantee = certify(params, SensitivityBound(l0, 1.0), target)
    items = sorted(ds.aggregated)
    if not items:
        return Selection(frozenset(), guarantee, 0.0)
    w = np.array([ds.aggregated[k] for k in items])
    table = table_for_weights(params, float(w.max()))
    probs = np.atleast_1d(phi(params, table, w))
    keep = np.random.default_rng(seed).random(len(items)) < probs
    chosen = frozenset(k for k, f in zip(items, keep) if f)
    return Selection(chosen, guarantee, math.fsum(probs))


def compare_curves(target: DpBudget, l0: int, grid: Sequence[float],
                   params: Optional[SnapsParams] = None):
    """Rows ``(w, p_gauss, p_snaps)`` of both release probabilities on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        return []
    if np.any(grid < 0):
        raise ValueError("grid weights must be >= 0")
    if params is None:
        params = SnapsParams.for_target(target, l0)
    certify(params, SensitivityBound(l0, 1.0), target)
    gauss = GaussianBaseline.calibrate(target, l0)
    table = table_for_weights(params, float(grid.max()))
    ps = np.atleast_1d(phi(params, table, grid))
    pg = np.atleast_1d(gauss.release_probability(grid))
    return [(float(w), float(a), float(b)) for w, a, b in zip(grid, pg, ps)]
