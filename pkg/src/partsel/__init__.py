"""Partition selection under approximate Renyi differential privacy."""

__version__ = "0.1.0"

from .accounting import DpBudget, calibrate_rdp_epsilon, compose, rdp_to_dp
from .divergence import (DiscreteDistribution, RenyiBudget, approx_renyi_bernoulli,
                         approx_renyi_divergence, clip_pair, hockey_stick, verify_kkt)
from .primitive import PrimitiveTable, pi_star, step_l
from .snaps import SnapsParams, SensitivityBound, phi, psi_table

__all__ = [
    "DpBudget", "calibrate_rdp_epsilon", "compose", "rdp_to_dp",
    "DiscreteDistribution", "RenyiBudget", "approx_renyi_bernoulli",
    "approx_renyi_divergence", "clip_pair", "hockey_stick", "verify_kkt",
    "PrimitiveTable", "pi_star", "step_l",
    "SnapsParams", "SensitivityBound", "phi", "psi_table",
]
