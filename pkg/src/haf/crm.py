"""Conditional risk minimisation: rerank fine classes by expected LCA cost."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch


@dataclass(frozen=True)
class CrmRanking:
    risks: np.ndarray
    order: np.ndarray


def expected_costs(cost, probs):
    """Risk of predicting each class, ``R[k] = sum_j cost[k, j] p[j]``; rowwise for 2-D ``probs``."""
    cost = np.asarray(cost, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or probs.shape[-1] != cost.shape[1]:
        raise LengthMismatch(
            f"cost matrix {cost.shape} incompatible with distribution of length {probs.shape[-1]}"
        )
    return probs @ cost.T


def rank_by_risk(risks):
    """Ascending risk; a stable sort keeps the lower class index first on ties."""
    return np.argsort(risks, axis=-1, kind="stable")


def crm_rerank(lca, p):
    risks = expected_costs(lca, p)
    return CrmRanking(risks, rank_by_risk(risks))


def rank_by_probability(probs):
    """Plain ranking: descending probability, ties to the lower index."""
    return np.argsort(-np.asarray(probs, dtype=np.float64), axis=-1, kind="stable")
