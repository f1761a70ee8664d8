"""Class-balanced confidence thresholds and pseudo-label construction.

A pseudo-label is either a vector on the probability simplex (sample
selected) or the zero vector (sample left out of the target loss).
"""

from __future__ import annotations

import math
import warnings
from typing import NamedTuple

import numpy as np

from .errors import ConfigError

# Keeps the strict selection test satisfiable when a class saturates at 1.0.
LAMBDA_CAP = 0.999999


class PseudoLabel(NamedTuple):
    vector: np.ndarray
    selected: bool


def compute_lambdas(probs, portion: float) -> np.ndarray:
    """Per-class confidence thresholds covering the most confident ``portion``.

    Samples are bucketed by predicted class; within each bucket the winning
    confidences are sorted descending and the threshold is the value at index
    floor(portion * (count - 1)), so the boundary sample is included. A class
    nobody predicts gets threshold 1, which selects nothing under the strict
    comparison. Data-derived thresholds are capped at LAMBDA_CAP.
    """
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if p.size == 0:
        raise ConfigError("cannot compute thresholds from an empty prediction set")
    if not 0.0 < portion <= 1.0:
        raise ConfigError(f"portion must be in (0, 1], got {portion}")
    k = p.shape[1]
    winners = p.argmax(axis=1)  # ties resolve to the lowest class index
    lambdas = np.ones(k)
    for c in range(k):
        conf = np.sort(p[winners == c, c])[::-1]
        if conf.size:
            lambdas[c] = min(conf[math.floor(portion * (conf.size - 1))], LAMBDA_CAP)
    return lambdas


def _select(prob: np.ndarray, lambdas: np.ndarray):
    """Winning class by threshold-scaled confidence, plus the selection test."""
    ratios = prob / lambdas
    k_star = int(np.argmax(ratios))
    return k_star, bool(prob[k_star] > lambdas[k_star])


def hard_pseudo_label(prob, lambdas) -> PseudoLabel:
    """One-hot label at the threshold-scaled argmax, or zero when unconfident."""
    prob = np.asarray(prob, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    k_star, selected = _select(prob, lambdas)
    vector = np.zeros_like(prob)
    if selected:
        vector[k_star] = 1.0
    return PseudoLabel(vector, selected)


def soft_pseudo_label(prob, lambdas) -> PseudoLabel:
    """The raw predicted distribution, kept verbatim when the sample is confident."""
    prob = np.asarray(prob, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    _, selected = _select(prob, lambdas)
    if not selected:
        return PseudoLabel(np.zeros_like(prob), False)
    vector = prob.copy()
    total = vector.sum()
    if abs(total - 1.0) > 1e-6:
        warnings.warn("soft pseudo-label renormalized (sum deviated from 1)", RuntimeWarning)
        vector = vector / total
    return PseudoLabel(vector, True)


def smooth_label(onehot, epsilon: float, k: int) -> PseudoLabel:
    """Spread ``epsilon`` mass from the winning class evenly over the others."""
    vec = np.asarray(onehot.vector if isinstance(onehot, PseudoLabel) else onehot,
                     dtype=np.float64)
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"epsilon must be in [0, 1), got {epsilon}")
    if vec.shape != (k,) or not (np.isin(vec, (0.0, 1.0)).all() and vec.sum() == 1.0):
        raise ValueError("smooth_label requires a selected one-hot label")
    if epsilon == 0.0:
        return PseudoLabel(vec.copy(), True)
    smoothed = np.where(vec == 1.0, 1.0 - epsilon, epsilon / (k - 1))
    return PseudoLabel(smoothed, True)
