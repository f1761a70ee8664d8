"""Per-round evaluation: class accuracies, marginal KL, energy summaries.

``evaluate`` is the only sanctioned reader of a target dataset's hidden
ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ebm
from . import nn
from .datagen import DomainDataset

KL_CLAMP = 1e-12


@dataclass
class EvalReport:
    per_class_acc: list
    mean_acc: float
    marginal_kl: float
    mean_energy: float
    min_energy: float
    max_energy: float


def per_class_accuracy(preds, truth, k: int):
    """Accuracy per class and its mean over classes present in the truth.

    Absent classes report 0.0 accuracy but are excluded from the mean.
    """
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truth.shape}")
    per = np.zeros(k)
    present = np.zeros(k, dtype=bool)
    for c in range(k):
        mask = truth == c
        if mask.any():
            present[c] = True
            per[c] = float((preds[mask] == c).mean())
    if not present.any():
        raise ValueError("no class present in the truth labels")
    return per, float(per[present].mean())


def marginal_kl(pred_marginal, true_marginal, direction: str = "true_pred") -> float:
    """KL divergence between class marginals, natural log.

    ``true_pred`` (default) scores KL(true || predicted); ``pred_true`` flips
    the direction. The denominator distribution is clamped at 1e-12 so a
    collapsed marginal stays finite.
    """
    p = np.asarray(pred_marginal, dtype=np.float64)
    q = np.asarray(true_marginal, dtype=np.float64)
    if direction == "true_pred":
        top, bottom = q, p
    elif direction == "pred_true":
        top, bottom = p, q
    else:
        raise ValueError(f"unknown direction {direction!r}")
    mask = top > 0
    clamped = np.maximum(bottom, KL_CLAMP)
    return float((top[mask] * (np.log(top[mask]) - np.log(clamped[mask]))).sum())


def energy_stats(energies):
    """(mean, min, max) of a nonempty energy sequence."""
    arr = np.asarray(energies, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("energy_stats requires at least one value")
    return float(arr.mean()), float(arr.min()), float(arr.max())


def evaluate(params: nn.ModelParams, ds: DomainDataset,
             kl_direction: str = "true_pred") -> EvalReport:
    """Score a model on a dataset, using hidden truth for target domains."""
    truth = ds.eval_labels if ds.eval_labels is not None else ds.labels
    if truth is None or (np.asarray(truth) < 0).any():
        raise ValueError("dataset carries no evaluation labels")
    logits = nn.mlp_forward(params, ds.features)
    preds = logits.argmax(axis=1)
    per, mean = per_class_accuracy(preds, truth, ds.k)
    pred_marginal = nn.softmax(logits).mean(axis=0)
    true_marginal = np.bincount(np.asarray(truth, dtype=np.int64),
                                minlength=ds.k) / len(ds)
    kl = marginal_kl(pred_marginal, true_marginal, direction=kl_direction)
    e_mean, e_min, e_max = energy_stats(ebm.energy(logits, axis=1))
    return EvalReport(
        per_class_acc=[float(v) for v in per],
        mean_acc=mean,
        marginal_kl=kl,
        mean_energy=e_mean,
        min_energy=e_min,
        max_energy=e_max,
    )
