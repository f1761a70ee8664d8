"""Energy quantities derived from classifier logits.

The energy of an input is minus the log-sum-exp of its logits: adding a
constant to every logit leaves the softmax untouched but shifts the energy,
which is the extra handle these objectives exploit. Also holds the loss
annealing schedule and an optional Langevin sampler for negative samples.
"""

from __future__ import annotations

import math
import warnings
from typing import NamedTuple

import numpy as np

from . import nn
from .errors import ConfigError


def logsumexp(z, axis: int = -1):
    """log(sum(exp(z))) with max subtraction; safe for large logits."""
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=axis)
    shifted = z - np.expand_dims(m, axis)
    return m + np.log(np.exp(shifted).sum(axis=axis))


def energy(z, axis: int = -1):
    """Energy of the input that produced logits z; lower means denser."""
    out = -logsumexp(z, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def energy_grad_logits(z) -> np.ndarray:
    """d energy / d logits == -softmax(z); components sum to -1."""
    return -nn.softmax(z)


def rebm_target_term(energies, alpha: float) -> float:
    """Regularization contribution to the minimized loss: alpha * sum(E)."""
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    return float(alpha * np.sum(np.asarray(energies, dtype=np.float64)))


def ebm_loss(logits, soft_label, lambdas) -> float:
    """Label-weighted energy plus the per-class confidence reward.

    -log sum_k y_k exp(z_k) + sum_k y_k log(lambda_k). The first term is
    stabilized by subtracting the max logit over the label's support, so the
    weighted sum never underflows to zero. The reward term does not depend on
    the network and contributes no parameter gradient.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(soft_label, dtype=np.float64)
    lam = np.asarray(lambdas, dtype=np.float64)
    support = y > 0
    if not support.any():
        raise ValueError("soft label has empty support")
    m = z[support].max()
    weighted = float((y[support] * np.exp(z[support] - m)).sum())
    reward = float((y[support] * np.log(lam[support])).sum())
    return -(m + math.log(weighted)) + reward


def ebm_loss_grad_logits(logits, soft_label) -> np.ndarray:
    """d ebm_loss / d logits: minus the label-weighted softmax over the support."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(soft_label, dtype=np.float64)
    support = y > 0
    if not support.any():
        raise ValueError("soft label has empty support")
    m = z[support].max()
    shifted = np.where(support, z - m, -np.inf)
    e = y * np.exp(shifted)
    return -e / e.sum()


def anneal_beta(epoch: int) -> float:
    """Annealing weight: 10 / (1 + N^2) through N = 5, zero afterwards."""
    n = int(epoch)
    if n != epoch or n < 0:
        raise ConfigError("epoch must be a nonnegative integer")
    return 10.0 / (1.0 + n * n) if n <= 5 else 0.0


def annealed_target_loss(l_ebm: float, r_ebm: float, beta: float) -> float:
    """Convex blend (L + beta * R) / (1 + beta) steering from R to L as beta drops."""
    if beta < 0:
        raise ConfigError("beta must be >= 0")
    return (l_ebm + beta * r_ebm) / (1.0 + beta)


def energy_input_grad(params: nn.ModelParams, x) -> np.ndarray:
    """d energy / d input for a feature vector [D] or batch [n, D]."""
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1

    def rowwise_energy(logits):
        return float(energy(logits, axis=1).sum()), energy_grad_logits(logits)

    _, _, dx = nn.backward_with_input(params, arr, rowwise_energy)
    return dx[0] if squeeze else dx


class SgldSample(NamedTuple):
    x: np.ndarray
    diverged: bool


def sgld_negative_sample(params: nn.ModelParams, x0, steps: int, step_size: float,
                         noise_scale: float, rng, energy_grad=None,
                         clip=None) -> SgldSample:
    """Unadjusted Langevin chain: x <- x - (step_size / 2) * dE/dx + noise_scale * xi.

    Deterministic given ``rng``. A non-finite state aborts the chain, which
    then returns the last finite iterate flagged as diverged. ``energy_grad``
    defaults to the model energy's input gradient; tests may substitute a
    surrogate. ``clip`` is an optional (low, high) coordinate box the chain is
    projected into after every step; without it a saturating network lets
    chains escape along directions of unbounded density.
    """
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    if energy_grad is None:
        energy_grad = lambda pts: energy_input_grad(params, pts)
    x = np.array(x0, dtype=np.float64)
    for _ in range(int(steps)):
        nxt = x - 0.5 * step_size * energy_grad(x) + noise_scale * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(nxt)):
            warnings.warn("Langevin chain left the finite range; returning last finite state",
                          RuntimeWarning)
            return SgldSample(x, True)
        if clip is not None:
            nxt = np.clip(nxt, clip[0], clip[1])
        x = nxt
    return SgldSample(x, False)
