"""Alternating self-training: label generation, retraining, round reports.

One round fixes the network to generate pseudo-labels (a per-sample
closed-form solve for the hard modes, a confidence-gated soft assignment for
the others), then fixes the labels and retrains by gradient descent. Loss
values are recorded in raw sum form; gradients are scaled by the number of
samples they cover, so the configured learning rate behaves like a
batch-mean rate.

Modes
-----
cbst     hard one-hot pseudo-labels only
crst-ls  hard labels smoothed by epsilon
rebm     hard labels plus the energy term weighted by alpha
lebm     soft labels scored by the label-weighted energy loss
anneal   blend of lebm and rebm steered by the annealing weight
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ebm
from . import metrics as metrics_mod
from . import nn
from .datagen import DomainDataset
from .errors import ConfigError, DivergenceError
from .pseudolabel import compute_lambdas, hard_pseudo_label, smooth_label, soft_pseudo_label

MODES = ("cbst", "crst-ls", "rebm", "lebm", "anneal")
HARD_MODES = ("cbst", "crst-ls", "rebm")


@dataclass
class TrainSettings:
    """Optimizer and schedule knobs shared by every round."""

    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs_per_round: int = 20
    batch_size: int = 32                # 0 = full batch (one step per epoch)
    portion_step: float = 0.05
    portion_max: float = 0.5
    lambda_schedule: str = "recompute"  # "fixed" freezes thresholds after round 0
    step2_energy: bool = True           # keep the energy term during retraining
    use_cd: bool = True                 # contrastive-divergence energy gradient
    cd_steps: int = 30
    cd_step_size: float = 0.2
    cd_noise: float = 0.4472135954999579  # sqrt(cd_step_size): unit-temperature chains
    cd_box_margin: float = 0.5          # chains stay in the target bounding box + margin
    divergence_limit: float = 1e6


@dataclass
class TrainState:
    """Everything the loop carries from one round to the next."""

    params: nn.ModelParams
    round: int = 0
    portion: float = 0.2
    mode: str = "rebm"
    alpha: float = 1.0
    epsilon: float = 0.1
    seed: int = 0
    fixed_lambdas: Optional[np.ndarray] = None
    last_labels: Optional["PseudoLabelSet"] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.portion <= 1.0:
            raise ConfigError("portion must be in (0, 1]")
        if self.alpha < 0 or self.round < 0:
            raise ConfigError("alpha and round must be nonnegative")


@dataclass
class PseudoLabelSet:
    """Per-sample label vectors plus the thresholds that produced them."""

    labels: np.ndarray    # [n, k], rows on the simplex or all-zero
    selected: np.ndarray  # [n] bool
    round: int
    lambdas: np.ndarray   # [k]

    @property
    def selection_fraction(self) -> float:
        return float(self.selected.mean()) if self.selected.size else 0.0


@dataclass
class RoundReport:
    """Everything recorded for one round; traces are raw sum-form values."""

    round: int
    step1_loss_before: float
    step1_loss_after: float
    step2_loss_trace: list            # full objective per epoch (descended)
    step2_selftrain_trace: list       # source CE + target label term per epoch
    mean_target_energy: float
    selection_fraction: float
    beta: float
    lower_bound: float                # sum over selected labels of y_k log(lambda_k)
    source_acc: Optional[float]
    target_acc: Optional[float]
    marginal_kl: Optional[float]
    total_objective: float
    source_ce: float
    target_label_loss: float
    energy_term: float
    selftrain_loss: float
    rcml_e: float                     # sign-flipped objective before label update
    rcml_c: float                     # ... after label update
    rcml_m: float                     # ... after retraining
    step1_nonincreasing: bool
    bound_ok: bool
    diverged: bool = False


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    y = np.zeros((labels.size, k))
    y[np.arange(labels.size), labels] = 1.0
    return y


def empty_label_set(n: int, k: int, round_index: int = 0) -> PseudoLabelSet:
    """All-zero labels: every sample unselected, thresholds vacuously 1."""
    return PseudoLabelSet(np.zeros((n, k)), np.zeros(n, dtype=bool), round_index, np.ones(k))


def _hard_row_losses(logits, labels, lambdas):
    logp = nn.log_softmax(logits)
    return -(labels * (logp - np.log(lambdas))).sum(axis=1)


def _weighted_row_losses(logits, labels, lambdas):
    """Row-wise label-weighted energy loss; rows must have nonempty support."""
    support = labels > 0
    shifted = np.where(support, logits, -np.inf)
    m = shifted.max(axis=1)
    weighted = (labels * np.exp(np.where(support, logits - m[:, None], -np.inf))).sum(axis=1)
    reward = (labels * np.log(lambdas)).sum(axis=1)
    return -(m + np.log(weighted)) + reward


def _weighted_softmax(logits, labels):
    support = labels > 0
    shifted = np.where(support, logits, -np.inf)
    m = shifted.max(axis=1, keepdims=True)
    e = labels * np.exp(np.where(support, logits - m, -np.inf))
    return e / e.sum(axis=1, keepdims=True)


def energy_coefficient(mode: str, alpha: float, beta: float = 0.0) -> float:
    """Weight of the summed target energy inside the full objective."""
    if mode == "rebm":
        return alpha
    if mode == "anneal":
        return alpha * beta / (1.0 + beta)
    return 0.0


def _target_rows_value(logits, labels, selected, lambdas, mode, beta):
    if not selected.any():
        return 0.0
    z = logits[selected]
    y = labels[selected]
    if mode in HARD_MODES:
        rows = _hard_row_losses(z, y, lambdas)
    elif mode == "lebm":
        rows = _weighted_row_losses(z, y, lambdas)
    elif mode == "anneal":
        rows = (_weighted_row_losses(z, y, lambdas)
                + beta * _hard_row_losses(z, y, lambdas)) / (1.0 + beta)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return float(rows.sum())


def _target_rows_dlogits(logits, labels, selected, lambdas, mode, alpha, beta,
                         include_energy):
    d = np.zeros_like(logits)
    p = nn.softmax(logits)
    if selected.any():
        z = logits[selected]
        y = labels[selected]
        if mode in HARD_MODES:
            d[selected] = p[selected] - y
        elif mode == "lebm":
            d[selected] = -_weighted_softmax(z, y)
        elif mode == "anneal":
            d[selected] = (-_weighted_softmax(z, y) + beta * (p[selected] - y)) / (1.0 + beta)
    coeff = energy_coefficient(mode, alpha, beta)
    if include_energy and coeff != 0.0:
        d -= coeff * p  # d(-logsumexp)/dz = -softmax
    return d


def target_label_loss(logits, label_set: PseudoLabelSet, mode: str, beta: float = 0.0) -> float:
    """Label-dependent part of the target objective (energy excluded).

    Unselected samples contribute exactly zero, so an empty selection scores 0.
    """
    z = np.atleast_2d(logits)
    return _target_rows_value(z, label_set.labels, label_set.selected,
                              label_set.lambdas, mode, beta)


def total_objective(params: nn.ModelParams, source: DomainDataset, target_features,
                    label_set: PseudoLabelSet, alpha: float, mode: str, beta: float = 0.0):
    """Full objective (sum form) and its decomposition.

    Returns ``(value, parts)`` with parts source_ce, target_label, energy_sum,
    energy_term and selftrain (source_ce + target_label, the piece bounded
    below by the threshold reward).
    """
    logits_s = nn.mlp_forward(params, source.features)
    y_s = _one_hot(np.asarray(source.labels), source.k)
    source_ce = float(-(y_s * nn.log_softmax(logits_s)).sum())
    logits_t = np.atleast_2d(nn.mlp_forward(params, target_features))
    label_term = target_label_loss(logits_t, label_set, mode, beta)
    energy_sum = float(np.sum(ebm.energy(logits_t, axis=1)))
    coeff = energy_coefficient(mode, alpha, beta)
    total = source_ce + label_term + coeff * energy_sum
    parts = {
        "source_ce": source_ce,
        "target_label": label_term,
        "energy_sum": energy_sum,
        "energy_coeff": coeff,
        "energy_term": coeff * energy_sum,
        "selftrain": source_ce + label_term,
        "total": total,
    }
    return total, parts


def _energy_row_weights(mode, alpha, beta, selected):
    """Per-row weight of the energy component inside the target term.

    The explicit regularizer covers every target row; the label-weighted
    energy loss carries one unit of energy per selected row by construction.
    """
    weights = np.full(selected.shape, energy_coefficient(mode, alpha, beta))
    if mode == "lebm":
        weights = weights + selected.astype(float)
    elif mode == "anneal":
        weights = weights + selected.astype(float) / (1.0 + beta)
    return weights


def objective_gradient(params, xs, ys, xt, yt, sel_t, lambdas, mode, alpha, beta,
                       include_energy=True):
    """Exact (sum-form) parameter gradient of the joint objective.

    This is the direct gradient the finite-difference checks validate; the
    contrastive estimator adds its negative phase on top of it.
    """
    def source_loss(z):
        return 0.0, nn.softmax(z) - ys

    _, grads = nn.backward(params, xs, source_loss)

    def target_loss(z):
        return 0.0, _target_rows_dlogits(z, yt, sel_t, lambdas, mode, alpha, beta,
                                         include_energy)

    _, grads_t = nn.backward(params, xt, target_loss)
    return grads.add(grads_t)


def _chunk_gradient(params, xs, ys, xt, yt, sel_t, lambdas, mode, alpha, beta,
                    settings: TrainSettings, sgld_rng, box):
    """Gradient of the objective restricted to one source/target chunk,
    scaled by the combined chunk size."""
    grads = objective_gradient(params, xs, ys, xt, yt, sel_t, lambdas, mode,
                               alpha, beta, settings.step2_energy)

    if settings.use_cd and settings.step2_energy:
        # Negative phase of the contrastive-divergence estimator: chains are
        # seeded at the data rows and pushed toward model samples inside the
        # data box, turning the otherwise unbounded energy pull-down into a
        # density contrast.
        row_w = _energy_row_weights(mode, alpha, beta, sel_t)
        hot = row_w > 0
        if hot.any():
            negatives = ebm.sgld_negative_sample(
                params, xt[hot], settings.cd_steps, settings.cd_step_size,
                settings.cd_noise, sgld_rng, clip=box)

            def negative_phase(z):
                return 0.0, row_w[hot][:, None] * nn.softmax(z)

            _, g_neg = nn.backward(params, negatives.x, negative_phase)
            grads = grads.add(g_neg)

    return grads.scaled(1.0 / (xs.shape[0] + xt.shape[0]))


def _epoch_stream(seed: int, round_index: int, epoch: int) -> np.random.Generator:
    """Stateless shuffle stream: identical across modes for a given run seed."""
    return np.random.default_rng(
        [zlib.crc32(b"batches"), int(seed), int(round_index), int(epoch)])


def _chunks(perm: np.ndarray, batch_size: int) -> list:
    if batch_size <= 0 or batch_size >= perm.size:
        return [perm]
    return [perm[i:i + batch_size] for i in range(0, perm.size, batch_size)]


def step1_generate(state: TrainState, target_features) -> PseudoLabelSet:
    """Assign pseudo-labels with the network frozen.

    Thresholds come from the current predictions (or the frozen set when the
    state carries one); hard modes take the closed-form one-hot solve, soft
    modes keep the confident predictions verbatim.
    """
    probs = nn.softmax(nn.mlp_forward(state.params, target_features))
    probs = np.atleast_2d(probs)
    n, k = probs.shape
    if state.fixed_lambdas is not None:
        lambdas = state.fixed_lambdas
    else:
        lambdas = compute_lambdas(probs, state.portion)
    soft = state.mode in ("lebm", "anneal")
    labels = np.zeros((n, k))
    selected = np.zeros(n, dtype=bool)
    for i in range(n):
        if soft:
            lab = soft_pseudo_label(probs[i], lambdas)
        else:
            lab = hard_pseudo_label(probs[i], lambdas)
            if lab.selected and state.mode == "crst-ls" and state.epsilon > 0:
                lab = smooth_label(lab, state.epsilon, k)
        labels[i] = lab.vector
        selected[i] = lab.selected
    return PseudoLabelSet(labels, selected, state.round, np.asarray(lambdas, dtype=np.float64))


def step2_retrain(state: TrainState, source: DomainDataset, target_features,
                  label_set: PseudoLabelSet, settings: TrainSettings,
                  epochs: Optional[int] = None, lr: Optional[float] = None,
                  sgld_rng=None):
    """Gradient descent on the fixed-label objective.

    Minibatches are drawn from a stateless per-(seed, round, epoch) stream so
    identical configurations replay identical chunk orders. Returns
    ``(params, trace, selftrain_trace)``; both traces carry epochs + 1
    entries, the full-objective value before each epoch plus the final value.
    The momentum buffer starts fresh because the objective changed.
    """
    epochs = settings.epochs_per_round if epochs is None else int(epochs)
    lr = settings.lr if lr is None else lr
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    beta = ebm.anneal_beta(state.round) if state.mode == "anneal" else 0.0
    xt = np.atleast_2d(np.asarray(target_features, dtype=np.float64))
    y_s = _one_hot(np.asarray(source.labels), source.k)
    box = (xt.min(axis=0) - settings.cd_box_margin,
           xt.max(axis=0) + settings.cd_box_margin)
    params = state.params
    momentum_state = None
    trace, st_trace = [], []

    def record(p):
        value, parts = total_objective(p, source, xt, label_set, state.alpha,
                                       state.mode, beta)
        if not np.isfinite(value) or abs(value) > settings.divergence_limit:
            raise DivergenceError(
                f"round {state.round}: objective {value!r} out of range")
        trace.append(value)
        st_trace.append(parts["selftrain"])

    for epoch in range(epochs):
        record(params)
        rng = _epoch_stream(state.seed, state.round, epoch)
        chunks_s = _chunks(rng.permutation(len(source)), settings.batch_size)
        chunks_t = _chunks(rng.permutation(xt.shape[0]), settings.batch_size)
        for i in range(max(len(chunks_s), len(chunks_t))):
            ids = chunks_s[i % len(chunks_s)]
            idt = chunks_t[i % len(chunks_t)]
            grads = _chunk_gradient(
                params, source.features[ids], y_s[ids], xt[idt],
                label_set.labels[idt], label_set.selected[idt], label_set.lambdas,
                state.mode, state.alpha, beta, settings, sgld_rng, box)
            params, momentum_state = nn.sgd_step(
                params, grads, lr, settings.weight_decay, settings.momentum,
                momentum_state)
    record(params)
    return params, trace, st_trace


def run_round(state: TrainState, source: DomainDataset, target: DomainDataset,
              settings: TrainSettings, sgld_rng=None):
    """One full round: generate labels, retrain, report.

    The step-1 before/after pair is evaluated under the same network and
    thresholds, so for the hard modes "after" can never exceed "before".
    """
    mode = state.mode
    beta = ebm.anneal_beta(state.round) if mode == "anneal" else 0.0
    label_set = step1_generate(state, target.features)

    logits_t = np.atleast_2d(nn.mlp_forward(state.params, target.features))
    if state.last_labels is None:
        old_set = empty_label_set(len(target), target.k, state.round)
    else:
        old_set = state.last_labels
    old_eval = dataclasses.replace(old_set, lambdas=label_set.lambdas)
    s1_before = target_label_loss(logits_t, old_eval, mode, beta)
    s1_after = target_label_loss(logits_t, label_set, mode, beta)
    j_old, _ = total_objective(state.params, source, target.features, old_eval,
                               state.alpha, mode, beta)
    j_new, _ = total_objective(state.params, source, target.features, label_set,
                               state.alpha, mode, beta)

    params, trace, st_trace = step2_retrain(
        state, source, target.features, label_set, settings, sgld_rng=sgld_rng)
    j_end, parts_end = total_objective(params, source, target.features, label_set,
                                       state.alpha, mode, beta)

    sel = label_set.selected
    lower_bound = float((label_set.labels[sel] * np.log(label_set.lambdas)).sum())
    energies = ebm.energy(nn.mlp_forward(params, target.features), axis=1)

    try:
        source_acc = metrics_mod.evaluate(params, source).mean_acc
    except ValueError:
        source_acc = None
    try:
        tgt_eval = metrics_mod.evaluate(params, target)
        target_acc, kl = tgt_eval.mean_acc, tgt_eval.marginal_kl
    except ValueError:
        target_acc, kl = None, None

    tol = 1e-9
    report = RoundReport(
        round=state.round,
        step1_loss_before=s1_before,
        step1_loss_after=s1_after,
        step2_loss_trace=[float(v) for v in trace],
        step2_selftrain_trace=[float(v) for v in st_trace],
        mean_target_energy=float(np.mean(energies)),
        selection_fraction=label_set.selection_fraction,
        beta=beta,
        lower_bound=lower_bound,
        source_acc=source_acc,
        target_acc=target_acc,
        marginal_kl=kl,
        total_objective=j_end,
        source_ce=parts_end["source_ce"],
        target_label_loss=parts_end["target_label"],
        energy_term=parts_end["energy_term"],
        selftrain_loss=parts_end["selftrain"],
        rcml_e=-j_old,
        rcml_c=-j_new,
        rcml_m=-j_end,
        step1_nonincreasing=bool(s1_after <= s1_before + tol),
        bound_ok=bool(s1_after >= lower_bound - tol
                      and all(v >= lower_bound - tol for v in st_trace)),
    )

    fixed = state.fixed_lambdas
    if settings.lambda_schedule == "fixed" and fixed is None:
        fixed = label_set.lambdas
    new_state = dataclasses.replace(
        state,
        params=params,
        round=state.round + 1,
        portion=min(state.portion + settings.portion_step, settings.portion_max),
        fixed_lambdas=fixed,
        last_labels=label_set,
    )
    return new_state, report


def pretrain_source(params: nn.ModelParams, source: DomainDataset, epochs: int,
                    lr: float, momentum: float = 0.9, weight_decay: float = 5e-4,
                    batch_size: int = 32, seed: int = 0):
    """Plain cross-entropy fit on the labeled source set; seeded minibatches."""
    y_s = _one_hot(np.asarray(source.labels), source.k)
    state = None
    trace = []
    for epoch in range(int(epochs)):
        logits = nn.mlp_forward(params, source.features)
        trace.append(float(-(y_s * nn.log_softmax(logits)).sum()))
        rng = np.random.default_rng([zlib.crc32(b"pretrain"), int(seed), epoch])
        for idx in _chunks(rng.permutation(len(source)), batch_size):
            y = y_s[idx]

            def loss(z):
                return 0.0, (nn.softmax(z) - y) / idx.size

            _, grads = nn.backward(params, source.features[idx], loss)
            params, state = nn.sgd_step(params, grads, lr, weight_decay, momentum, state)
    return params, trace


def cem_trace(reports) -> list:
    """Relabel each round as an (E, C, M) triple over the sign-flipped objective.

    E scores the old labels under the new network-and-threshold snapshot, C the
    freshly assigned labels, M the retrained network; for the hard modes C >= E
    by solver optimality and M >= C by descent.
    """
    out = []
    for rep in reports:
        out.append({
            "round": rep.round,
            "e_step": rep.rcml_e,
            "c_step": rep.rcml_c,
            "m_step": rep.rcml_m,
        })
    return out
