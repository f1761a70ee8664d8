"""Energy-constrained self-training for unsupervised domain adaptation."""

from .config import ExperimentConfig, load_config
from .datagen import (DomainDataset, gen_gaussian_shift, gen_two_moons, load_csv,
                      rng_stream, rotate_domain, write_csv)
from .ebm import (anneal_beta, annealed_target_loss, ebm_loss, energy,
                     energy_grad_logits, rebm_target_term, sgld_negative_sample)
from .metrics import EvalReport, energy_stats, evaluate, marginal_kl, per_class_accuracy
from .nn import (GradientSet, ModelParams, backward, cross_entropy, init_params,
                 log_softmax, mlp_forward, sgd_step, softmax)
from .pseudolabel import (PseudoLabel, compute_lambdas, hard_pseudo_label,
                          smooth_label, soft_pseudo_label)
from .runner import alpha_sweep, emit_plot_data, run_experiment
from .selftrain import (MODES, PseudoLabelSet, RoundReport, TrainSettings, TrainState,
                        cem_trace, pretrain_source, run_round, step1_generate,
                        step2_retrain, total_objective)

__version__ = "0.1.0"
