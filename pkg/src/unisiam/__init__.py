"""Self-supervised few-shot learning on synthetic data.

A small, dependency-light laboratory for studying contrastive
pre-training through the lens of mutual information: reverse-mode
autodiff over float64 numpy arrays, MLP encoder stacks, NCE and
MINE-style losses with an asymmetric stop-gradient variant, an MI
estimation benchmark with analytic ground truth, self-supervised
distillation, episodic few-shot evaluation, and embedding-collapse
diagnostics.
"""

from .autodiff import Tensor, grad_check, set_debug
from .config import Config, resolve
from .data import (EpisodePool, SyntheticWorld, augment, augment_policy,
                   build_pair_batch, make_world, read_dataset, write_dataset)
from .diagnostics import (alignment_uniformity, effective_rank,
                          singular_spectrum, write_rank_summary_csv,
                          write_spectrum_csv)
from .errors import (ConfigError, ContractViolationError,
                     DegenerateInputError, DivergenceError, FormatError,
                     UnisiamError)
from .fewshot import (EpisodeSpec, EvalResult, ProbeConfig, aggregate,
                      ci95_halfwidth, evaluate, fit_probe, sample_episode,
                      write_episode_csv, write_summary_csv)
from .losses import (LossBreakdown, LossConfig, PairBatch, amine_loss,
                     cross_entropy_loss, distill_loss, mine_loss, nce_loss,
                     total_loss)
from .mibench import (GaussianSpec, MIBenchResult, analytic_mi,
                      mine_mi_estimate, nce_mi_estimate, run_bias_sweep,
                      write_mi_csv)
from .models import (STUDENT, TEACHER, EncoderStack, Mlp, MlpSpec, SGDState,
                     cosine_lr, default_stack, load_checkpoint,
                     save_checkpoint, sgd_step)
from .trainer import (TrainConfig, TrainLog, distill, pretrain,
                      projection_effective_rank)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "grad_check", "set_debug",
    "Config", "resolve",
    "EpisodePool", "SyntheticWorld", "augment", "augment_policy",
    "build_pair_batch", "make_world", "read_dataset", "write_dataset",
    "alignment_uniformity", "effective_rank", "singular_spectrum",
    "write_rank_summary_csv", "write_spectrum_csv",
    "ConfigError", "ContractViolationError", "DegenerateInputError",
    "DivergenceError", "FormatError", "UnisiamError",
    "EpisodeSpec", "EvalResult", "ProbeConfig", "aggregate",
    "ci95_halfwidth", "evaluate", "fit_probe", "sample_episode",
    "write_episode_csv", "write_summary_csv",
    "LossBreakdown", "LossConfig", "PairBatch", "amine_loss",
    "cross_entropy_loss", "distill_loss", "mine_loss", "nce_loss",
    "total_loss",
    "GaussianSpec", "MIBenchResult", "analytic_mi", "mine_mi_estimate",
    "nce_mi_estimate", "run_bias_sweep", "write_mi_csv",
    "STUDENT", "TEACHER", "EncoderStack", "Mlp", "MlpSpec", "SGDState",
    "cosine_lr", "default_stack", "load_checkpoint", "save_checkpoint",
    "sgd_step",
    "TrainConfig", "TrainLog", "distill", "pretrain",
    "projection_effective_rank",
    "__version__",
]
