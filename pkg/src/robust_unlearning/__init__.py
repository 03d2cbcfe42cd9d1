"""Distributionally robust reweighting for gradient-based unlearning on toy language models."""

from .data import Corpus, DatasetSpec, read_corpus, synthesize, write_corpus
from .dro import (
    AdversarialWeights,
    DroConfig,
    dual_primal_residual,
    dv_grad,
    dv_objective,
    dv_weights,
    g_variant_grad,
    group_max_loss,
    top_fraction_select,
)
from .losses import LossParams, ga_loss, npo_loss, satimp_loss, satimp_weights, simnpo_loss
from .metrics import (
    attack_auc,
    balance_report,
    exact_match,
    extraction_strength,
    forget_epoch,
    mia_score,
    perplexity,
    privacy_report,
)
from .toy_models import (
    Sample,
    ToyModel,
    ce_loss_and_grad,
    grad_check,
    greedy_decode,
    init_model,
    token_logprobs,
)
from .trainer import TrajectoryLog, UnlearnConfig, pretrain, run_unlearning, unlearn_step

__version__ = "0.1.0"

__all__ = [
    "AdversarialWeights",
    "Corpus",
    "DatasetSpec",
    "DroConfig",
    "LossParams",
    "Sample",
    "ToyModel",
    "TrajectoryLog",
    "UnlearnConfig",
    "attack_auc",
    "balance_report",
    "ce_loss_and_grad",
    "dual_primal_residual",
    "dv_grad",
    "dv_objective",
    "dv_weights",
    "exact_match",
    "extraction_strength",
    "forget_epoch",
    "g_variant_grad",
    "ga_loss",
    "grad_check",
    "greedy_decode",
    "group_max_loss",
    "init_model",
    "mia_score",
    "npo_loss",
    "perplexity",
    "pretrain",
    "privacy_report",
    "read_corpus",
    "run_unlearning",
    "satimp_loss",
    "satimp_weights",
    "simnpo_loss",
    "synthesize",
    "token_logprobs",
    "top_fraction_select",
    "unlearn_step",
    "write_corpus",
]
