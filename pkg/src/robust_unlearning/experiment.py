"""The reference desk experiment: heterogeneous forget set on a tabular model.

32 forget samples with pretraining duplication in {1, 4, 16}, V = 64,
order-2 tabular model. Unlearning uses NPO with plain SGD: Adam rescales
each coordinate by its own gradient history, which on a tabular model
(where samples touch nearly disjoint rows) largely cancels any per-sample
reweighting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import dro
from .data import Corpus, DatasetSpec, synthesize
from .losses import LossParams
from .metrics import balance_report, censored_epochs, mean_ppl, privacy_report
from .toy_models import TABULAR, ToyModel, init_model
from .trainer import TrajectoryLog, UnlearnConfig, pretrain, run_unlearning

VOCAB = 64
N_RETAIN = 64
N_FORGET = 32
PROMPT_LEN = 4
TARGET_LEN = 8
DUPS = (1, 4, 16)
PRETRAIN = dict(lr=0.05, epochs=20, batch_size=16, optimizer="adam")
UNLEARN = dict(lr=100.0, batch_size=8, epochs=60, optimizer="sgd")
BETA = 2.0
RHO = 0.5
LAMBDA = 1.0

VARIANTS = {
    "NPO": dro.DroConfig(),
    "NPO+DV": dro.DroConfig(dro.DV, beta=BETA),
    "NPO+G": dro.DroConfig(dro.G, rho=RHO),
    "NPO+DV*": dro.DroConfig(dro.DV, beta=BETA, retain=True),
}


def desk_spec(seed: int) -> DatasetSpec:
    dups = tuple(DUPS[i % len(DUPS)] for i in range(N_FORGET))
    return DatasetSpec(VOCAB, N_RETAIN, N_FORGET, PROMPT_LEN, TARGET_LEN, dups, seed=seed)


@lru_cache(maxsize=16)
def desk_original(seed: int) -> tuple[Corpus, ToyModel]:
    """Corpus and pretrained ("Original") model for one seed."""
    corpus = synthesize(desk_spec(seed))
    model = init_model(TABULAR, VOCAB, 2, seed=seed)
    return corpus, pretrain(model, corpus, seed=seed, **PRETRAIN)


def desk_config(seed: int, dro_config: dro.DroConfig, method: str = "NPO", **overrides) -> UnlearnConfig:
    cfg = UnlearnConfig(method, dro_config, LossParams(lam=LAMBDA), seed=seed, **UNLEARN)
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class RunResult:
    model: ToyModel
    log: TrajectoryLog
    forget_epochs: np.ndarray
    std: float
    retain_ppl: float
    retain_ppl_ratio: float
    auc_loss: float
    auc_mink: float
    auc_minkpp: float


@lru_cache(maxsize=64)
def run_variant(seed: int, dro_config: dro.DroConfig, **overrides) -> RunResult:
    corpus, original = desk_original(seed)
    ref_retain = mean_ppl(original, corpus.retain)
    model, log = run_unlearning(original, corpus, desk_config(seed, dro_config, **overrides))
    br = balance_report(log.ppl_trajectories(), 2 * ref_retain, 10 * ref_retain)
    pr = privacy_report(model, corpus.forget, corpus.holdout)
    retain_ppl = mean_ppl(model, corpus.retain)
    return RunResult(model, log, censored_epochs(br.forget_epochs, br.budget), br.std,
                     retain_ppl, retain_ppl / ref_retain, pr.auc_loss, pr.auc_mink, pr.auc_minkpp)
