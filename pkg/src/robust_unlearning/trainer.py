"""Pretraining and unlearning loops."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dro
from .data import Corpus
from .losses import ConfigurationError, LossParams, combined_objective, forget_loss, retain_loss
from .metrics import perplexity
from .toy_models import ToyModel, ce_loss, loss_and_grad_from_coeffs

METHODS = ("GA", "GD", "NPO", "SimNPO", "SatImp")
LOG_COLUMNS = ("epoch", "sample_id", "loss", "ppl", "weight_or_selected")


class DivergenceError(RuntimeError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"diverged at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        return params - self.lr * grad


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, lr: float):
    if name.lower() == "sgd":
        return SGD(lr)
    if name.lower() == "adam":
        return Adam(lr)
    raise ConfigurationError(f"unknown optimizer {name!r}")


def mean_ce_and_grad(model: ToyModel, samples) -> tuple[float, np.ndarray]:
    """Mean over samples of the per-sample mean-token CE, accumulated in one buffer."""
    samples = list(samples)
    grad = np.zeros(model.n_params)
    total = 0.0
    scale = 1.0 / len(samples)
    for s in samples:
        def fn(lp):
            m = lp.size
            return -lp.mean(), np.full(m, -scale / m)
        loss, _ = loss_and_grad_from_coeffs(model, s, fn, out=grad)
        total += loss
    return total * scale, grad


def pretrain(model: ToyModel, corpus: Corpus, lr: float = 0.05, epochs: int = 100,
             seed: int = 0, batch_size: int = 16, optimizer: str = "adam",
             on_epoch=None) -> ToyModel:
    """Train CE on retain + forget, each forget sample repeated ``dup_factor`` times per epoch."""
    pool = list(corpus.retain)
    for s in corpus.forget:
        pool.extend([s] * s.dup_factor)
    if not pool:
        raise ValueError("cannot pretrain on an empty corpus")
    rng = np.random.default_rng(seed)
    opt = make_optimizer(optimizer, lr)
    for epoch in range(epochs):
        order = rng.permutation(len(pool))
        for start in range(0, len(pool), batch_size):
            batch = [pool[i] for i in order[start:start + batch_size]]
            loss, grad = mean_ce_and_grad(model, batch)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise DivergenceError(opt.t + 1, "non-finite pretraining loss")
            model = model.with_params(opt.step(model.params, grad))
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model


@dataclass(frozen=True)
class UnlearnConfig:
    method: str = "NPO"
    dro: dro.DroConfig = field(default_factory=dro.DroConfig)
    loss_params: LossParams = field(default_factory=LossParams)
    lr: float = 1e-2
    batch_size: int = 8
    epochs: int = 10
    optimizer: str = "adam"
    seed: int = 0
    # sample id -> group id for group-level G; None selects the top rho fraction
    sample_groups: dict[int, int] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        make_optimizer(self.optimizer, self.lr)

    @property
    def uses_retain(self) -> bool:
        return self.method != "GA" and self.loss_params.lam > 0


@dataclass
class StepDiagnostics:
    step: int
    sample_ids: list[int]
    forget_losses: np.ndarray
    weights: np.ndarray
    forget_value: float
    retain_value: float
    objective: float


def _per_sample(fn, samples, n_params):
    losses = np.empty(len(samples))
    grads = np.empty((len(samples), n_params))
    for i, s in enumerate(samples):
        losses[i], grads[i] = fn(s)
    return losses, grads


def unlearn_step(model: ToyModel, forget_batch, retain_batch, config: UnlearnConfig,
                 ref: ToyModel, optimizer=None, full_forget=None):
    """One optimizer update on ``forget objective + lambda * retain objective``.

    ``full_forget`` (all forget samples) switches DV weights to the full-set
    worst-case distribution; the batch then carries an unbiased estimate of
    its gradient.
    """
    forget_batch, retain_batch = list(forget_batch), list(retain_batch)
    if not forget_batch:
        raise ValueError("empty forget batch")
    if optimizer is None:
        optimizer = make_optimizer(config.optimizer, config.lr)
    step = optimizer.t + 1
    lp = config.loss_params
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            losses, grads = _per_sample(
                lambda s: forget_loss(config.method, model, s, lp, ref), forget_batch, model.n_params)
            if not np.all(np.isfinite(losses)):
                raise DivergenceError(step, "non-finite forget loss")
            cfg = config.dro
            if cfg.variant == dro.G and config.sample_groups is not None:
                _, dense = np.unique([config.sample_groups[s.id] for s in forget_batch],
                                     return_inverse=True)
                cfg = replace(cfg, groups=tuple(int(g) for g in dense))
            if cfg.variant == dro.DV and cfg.full_set and full_forget is not None:
                ids = {s.id: i for i, s in enumerate(full_forget)}
                all_losses = np.array([forget_loss(config.method, model, s, lp, ref)[0]
                                       for s in full_forget])
                w_full = dro.dv_weights(all_losses, cfg.beta).weights
                weights = w_full[[ids[s.id] for s in forget_batch]] * (len(full_forget) / len(forget_batch))
                f_value, f_grad = dro.dv_objective(all_losses, cfg.beta), weights @ grads
            else:
                f_value, f_grad, weights = dro.aggregate(losses, grads, cfg)

            r_value, r_grad = 0.0, np.zeros(model.n_params)
            if config.uses_retain and retain_batch:
                if cfg.retain and cfg.variant != dro.NONE:
                    r_losses, r_grads = _per_sample(lambda s: retain_loss(model, s),
                                                    retain_batch, model.n_params)
                    r_cfg = dro.DroConfig(cfg.variant, cfg.beta, cfg.rho)
                    r_value, r_grad, _ = dro.aggregate(r_losses, r_grads, r_cfg)
                else:
                    r_value, r_grad = mean_ce_and_grad(model, retain_batch)
            lam = lp.lam if config.uses_retain else 0.0
            obj, grad = combined_objective((f_value, f_grad), (r_value, r_grad), lam)
    except ValueError as exc:
        if "non-finite" in str(exc):
            raise DivergenceError(step, str(exc)) from None
        raise
    if not (math.isfinite(obj) and np.all(np.isfinite(grad))):
        raise DivergenceError(step, "non-finite objective")
    with np.errstate(over="ignore", invalid="ignore"):
        new_params = optimizer.step(model.params, grad)
    if not np.all(np.isfinite(new_params)):
        raise DivergenceError(step, "non-finite parameters")
    diag = StepDiagnostics(step, [s.id for s in forget_batch], losses, weights,
                           f_value, r_value, obj)
    return model.with_params(new_params), diag


@dataclass
class TrajectoryLog:
    """Per-epoch, per-forget-sample records plus per-epoch retain loss and step count."""

    records: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    retain_loss: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)

    @property
    def n_epochs(self) -> int:
        return len(self.steps)

    def ppl_trajectories(self) -> dict[int, list[float]]:
        out: dict[int, list[float]] = {}
        for _, sid, _, ppl, _ in self.records:
            out.setdefault(sid, []).append(ppl)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(LOG_COLUMNS) + "\n")
        for epoch, sid, loss, ppl, w in self.records:
            buf.write(f"{epoch},{sid},{loss!r},{ppl!r},{w!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrajectoryLog":
        lines = text.strip("\n").split("\n")
        if tuple(lines[0].split(",")) != LOG_COLUMNS:
            raise ValueError(f"unexpected trajectory header {lines[0]!r}")
        log = cls()
        for line in lines[1:]:
            e, sid, loss, ppl, w = line.split(",")
            log.records.append((int(e), int(sid), float(loss), float(ppl), float(w)))
        if log.records:
            log.steps = list(range(log.records[-1][0] + 1))
        return log


def run_unlearning(model: ToyModel, corpus: Corpus, config: UnlearnConfig,
                   ref: ToyModel | None = None, callback=None):
    """Unlearn ``corpus.forget`` for ``config.epochs`` epochs.

    Forget batches are drawn without replacement per epoch; retain batches of
    the same size cycle through a seeded permutation of the retain set. At
    each epoch end every forget sample is re-evaluated and logged.
    """
    ref = model if ref is None else ref
    forget = list(corpus.forget)
    retain = list(corpus.retain)
    if not forget:
        raise ValueError("empty forget set")
    if config.batch_size > len(forget):
        raise ConfigurationError("batch_size exceeds forget-set size")
    rng = np.random.default_rng(config.seed)
    retain_order = rng.permutation(len(retain)) if retain else np.array([], dtype=int)
    r_pos = 0
    opt = make_optimizer(config.optimizer, config.lr)
    log = TrajectoryLog()
    last_weight = {s.id: 1.0 / len(forget) for s in forget}
    lp = config.loss_params
    for epoch in range(config.epochs):
        order = rng.permutation(len(forget))
        for start in range(0, len(forget), config.batch_size):
            fb = [forget[i] for i in order[start:start + config.batch_size]]
            rb = []
            for _ in range(len(fb) if retain else 0):
                rb.append(retain[retain_order[r_pos % len(retain)]])
                r_pos += 1
            model, diag = unlearn_step(model, fb, rb, config, ref, opt,
                                       full_forget=forget if config.dro.full_set else None)
            for sid, w in zip(diag.sample_ids, diag.weights):
                last_weight[sid] = float(w)
            if callback is not None:
                callback(epoch, diag)
        with np.errstate(over="ignore", invalid="ignore"):
            for s in forget:
                loss = forget_loss(config.method, model, s, lp, ref)[0]
                ppl = perplexity(model, s)
                log.records.append((epoch, s.id, float(loss), ppl, last_weight[s.id]))
            log.retain_loss.append(float(np.mean([ce_loss(model, s) for s in retain])) if retain else 0.0)
        log.steps.append(opt.t)
    return model, log

