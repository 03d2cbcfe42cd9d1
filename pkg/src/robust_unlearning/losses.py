"""Per-sample forget losses and the forget/retain combination.

All losses aggregate over target tokens by the mean and return
``(scalar, gradient)`` with the gradient taken w.r.t. the model parameters.
Minimizing any forget loss here pushes the target likelihood down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .toy_models import (
    Sample,
    ToyModel,
    ce_loss_and_grad,
    loss_and_grad_from_coeffs,
    token_logprobs,
)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class LossParams:
    alpha_npo: float = 1.0
    alpha_sim: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.alpha_npo <= 0 or self.alpha_sim <= 0:
            raise ConfigurationError("alpha_npo and alpha_sim must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ConfigurationError("alpha1 and alpha2 must be non-negative")
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")


def log_sigmoid(x):
    """``log(sigmoid(x))`` without overflow for large ``|x|``."""
    return -np.logaddexp(0.0, -x)


def ga_loss(model: ToyModel, sample: Sample):
    """Mean target log-likelihood; minimizing it is gradient ascent on the NLL."""
    loss, grad = ce_loss_and_grad(model, sample)
    return -loss, -grad


def npo_loss(model: ToyModel, ref: ToyModel, sample: Sample, alpha: float = 1.0):
    """``-(2/alpha) log sigmoid(-alpha r)`` with ``r`` the mean log-ratio to ``ref``."""
    if not model.same_shape(ref):
        raise ConfigurationError("model and reference have different shapes")
    ref_mean = float(token_logprobs(ref, sample).mean())

    def fn(lp):
        m = lp.size
        r = lp.mean() - ref_mean
        loss = -(2.0 / alpha) * log_sigmoid(-alpha * r)
        return loss, np.full(m, 2.0 * expit(alpha * r) / m)

    return loss_and_grad_from_coeffs(model, sample, fn)


def simnpo_loss(model: ToyModel, sample: Sample, alpha: float = 1.0):
    """Reference-free NPO on the length-normalized sequence log-likelihood."""
    def fn(lp):
        m = lp.size
        z = (alpha / m) * lp.sum()
        loss = -(2.0 / alpha) * log_sigmoid(-z)
        return loss, np.full(m, 2.0 * expit(z) / m)

    return loss_and_grad_from_coeffs(model, sample, fn)


def satimp_weights(model: ToyModel, sample: Sample, alpha1: float, alpha2: float) -> np.ndarray:
    p = np.exp(token_logprobs(model, sample))
    return p ** alpha1 * (1.0 - p) ** alpha2


def satimp_loss(model: ToyModel, sample: Sample, alpha1: float = 1.0, alpha2: float = 1.0,
                weights: np.ndarray | None = None):
    """Token-weighted log-likelihood; the weights carry no gradient.

    Passing ``weights`` freezes them (used to finite-difference the objective
    that the returned gradient actually differentiates).
    """
    if weights is None:
        weights = satimp_weights(model, sample, alpha1, alpha2)
    weights = np.asarray(weights, dtype=np.float64)

    def fn(lp):
        m = lp.size
        return float(np.mean(weights * lp)), weights / m

    return loss_and_grad_from_coeffs(model, sample, fn)


def retain_loss(model: ToyModel, sample: Sample):
    return ce_loss_and_grad(model, sample)


def forget_loss(method: str, model: ToyModel, sample: Sample, params: LossParams,
                ref: ToyModel | None = None):
    """Dispatch on the unlearning method name (GD shares GA's forget term)."""
    if method in ("GA", "GD"):
        return ga_loss(model, sample)
    if method == "NPO":
        if ref is None:
            raise ConfigurationError("NPO needs a reference model")
        return npo_loss(model, ref, sample, params.alpha_npo)
    if method == "SimNPO":
        return simnpo_loss(model, sample, params.alpha_sim)
    if method == "SatImp":
        return satimp_loss(model, sample, params.alpha1, params.alpha2)
    raise ConfigurationError(f"unknown method {method!r}")


def combined_objective(forget_term, retain_term, lam: float):
    """``l_f + lam * l_r`` and the matching gradient."""
    lf, gf = forget_term
    lr, gr = retain_term
    gf, gr = np.asarray(gf), np.asarray(gr)
    if gf.shape != gr.shape:
        raise ValueError(f"gradient length mismatch: {gf.shape} vs {gr.shape}")
    return lf + lam * lr, gf + lam * gr
