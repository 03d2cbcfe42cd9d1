"""Distributionally robust aggregation of per-sample forget losses.

Two inner-maximization realizations over a KL ball around the empirical
batch distribution:

DV (continuous)
    The worst-case distribution tilts the uniform batch weights by
    ``exp(loss / beta)``; the resulting objective is the smoothed maximum
    ``beta * log(mean(exp(loss / beta)))`` whose gradient is the
    tilted-weight average of the per-sample gradients.

G (discrete)
    All mass goes to the hardest part of the batch: either the top
    ``rho`` fraction of losses or the group with the largest mean loss.

``beta -> inf`` recovers the plain mean and ``beta -> 0`` the hardest sample,
i.e. G with singleton groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

NONE = "none"
G = "G"
DV = "DV"


@dataclass(frozen=True)
class AdversarialWeights:
    weights: np.ndarray
    beta: float
    kl_to_empirical: float


@dataclass(frozen=True)
class DroConfig:
    """DRO variant selection.

    ``eta`` (the KL radius) is recorded only: with beta fixed it adds a
    constant to the objective. ``groups`` is a per-sample group id array for
    the G variant; when absent, G selects the top ``rho`` fraction.
    """

    variant: str = NONE
    beta: float = 2.0
    rho: float = 0.5
    groups: tuple[int, ...] | None = None
    eta: float = 0.0
    retain: bool = False
    full_set: bool = False

    def __post_init__(self):
        if self.variant not in (NONE, G, DV):
            raise ValueError(f"unknown DRO variant {self.variant!r}")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.variant == DV and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


def _as_losses(losses) -> np.ndarray:
    arr = np.asarray(losses, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite loss in batch")
    return arr


def _check_beta(beta):
    if not beta > 0:
        raise ValueError("beta must be positive")


def dv_objective(losses, beta: float) -> float:
    """``beta * log(mean(exp(losses / beta)))``, evaluated without overflow."""
    _check_beta(beta)
    z = _as_losses(losses) / beta
    return float(beta * (logsumexp(z) - math.log(z.size)))


def dv_weights(losses, beta: float) -> AdversarialWeights:
    """Worst-case batch distribution: softmax of ``losses / beta``."""
    _check_beta(beta)
    w = softmax(_as_losses(losses) / beta)
    n = w.size
    nz = w > 0
    kl = float(np.sum(w[nz] * np.log(n * w[nz])))
    return AdversarialWeights(w, float(beta), max(kl, 0.0))


def _as_grads(per_sample_grads, n: int) -> np.ndarray:
    grads = np.asarray(per_sample_grads, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] != n:
        raise ValueError(f"expected {n} per-sample gradients, got shape {grads.shape}")
    return grads


def dv_grad(per_sample_grads, losses, beta: float) -> np.ndarray:
    """Gradient of :func:`dv_objective` given per-sample loss gradients."""
    w = dv_weights(losses, beta).weights
    return w @ _as_grads(per_sample_grads, w.size)


def dual_primal_residual(losses, beta: float) -> float:
    """``|E_Q*[loss] - beta * KL(Q* || uniform) - dv_objective|``; zero in exact arithmetic."""
    losses = _as_losses(losses)
    aw = dv_weights(losses, beta)
    primal = float(aw.weights @ losses) - beta * aw.kl_to_empirical
    return abs(primal - dv_objective(losses, beta))


def top_fraction_select(losses, rho: float) -> np.ndarray:
    """Indices (ascending) of the ``ceil(rho * n)`` largest losses, ties to lower index."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    losses = _as_losses(losses)
    k = min(losses.size, math.ceil(rho * losses.size - 1e-12))
    order = np.argsort(-losses, kind="stable")
    return np.sort(order[:k])


def group_max_loss(losses, group_assignment) -> tuple[int, float]:
    """Group with the largest mean loss (lowest id on ties) and that mean."""
    losses = _as_losses(losses)
    groups = np.asarray(group_assignment, dtype=np.int64)
    if groups.shape != losses.shape:
        raise ValueError("group assignment must cover every sample")
    if groups.min() < 0:
        raise ValueError("group ids must be non-negative")
    counts = np.bincount(groups)
    if np.any(counts == 0):
        raise ValueError(f"empty group(s): {np.flatnonzero(counts == 0).tolist()}")
    means = np.bincount(groups, weights=losses) / counts
    g = int(np.argmax(means))
    return g, float(means[g])


def g_selection(losses, config: DroConfig) -> np.ndarray:
    """Indices receiving mass under the G variant."""
    if config.groups is not None:
        g, _ = group_max_loss(losses, config.groups)
        return np.flatnonzero(np.asarray(config.groups) == g)
    return top_fraction_select(losses, config.rho)


def g_variant_grad(per_sample_grads, losses, config: DroConfig) -> np.ndarray:
    losses = _as_losses(losses)
    grads = _as_grads(per_sample_grads, losses.size)
    sel = g_selection(losses, config)
    return grads[sel].mean(axis=0)


def batch_weights(losses, config: DroConfig) -> np.ndarray:
    """Per-sample aggregation weights (sum to one) for any variant."""
    losses = _as_losses(losses)
    n = losses.size
    if config.variant == DV:
        return dv_weights(losses, config.beta).weights
    if config.variant == G:
        w = np.zeros(n)
        sel = g_selection(losses, config)
        w[sel] = 1.0 / sel.size
        return w
    return np.full(n, 1.0 / n)


def aggregate(losses, per_sample_grads, config: DroConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """Robust batch objective, its gradient, and the weights used."""
    losses = _as_losses(losses)
    grads = _as_grads(per_sample_grads, losses.size)
    w = batch_weights(losses, config)
    if config.variant == DV:
        value = dv_objective(losses, config.beta)
    else:
        value = float(w @ losses)
    # one reduction path for all variants keeps degenerate cases bit-identical
    return value, w @ grads, w
