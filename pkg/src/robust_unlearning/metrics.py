"""Balance, memorization and membership-inference diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .toy_models import Sample, ToyModel, ce_loss, greedy_decode, position_logprobs, token_logprobs

NEVER = "never"
ATTACKS = ("LOSS", "MinK", "MinKpp")


def ppl_from_ce(ce: float) -> float:
    """exp(ce), saturating to inf once the float range is exceeded."""
    try:
        return math.exp(ce)
    except OverflowError:
        return math.inf


def perplexity(model: ToyModel, sample: Sample) -> float:
    return ppl_from_ce(ce_loss(model, sample))


def forget_epoch(ppl_trajectory, tau: float):
    """First epoch whose PPL reaches ``tau``, or ``NEVER``."""
    traj = list(ppl_trajectory)
    if not traj:
        raise ValueError("empty trajectory")
    if not tau > 1:
        raise ValueError("tau must exceed 1")
    for epoch, ppl in enumerate(traj):
        if ppl >= tau:
            return epoch
    return NEVER


def exact_match(model: ToyModel, sample: Sample) -> float:
    """Fraction of target positions whose teacher-forced argmax equals the target."""
    logp = position_logprobs(model, sample)
    pred = np.argmax(logp, axis=1)
    return float(np.mean(pred == np.asarray(sample.target)))


def extraction_strength(model: ToyModel, sample: Sample) -> float:
    """``1 - k/|y|`` for the shortest target prefix ``k`` after which greedy decoding finishes the target."""
    target = sample.target
    m = len(target)
    for k in range(m):
        rest = greedy_decode(model, sample.prompt + target[:k], m - k)
        if rest == target[k:]:
            return 1.0 - k / m
    return 0.0


def _lowest_k(values: np.ndarray, k: float) -> np.ndarray:
    if not 0 < k <= 1:
        raise ValueError("k must lie in (0, 1]")
    n = max(1, math.ceil(k * values.size - 1e-12))
    return np.argsort(values, kind="stable")[:n]


def mia_score(model: ToyModel, sample: Sample, attack: str = "LOSS", k: float = 0.2) -> float:
    """Membership score; higher means more member-like.

    ``MinKpp`` standardizes each token log-prob by the mean and standard
    deviation of ``log p`` under the model's next-token distribution, over
    the same lowest-``k`` token subset as ``MinK``.
    """
    if attack == "LOSS":
        return -ce_loss(model, sample)
    if attack == "MinK":
        lp = token_logprobs(model, sample)
        return float(lp[_lowest_k(lp, k)].mean())
    if attack == "MinKpp":
        logp = position_logprobs(model, sample)
        rows = np.arange(len(sample.target))
        lp = logp[rows, sample.target]
        p = np.exp(logp)
        mu = np.sum(p * logp, axis=1)
        var = np.maximum(np.sum(p * logp ** 2, axis=1) - mu ** 2, 0.0)
        sigma = np.sqrt(var)
        z = np.zeros_like(lp)
        ok = sigma > 1e-12
        z[ok] = (lp[ok] - mu[ok]) / sigma[ok]
        return float(z[_lowest_k(lp, k)].mean())
    raise ValueError(f"unknown attack {attack!r}")


def attack_auc(member_scores, nonmember_scores) -> float:
    """P(member score > non-member score), ties counted one half."""
    a = np.asarray(member_scores, dtype=np.float64)
    b = np.asarray(nonmember_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both score lists must be non-empty")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[:a.size].sum() - a.size * (a.size + 1) / 2
    return float(u / (a.size * b.size))


@dataclass
class BalanceReport:
    forget_epochs: dict[int, object]
    budget: int
    tau: float
    over_cap: float
    std: float
    iqr: float
    frac_unforgotten: float
    frac_over_forgotten: float

    def as_dict(self) -> dict[str, float]:
        return {
            "budget": self.budget,
            "tau": self.tau,
            "over_cap": self.over_cap,
            "forget_epoch_std": self.std,
            "forget_epoch_iqr": self.iqr,
            "frac_unforgotten": self.frac_unforgotten,
            "frac_over_forgotten": self.frac_over_forgotten,
        }


@dataclass
class PrivacyReport:
    auc_loss: float
    auc_mink: float
    auc_minkpp: float

    def as_dict(self) -> dict[str, float]:
        return {"auc_loss": self.auc_loss, "auc_mink": self.auc_mink,
                "auc_minkpp": self.auc_minkpp}


def censored_epochs(epochs: dict[int, object], budget: int) -> np.ndarray:
    """Forget epochs with ``NEVER`` mapped to ``budget``."""
    return np.array([budget if e == NEVER else e for e in epochs.values()], dtype=np.float64)


def balance_report(ppl_trajectories: dict[int, list[float]], tau: float,
                   over_cap: float, budget: int | None = None) -> BalanceReport:
    """Dispersion of forget epochs over the samples in ``ppl_trajectories``.

    Samples never forgotten count as ``budget`` (the number of logged
    epochs) in the std and IQR.
    """
    if not ppl_trajectories:
        raise ValueError("no trajectories")
    if budget is None:
        budget = max(len(t) for t in ppl_trajectories.values())
    epochs = {sid: forget_epoch(t, tau) for sid, t in sorted(ppl_trajectories.items())}
    vals = censored_epochs(epochs, budget)
    q75, q25 = np.percentile(vals, [75, 25])
    finals = np.array([t[-1] for _, t in sorted(ppl_trajectories.items())])
    return BalanceReport(
        forget_epochs=epochs,
        budget=budget,
        tau=tau,
        over_cap=over_cap,
        std=float(np.std(vals)),
        iqr=float(q75 - q25),
        frac_unforgotten=float(np.mean([e == NEVER for e in epochs.values()])),
        frac_over_forgotten=float(np.mean(finals > over_cap)),
    )


def mean_ppl(model: ToyModel, samples) -> float:
    return float(np.mean([perplexity(model, s) for s in samples]))


def privacy_report(model: ToyModel, members, nonmembers, k: float = 0.2) -> PrivacyReport:
    def auc(attack):
        return attack_auc([mia_score(model, s, attack, k) for s in members],
                          [mia_score(model, s, attack, k) for s in nonmembers])
    return PrivacyReport(auc("LOSS"), auc("MinK"), auc("MinKpp"))
