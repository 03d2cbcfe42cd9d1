"""Toy next-token language models with analytic gradients.

Two variants are provided, both conditioning on a fixed-order Markov context
of the ``context_order`` preceding tokens (positions before the start of the
sequence are filled with a reserved begin token whose id is ``V``):

* ``tabular`` -- one free logit row per context state.
* ``mlp`` -- embedding -> tanh hidden layer -> vocabulary logits.

Every loss in the package is a function of the per-target-token
log-probabilities, so gradients are assembled from per-token coefficients
``dL/dlogp_k`` via :func:`loss_and_grad_from_coeffs`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax

TABULAR = "tabular"
MLP = "mlp"
VARIANTS = (TABULAR, MLP)


class TokenRangeError(ValueError):
    """A token id lies outside ``[0, V)``."""


class GradCheckError(RuntimeError):
    """The loss became non-finite while probing finite differences."""


@dataclass(frozen=True)
class Sample:
    """A (prompt, target) token pair; ``dup_factor`` is its pretraining repetition count."""

    id: int
    prompt: tuple[int, ...]
    target: tuple[int, ...]
    dup_factor: int = 1

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        object.__setattr__(self, "target", tuple(int(t) for t in self.target))
        if not self.target:
            raise ValueError(f"sample {self.id}: empty target")
        if self.dup_factor < 1:
            raise ValueError(f"sample {self.id}: dup_factor must be >= 1")


@dataclass(frozen=True, eq=False)
class ToyModel:
    variant: str
    vocab_size: int
    context_order: int
    params: np.ndarray = field(repr=False)
    embed_dim: int = 0
    hidden_dim: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.vocab_size < 1 or self.context_order < 1:
            raise ValueError("vocab_size and context_order must be positive")
        if self.variant == MLP and (self.embed_dim < 1 or self.hidden_dim < 1):
            raise ValueError("mlp variant needs positive embed_dim and hidden_dim")
        params = np.array(self.params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters, got shape {params.shape}"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def bos(self) -> int:
        return self.vocab_size

    @property
    def n_states(self) -> int:
        return (self.vocab_size + 1) ** self.context_order

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        V, k = self.vocab_size, self.context_order
        if self.variant == TABULAR:
            return [(self.n_states, V)]
        d, h = self.embed_dim, self.hidden_dim
        return [(V + 1, d), (k * d, h), (h,), (h, V), (V,)]

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes))

    @property
    def dims(self) -> tuple[int, ...]:
        """Shape-defining integers beyond V and the order (serialization header)."""
        return () if self.variant == TABULAR else (self.embed_dim, self.hidden_dim)

    def unpack(self, flat: np.ndarray | None = None) -> list[np.ndarray]:
        flat = self.params if flat is None else flat
        out, start = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(flat[start:start + size].reshape(shape))
            start += size
        return out

    def with_params(self, params: np.ndarray) -> "ToyModel":
        return ToyModel(self.variant, self.vocab_size, self.context_order,
                        params, self.embed_dim, self.hidden_dim)

    def same_shape(self, other: "ToyModel") -> bool:
        return (self.variant, self.vocab_size, self.context_order, self.dims) == (
            other.variant, other.vocab_size, other.context_order, other.dims)

    def __eq__(self, other):
        if not isinstance(other, ToyModel):
            return NotImplemented
        return self.same_shape(other) and np.array_equal(self.params, other.params)

    __hash__ = None


def init_model(variant: str = TABULAR, vocab_size: int = 64, context_order: int = 2,
               seed: int = 0, embed_dim: int = 8, hidden_dim: int = 32,
               scale: float = 0.1) -> ToyModel:
    """Seeded uniform initialization in ``[-scale, scale]``."""
    if variant == TABULAR:
        embed_dim = hidden_dim = 0
    n = _count(variant, vocab_size, context_order, embed_dim, hidden_dim)
    rng = np.random.default_rng(seed)
    return ToyModel(variant, vocab_size, context_order,
                    rng.uniform(-scale, scale, size=n), embed_dim, hidden_dim)


def _count(variant, V, k, d, h):
    if variant == TABULAR:
        return (V + 1) ** k * V
    return (V + 1) * d + k * d * h + h + h * V + V


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _check_tokens(model: ToyModel, tokens: Sequence[int]):
    for t in tokens:
        if not 0 <= t < model.vocab_size:
            raise TokenRangeError(f"token id {t} outside [0, {model.vocab_size})")


def _contexts(model: ToyModel, prompt: Sequence[int], target: Sequence[int]) -> np.ndarray:
    k = model.context_order
    seq = [model.bos] * k + list(prompt) + list(target)
    start = k + len(prompt)
    return np.array([seq[i - k:i] for i in range(start, start + len(target))],
                    dtype=np.int64).reshape(len(target), k)


def _state_index(model: ToyModel, ctx: np.ndarray) -> np.ndarray:
    base = model.vocab_size + 1
    idx = np.zeros(ctx.shape[0], dtype=np.int64)
    for j in range(ctx.shape[1]):
        idx = idx * base + ctx[:, j]
    return idx


def _forward(model: ToyModel, ctx: np.ndarray):
    if model.variant == TABULAR:
        (table,) = model.unpack()
        rows = _state_index(model, ctx)
        return table[rows], rows
    emb, w1, b1, w2, b2 = model.unpack()
    x = emb[ctx].reshape(ctx.shape[0], -1)
    hid = np.tanh(x @ w1 + b1)
    return hid @ w2 + b2, (x, hid)


def _backward(model: ToyModel, ctx: np.ndarray, cache, dlogits: np.ndarray,
              out: np.ndarray | None = None) -> np.ndarray:
    """Accumulate ``dL/dparams`` into ``out`` (allocated if omitted)."""
    if out is None:
        out = np.zeros(model.n_params)
    parts = model.unpack(out)
    if model.variant == TABULAR:
        np.add.at(parts[0], cache, dlogits)
        return out
    g_emb, g_w1, g_b1, g_w2, g_b2 = parts
    x, hid = cache
    _, w1, _, w2, _ = model.unpack()
    g_w2 += hid.T @ dlogits
    g_b2 += dlogits.sum(axis=0)
    dpre = (dlogits @ w2.T) * (1.0 - hid ** 2)
    g_w1 += x.T @ dpre
    g_b1 += dpre.sum(axis=0)
    dx = (dpre @ w1.T).reshape(ctx.shape[0], ctx.shape[1], -1)
    np.add.at(g_emb, ctx, dx)
    return out


def next_token_logprobs(model: ToyModel, context: Sequence[int]) -> np.ndarray:
    """Log-distribution over the vocabulary after the given token history."""
    _check_tokens(model, context)
    k = model.context_order
    window = ([model.bos] * k + list(context))[-k:]
    logits, _ = _forward(model, np.array([window], dtype=np.int64))
    return log_softmax(logits[0])


def position_logprobs(model: ToyModel, sample: Sample) -> np.ndarray:
    """Full log-distributions (|y| x V) at every target position."""
    _check_tokens(model, sample.prompt)
    _check_tokens(model, sample.target)
    logits, _ = _forward(model, _contexts(model, sample.prompt, sample.target))
    return log_softmax(logits, axis=1)


def token_logprobs(model: ToyModel, sample: Sample) -> np.ndarray:
    """``log pi(y_k | context)`` for each target token."""
    logp = position_logprobs(model, sample)
    return logp[np.arange(len(sample.target)), sample.target]


def loss_and_grad_from_coeffs(
    model: ToyModel,
    sample: Sample,
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    out: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Evaluate a loss of the token log-probs and its parameter gradient.

    ``fn`` maps the vector of target-token log-probs to ``(loss, dloss/dlogp)``.
    Uses ``dlogp_k/dlogits_k = onehot(y_k) - softmax(logits_k)``.
    """
    _check_tokens(model, sample.prompt)
    _check_tokens(model, sample.target)
    ctx = _contexts(model, sample.prompt, sample.target)
    logits, cache = _forward(model, ctx)
    logp = log_softmax(logits, axis=1)
    rows = np.arange(len(sample.target))
    loss, coeffs = fn(logp[rows, sample.target])
    dlogits = -np.exp(logp)
    dlogits[rows, sample.target] += 1.0
    dlogits *= np.asarray(coeffs)[:, None]
    return float(loss), _backward(model, ctx, cache, dlogits, out)


def ce_loss_and_grad(model: ToyModel, sample: Sample) -> tuple[float, np.ndarray]:
    """Mean-per-token negative log-likelihood of the target and its gradient."""
    def fn(lp):
        m = lp.size
        return -lp.mean(), np.full(m, -1.0 / m)
    return loss_and_grad_from_coeffs(model, sample, fn)


def ce_loss(model: ToyModel, sample: Sample) -> float:
    return float(-token_logprobs(model, sample).mean())


def grad_check(model: ToyModel, loss_fn: Callable[[ToyModel], tuple[float, np.ndarray]],
               step: float = 1e-5) -> float:
    """Max relative discrepancy between analytic and central-difference gradients.

    ``loss_fn(model)`` returns ``(loss, grad)``; the discrepancy per parameter
    is ``|g_analytic - g_fd| / max(1, |g_fd|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, analytic = loss_fn(model)
    base = model.params
    fd = np.empty_like(base)
    probe = base.copy()
    for i in range(base.size):
        probe[i] = base[i] + step
        up = loss_fn(model.with_params(probe))[0]
        probe[i] = base[i] - step
        down = loss_fn(model.with_params(probe))[0]
        probe[i] = base[i]
        if not (np.isfinite(up) and np.isfinite(down)):
            raise GradCheckError(f"non-finite loss probing parameter {i}")
        fd[i] = (up - down) / (2 * step)
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))


def greedy_decode(model: ToyModel, prompt: Sequence[int], length: int) -> tuple[int, ...]:
    """Argmax continuation of ``prompt``; ties go to the lowest token id."""
    if length < 0:
        raise ValueError("length must be >= 0")
    history = list(prompt)
    out = []
    for _ in range(length):
        # np.argmax returns the first maximal index
        tok = int(np.argmax(next_token_logprobs(model, history)))
        out.append(tok)
        history.append(tok)
    return tuple(out)
