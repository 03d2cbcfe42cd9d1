"""Synthetic retain/forget/holdout corpora with controllable forgetting difficulty.

Difficulty is set per forget sample through its pretraining duplication
factor: a sample seen more often during pretraining is memorized more
deeply and is slower to unlearn.

File format (UTF-8, LF): a section line ``#split <name>`` opens each of the
``retain``, ``forget`` and ``holdout`` splits, followed by one record per line::

    id<TAB>dup<TAB>prompt tokens space-separated<TAB>target tokens space-separated
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .toy_models import Sample

SPLITS = ("retain", "forget", "holdout")


class CorpusFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class DatasetSpec:
    vocab_size: int
    n_retain: int
    n_forget: int
    prompt_len: int
    target_len: int
    dup_factors: tuple[int, ...]
    seed: int = 0
    n_holdout: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "dup_factors", tuple(int(d) for d in self.dup_factors))
        for name in ("vocab_size", "prompt_len", "target_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_retain < 0 or self.n_forget < 0:
            raise ValueError("split sizes must be non-negative")
        if len(self.dup_factors) != self.n_forget:
            raise ValueError("dup_factors must have one entry per forget sample")
        if any(d < 1 for d in self.dup_factors):
            raise ValueError("dup_factors must be positive")

    @property
    def holdout_size(self) -> int:
        return self.n_forget if self.n_holdout is None else self.n_holdout


@dataclass(frozen=True)
class Corpus:
    retain: tuple[Sample, ...] = field(default_factory=tuple)
    forget: tuple[Sample, ...] = field(default_factory=tuple)
    holdout: tuple[Sample, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in SPLITS:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        ids = [s.id for name in SPLITS for s in getattr(self, name)]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique across splits")


def synthesize(spec: DatasetSpec) -> Corpus:
    """Draw a corpus deterministically from ``spec.seed``.

    All targets are distinct, so no holdout target occurs in retain or forget.
    """
    V, L = spec.vocab_size, spec.target_len
    n_total = spec.n_retain + spec.n_forget + spec.holdout_size
    if V ** L < n_total:
        raise ValueError(
            f"vocab_size={V} with target_len={L} admits only {V ** L} distinct "
            f"targets; {n_total} are needed")
    rng = np.random.default_rng(spec.seed)
    seen: set[tuple[int, ...]] = set()

    def draw(sample_id: int, dup: int) -> Sample:
        prompt = rng.integers(0, V, size=spec.prompt_len)
        while True:
            target = tuple(int(t) for t in rng.integers(0, V, size=L))
            if target not in seen:
                seen.add(target)
                break
        return Sample(sample_id, tuple(prompt.tolist()), target, dup)

    next_id = 0
    splits = {}
    for name, count, dups in (
        ("retain", spec.n_retain, [1] * spec.n_retain),
        ("forget", spec.n_forget, spec.dup_factors),
        ("holdout", spec.holdout_size, [1] * spec.holdout_size),
    ):
        splits[name] = [draw(next_id + i, dups[i]) for i in range(count)]
        next_id += count
    return Corpus(**splits)


def _format_sample(s: Sample) -> str:
    return "\t".join([str(s.id), str(s.dup_factor),
                      " ".join(map(str, s.prompt)), " ".join(map(str, s.target))])


def dumps_corpus(corpus: Corpus) -> str:
    lines = []
    for name in SPLITS:
        lines.append(f"#split {name}")
        lines.extend(_format_sample(s) for s in getattr(corpus, name))
    return "\n".join(lines) + "\n"


def loads_corpus(text: str) -> Corpus:
    splits: dict[str, list[Sample]] = {name: [] for name in SPLITS}
    current = None
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue
        if line.startswith("#split "):
            current = line[len("#split "):].strip()
            if current not in splits:
                raise CorpusFormatError(lineno, f"unknown split {current!r}")
            continue
        if current is None:
            raise CorpusFormatError(lineno, "record before any '#split' line")
        fields = line.split("\t")
        if len(fields) != 4:
            raise CorpusFormatError(lineno, f"expected 4 tab-separated fields, got {len(fields)}")
        try:
            sid, dup = int(fields[0]), int(fields[1])
            prompt = [int(t) for t in fields[2].split()]
            target = [int(t) for t in fields[3].split()]
            splits[current].append(Sample(sid, tuple(prompt), tuple(target), dup))
        except ValueError as exc:
            raise CorpusFormatError(lineno, str(exc)) from None
    try:
        return Corpus(**splits)
    except ValueError as exc:
        raise CorpusFormatError(0, str(exc)) from None


def write_corpus(corpus: Corpus, path) -> None:
    Path(path).write_bytes(dumps_corpus(corpus).encode("utf-8"))


def read_corpus(path) -> Corpus:
    return loads_corpus(Path(path).read_bytes().decode("utf-8"))
