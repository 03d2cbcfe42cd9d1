"""Batch front-end: ``gen-data``, ``pretrain``, ``unlearn``, ``eval``, ``sweep``.

Every command reads a flat ``key = value`` config, writes its artifacts into
the ``--out`` directory together with a ``manifest.json``, and exits with
0 on success, 2 on configuration/input errors and 3 on numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dro
from .data import CorpusFormatError, DatasetSpec, read_corpus, synthesize, write_corpus
from .losses import ConfigurationError, LossParams
from .metrics import (
    balance_report,
    exact_match,
    extraction_strength,
    mean_ppl,
    mia_score,
    perplexity,
    ppl_from_ce,
    privacy_report,
)
from .toy_models import TABULAR, TokenRangeError, ToyModel, ce_loss, init_model
from .trainer import DivergenceError, TrajectoryLog, UnlearnConfig, pretrain, run_unlearning

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

CORPUS_FILE = "corpus.tsv"
MODEL_FILE = "model.txt"
TRAJECTORY_FILE = "trajectory.csv"
BALANCE_FILE = "balance_report.txt"
PRIVACY_FILE = "privacy_report.txt"
PER_SAMPLE_FILE = "per_sample.csv"
SWEEP_FILE = "sweep.csv"
MANIFEST_FILE = "manifest.json"

BALANCE_KEYS = ("budget", "tau", "over_cap", "forget_epoch_std", "forget_epoch_iqr",
                "frac_unforgotten", "frac_over_forgotten", "retain_ppl", "ref_retain_ppl")
PRIVACY_KEYS = ("auc_loss", "auc_mink", "auc_minkpp", "mink_k", "n_members", "n_nonmembers")
PER_SAMPLE_COLUMNS = ("sample_id", "split", "ppl", "ref_ppl", "forget_epoch",
                      "exact_match", "extraction_strength", "score_loss", "score_mink",
                      "score_minkpp")
SWEEP_COLUMNS = ("beta", "lambda", "status", "forget_epoch_std", "forget_epoch_iqr",
                 "retain_ppl", "auc_loss", "auc_mink", "auc_minkpp")


class InputError(Exception):
    """Bad configuration or input files (exit code 2)."""


# (key, parser, default); default None marks a required key
def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(",", " ").split())


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


GEN_SCHEMA = {
    "vocab_size": (int, None),
    "n_retain": (int, None),
    "n_forget": (int, None),
    "prompt_len": (int, None),
    "target_len": (int, None),
    "dup_factors": (_ints, None),
    "n_holdout": (int, -1),
    "seed": (int, 0),
}
PRETRAIN_SCHEMA = {
    "vocab_size": (int, -1),
    "variant": (str, TABULAR),
    "context_order": (int, 2),
    "embed_dim": (int, 8),
    "hidden_dim": (int, 32),
    "init_scale": (float, 0.1),
    "lr": (float, 0.05),
    "epochs": (int, 20),
    "batch_size": (int, 16),
    "optimizer": (str, "adam"),
    "seed": (int, 0),
}
UNLEARN_SCHEMA = {
    "method": (str, "NPO"),
    "dro": (str, dro.DV),
    "beta": (float, 2.0),
    "rho": (float, 0.5),
    "eta": (float, 0.0),
    "group_by": (str, "none"),
    "retain_dro": (_bool, False),
    "dro_full_set": (_bool, False),
    "lambda": (float, 1.0),
    "alpha_npo": (float, 1.0),
    "alpha_sim": (float, 1.0),
    "alpha1": (float, 1.0),
    "alpha2": (float, 1.0),
    "lr": (float, 1e-2),
    "batch_size": (int, 8),
    "epochs": (int, 10),
    "optimizer": (str, "adam"),
    "seed": (int, 0),
}
EVAL_SCHEMA = {
    "tau": (float, -1.0),
    "over_cap": (float, -1.0),
    "mink_k": (float, 0.2),
}
GRID_SCHEMA = {
    "beta": (_floats, None),
    "lambda": (_floats, None),
}


# ---------------------------------------------------------------------------
# config and file helpers
# ---------------------------------------------------------------------------

def parse_config(text: str, schema: dict) -> dict:
    """Parse a flat ``key = value`` file against ``schema``; unknown keys are errors."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in schema:
            raise InputError(f"unknown config key {key!r}")
        if key in raw:
            raise InputError(f"duplicate config key {key!r}")
        raw[key] = value
    out = {}
    for key, (conv, default) in schema.items():
        if key not in raw:
            if default is None:
                raise InputError(f"missing required config key {key!r}")
            out[key] = default
            continue
        try:
            out[key] = conv(raw[key])
        except ValueError as exc:
            raise InputError(f"bad value for config key {key!r}: {exc}") from None
    return out


def load_config(path, schema: dict) -> dict:
    if path is None:
        return parse_config("", schema)
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), schema)


def dumps_model(model: ToyModel) -> str:
    header = " ".join([model.variant, str(model.vocab_size), str(model.context_order),
                       *map(str, model.dims)])
    return header + "\n" + "".join(f"{x!r}\n" for x in model.params.tolist())


def loads_model(text: str) -> ToyModel:
    lines = text.split("\n")
    head = lines[0].split()
    if len(head) < 3:
        raise InputError("model header must be 'variant V order dims...'")
    try:
        variant, V, k = head[0], int(head[1]), int(head[2])
        dims = [int(x) for x in head[3:]]
        params = np.array([float(x) for x in lines[1:] if x.strip()])
        if variant == TABULAR:
            return ToyModel(variant, V, k, params)
        return ToyModel(variant, V, k, params, dims[0], dims[1])
    except (ValueError, IndexError) as exc:
        raise InputError(f"malformed model file: {exc}") from None


def write_model(model: ToyModel, path) -> None:
    Path(path).write_bytes(dumps_model(model).encode("utf-8"))


def read_model(path) -> ToyModel:
    return loads_model(_require(path).read_text(encoding="utf-8"))


def _require(path) -> Path:
    if path is None:
        raise InputError("missing required input path")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {p}")
    return p


def _load_corpus(path):
    try:
        return read_corpus(_require(path))
    except CorpusFormatError as exc:
        raise InputError(f"{path}: {exc}") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _kv_block(d: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in d.items())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_manifest(out: Path, command: str, config: dict, inputs: dict, outputs: list,
                    seed: int, started: float) -> None:
    manifest = {
        "command": command,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in config.items()},
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": _sha256(Path(p))}
                   for name, p in inputs.items() if p is not None},
        "outputs": {name: _sha256(out / name) for name in outputs},
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


def _outdir(path) -> Path:
    if path is None:
        raise InputError("--out is required")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def unlearn_config_from(cfg: dict, corpus=None) -> UnlearnConfig:
    try:
        dcfg = dro.DroConfig(variant=cfg["dro"] if cfg["dro"] != "none" else dro.NONE,
                             beta=cfg["beta"], rho=cfg["rho"], eta=cfg["eta"],
                             retain=cfg["retain_dro"], full_set=cfg["dro_full_set"])
        groups = None
        if cfg["group_by"] == "dup":
            if corpus is not None:
                groups = {s.id: s.dup_factor for s in corpus.forget}
        elif cfg["group_by"] != "none":
            raise ConfigurationError(f"group_by must be 'none' or 'dup', got {cfg['group_by']!r}")
        return UnlearnConfig(
            method=cfg["method"], dro=dcfg,
            loss_params=LossParams(cfg["alpha_npo"], cfg["alpha_sim"], cfg["alpha1"],
                                   cfg["alpha2"], cfg["lambda"]),
            lr=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
            optimizer=cfg["optimizer"], seed=cfg["seed"], sample_groups=groups)
    except ValueError as exc:
        raise InputError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config, GEN_SCHEMA)
    if args.seed is not None:
        cfg["seed"] = args.seed
    dups = cfg["dup_factors"]
    if dups and len(dups) < cfg["n_forget"]:
        # a short list is assigned round-robin
        dups = tuple(dups[i % len(dups)] for i in range(cfg["n_forget"]))
    try:
        spec = DatasetSpec(cfg["vocab_size"], cfg["n_retain"], cfg["n_forget"],
                           cfg["prompt_len"], cfg["target_len"], dups, cfg["seed"],
                           None if cfg["n_holdout"] < 0 else cfg["n_holdout"])
        corpus = synthesize(spec)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = _outdir(args.out)
    write_corpus(corpus, out / CORPUS_FILE)
    _write_manifest(out, "gen-data", cfg, {"config": args.config}, [CORPUS_FILE],
                    cfg["seed"], started)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config, PRETRAIN_SCHEMA)
    if args.seed is not None:
        cfg["seed"] = args.seed
    corpus = _load_corpus(args.corpus)
    V = cfg["vocab_size"]
    if V < 0:
        V = 1 + max(t for name in ("retain", "forget", "holdout")
                    for s in getattr(corpus, name) for t in s.prompt + s.target)
    try:
        model = init_model(cfg["variant"], V, cfg["context_order"], cfg["seed"],
                           cfg["embed_dim"], cfg["hidden_dim"], cfg["init_scale"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    log = TrajectoryLog()

    def on_epoch(epoch, m):
        for s in corpus.forget:
            ce = ce_loss(m, s)
            log.records.append((epoch, s.id, ce, ppl_from_ce(ce), float(s.dup_factor)))
        log.steps.append(epoch)

    model = pretrain(model, corpus, cfg["lr"], cfg["epochs"], cfg["seed"],
                     cfg["batch_size"], cfg["optimizer"], on_epoch=on_epoch)
    out = _outdir(args.out)
    write_model(model, out / MODEL_FILE)
    (out / TRAJECTORY_FILE).write_bytes(log.to_csv().encode("utf-8"))
    _write_manifest(out, "pretrain", cfg, {"config": args.config, "corpus": args.corpus},
                    [MODEL_FILE, TRAJECTORY_FILE], cfg["seed"], started)
    return EXIT_OK


def cmd_unlearn(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config, UNLEARN_SCHEMA)
    if args.seed is not None:
        cfg["seed"] = args.seed
    corpus = _load_corpus(args.corpus)
    model = read_model(args.model)
    config = unlearn_config_from(cfg, corpus)
    try:
        model, log = run_unlearning(model, corpus, config)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = _outdir(args.out)
    write_model(model, out / MODEL_FILE)
    (out / TRAJECTORY_FILE).write_bytes(log.to_csv().encode("utf-8"))
    _write_manifest(out, "unlearn", cfg,
                    {"config": args.config, "corpus": args.corpus, "model": args.model},
                    [MODEL_FILE, TRAJECTORY_FILE], cfg["seed"], started)
    return EXIT_OK


def evaluate(model: ToyModel, ref: ToyModel, corpus, cfg: dict, trajectory: TrajectoryLog | None):
    """Balance report, privacy report and per-sample rows for one model."""
    if not model.same_shape(ref):
        raise InputError("model and reference model shapes differ")
    if not corpus.holdout:
        raise InputError("corpus has no holdout split (needed for membership inference)")
    if not corpus.forget:
        raise InputError("corpus has no forget split")
    ref_retain = mean_ppl(ref, corpus.retain) if corpus.retain else 1.0
    tau = cfg["tau"] if cfg["tau"] > 0 else 2.0 * ref_retain
    cap = cfg["over_cap"] if cfg["over_cap"] > 0 else 10.0 * ref_retain
    if trajectory is not None and trajectory.records:
        trajs = trajectory.ppl_trajectories()
    else:
        trajs = {s.id: [perplexity(model, s)] for s in corpus.forget}
    br = balance_report(trajs, tau, cap)
    k = cfg["mink_k"]
    pr = privacy_report(model, corpus.forget, corpus.holdout, k)
    balance = br.as_dict()
    balance["retain_ppl"] = mean_ppl(model, corpus.retain) if corpus.retain else float("nan")
    balance["ref_retain_ppl"] = ref_retain
    privacy = pr.as_dict()
    privacy.update(mink_k=k, n_members=len(corpus.forget), n_nonmembers=len(corpus.holdout))
    rows = []
    for split in ("retain", "forget", "holdout"):
        for s in getattr(corpus, split):
            fe = br.forget_epochs.get(s.id, "") if split == "forget" else ""
            rows.append((s.id, split, perplexity(model, s), perplexity(ref, s), fe,
                         exact_match(model, s), extraction_strength(model, s),
                         mia_score(model, s, "LOSS"), mia_score(model, s, "MinK", k),
                         mia_score(model, s, "MinKpp", k)))
    return balance, privacy, rows


def cmd_eval(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config, EVAL_SCHEMA)
    model = read_model(args.model)
    ref = read_model(args.ref)
    corpus = _load_corpus(args.corpus)
    trajectory = None
    if args.trajectory is not None:
        try:
            trajectory = TrajectoryLog.from_csv(_require(args.trajectory).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise InputError(f"{args.trajectory}: {exc}") from None
    balance, privacy, rows = evaluate(model, ref, corpus, cfg, trajectory)
    out = _outdir(args.out)
    (out / BALANCE_FILE).write_bytes(_kv_block(balance).encode("utf-8"))
    (out / PRIVACY_FILE).write_bytes(_kv_block(privacy).encode("utf-8"))
    buf = io.StringIO()
    buf.write(",".join(PER_SAMPLE_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    (out / PER_SAMPLE_FILE).write_bytes(buf.getvalue().encode("utf-8"))
    _write_manifest(out, "eval", cfg,
                    {"config": args.config, "model": args.model, "ref": args.ref,
                     "corpus": args.corpus, "trajectory": args.trajectory},
                    [BALANCE_FILE, PRIVACY_FILE, PER_SAMPLE_FILE], 0, started)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config, UNLEARN_SCHEMA)
    if args.seed is not None:
        cfg["seed"] = args.seed
    grid = parse_config(_require(args.grid).read_text(encoding="utf-8"), GRID_SCHEMA)
    if not grid["beta"] or not grid["lambda"]:
        raise InputError("grid must list at least one beta and one lambda")
    corpus = _load_corpus(args.corpus)
    original = read_model(args.model)
    eval_cfg = parse_config("", EVAL_SCHEMA)
    buf = io.StringIO()
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for beta in grid["beta"]:
        for lam in grid["lambda"]:
            cell = dict(cfg, beta=beta, **{"lambda": lam})
            try:
                config = unlearn_config_from(cell, corpus)
                model, log = run_unlearning(original, corpus, config)
                balance, privacy, _ = evaluate(model, original, corpus, eval_cfg, log)
                vals = ["ok", balance["forget_epoch_std"], balance["forget_epoch_iqr"],
                        balance["retain_ppl"], privacy["auc_loss"], privacy["auc_mink"],
                        privacy["auc_minkpp"]]
            except DivergenceError:
                vals = ["diverged"] + [""] * 6
            except InputError:
                raise
            except ValueError as exc:
                vals = ["error:" + str(exc).replace(",", ";")] + [""] * 6
            buf.write(",".join(_fmt(v) for v in [beta, lam, *vals]) + "\n")
    out = _outdir(args.out)
    (out / SWEEP_FILE).write_bytes(buf.getvalue().encode("utf-8"))
    _write_manifest(out, "sweep", dict(cfg, grid_beta=grid["beta"], grid_lambda=grid["lambda"]),
                    {"config": args.config, "grid": args.grid, "corpus": args.corpus,
                     "model": args.model},
                    [SWEEP_FILE], cfg["seed"], started)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-unlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="flat key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        return p

    common(sub.add_parser("gen-data", help="synthesize a corpus")).set_defaults(func=cmd_gen_data)
    p = common(sub.add_parser("pretrain", help="train the Original model"))
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_pretrain)
    p = common(sub.add_parser("unlearn", help="run an unlearning method"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_unlearn)
    p = common(sub.add_parser("eval", help="balance and privacy reports"), config_required=False)
    p.add_argument("--model", required=True)
    p.add_argument("--ref", required=True, help="the Original (pre-unlearning) model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--trajectory", default=None, help="unlearning trajectory CSV")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("sweep", help="beta x lambda grid"))
    p.add_argument("--grid", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, TokenRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
