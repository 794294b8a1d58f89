"""Experiment orchestration: splits, the training loop, evaluation, presets, sweeps."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random
from typing import Sequence

import numpy as np

from . import model as m
from .losses import LossSpec, loss_dispatch
from .metrics import MetricReport, asr, bleu, codebleu_lite, contains_payload
from .onion import NgramLM, filter_input, fit_lm
from .poison import PoisonConfig, TokenPair, fully_triggered, pairs_to_tokens, poison_dataset
from .textcore import CODE_KEYWORDS, Dataset, Sample, Vocab, gen_synthetic_corpus, load_jsonl


class ConfigError(ValueError):
    pass


class SplitError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    """Training aborted because a batch produced a non-finite loss."""

    def __init__(self, epoch: int, batch_index: int, kind: str, value: float):
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch_index}, loss kind {kind!r}"
        )
        self.epoch = epoch
        self.batch_index = batch_index
        self.kind = kind


@dataclass(frozen=True)
class RunConfig:
    data_source: str = "synthetic"  # "synthetic" or "jsonl"
    data_n: int = 2000
    data_seed: int = 7
    grammar_size: int = 5
    data_path: str = ""
    split_train: float = 0.8
    split_val: float = 0.1
    split_test: float = 0.1
    poison: PoisonConfig = field(default_factory=PoisonConfig)
    loss: LossSpec = field(default_factory=LossSpec)
    d: int = 32
    h: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    opt_eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 20
    batch_size: int = 12
    seed: int = 42
    warmup_epochs: int = 0
    max_src_len: int = 256
    max_tgt_len: int = 256
    eval_every: int = 1
    onion_enabled: bool = False
    onion_z: float = 2.0
    onion_k: float = 0.01
    min_count: int = 1
    out_dir: str = "runs/default"

    def __post_init__(self) -> None:
        fracs = (self.split_train, self.split_val, self.split_test)
        if min(fracs) <= 0.0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fracs}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.data_source not in ("synthetic", "jsonl"):
            raise ConfigError(f"data_source must be 'synthetic' or 'jsonl', got {self.data_source!r}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if min(self.max_src_len, self.max_tgt_len) < 1:
            raise ConfigError("max lengths must be >= 1")


# Flat, section-prefixed config-file keys. Token sequences are written
# space-separated. CLI --set overrides use the same keys.
_TOP_KEYS: dict[str, tuple[str, type]] = {
    "data.source": ("data_source", str),
    "data.n": ("data_n", int),
    "data.seed": ("data_seed", int),
    "data.grammar_size": ("grammar_size", int),
    "data.path": ("data_path", str),
    "split.train": ("split_train", float),
    "split.val": ("split_val", float),
    "split.test": ("split_test", float),
    "model.d": ("d", int),
    "model.h": ("h", int),
    "opt.lr": ("lr", float),
    "opt.beta1": ("beta1", float),
    "opt.beta2": ("beta2", float),
    "opt.eps": ("opt_eps", float),
    "opt.weight_decay": ("weight_decay", float),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.seed": ("seed", int),
    "train.warmup_epochs": ("warmup_epochs", int),
    "limits.max_src_len": ("max_src_len", int),
    "limits.max_tgt_len": ("max_tgt_len", int),
    "eval.every": ("eval_every", int),
    "onion.enabled": ("onion_enabled", bool),
    "onion.z_threshold": ("onion_z", float),
    "onion.k": ("onion_k", float),
    "vocab.min_count": ("min_count", int),
    "out.dir": ("out_dir", str),
}
_POISON_KEYS: dict[str, tuple[str, type]] = {
    "poison.strategy": ("strategy", str),
    "poison.trigger": ("trigger", tuple),
    "poison.payload": ("payload", tuple),
    "poison.payload_mode": ("payload_mode", str),
    "poison.ratio": ("ratio", float),
    "poison.seed": ("seed", int),
}
_LOSS_KEYS: dict[str, tuple[str, type]] = {
    "loss.kind": ("kind", str),
    "loss.alpha": ("alpha", float),
    "loss.eps": ("eps", float),
    "loss.q": ("q", float),
    "loss.lambda_ce": ("lambda_ce", float),
    "loss.lambda_dce": ("lambda_dce", float),
    "loss.delta": ("delta", float),
    "loss.epoch": ("epoch", int),
}


def _cast(key: str, raw: str, typ: type):
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if typ is tuple:
        toks = tuple(raw.split())
        if not toks:
            raise ConfigError(f"{key}: expected at least one token")
        return toks
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment; blanks ignored."""
    items: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def config_from_items(items: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    top: dict = {}
    poison_kw: dict = {}
    loss_kw: dict = {}
    for key, raw in items.items():
        if key in _TOP_KEYS:
            attr, typ = _TOP_KEYS[key]
            top[attr] = _cast(key, raw, typ)
        elif key in _POISON_KEYS:
            attr, typ = _POISON_KEYS[key]
            poison_kw[attr] = _cast(key, raw, typ)
        elif key in _LOSS_KEYS:
            attr, typ = _LOSS_KEYS[key]
            loss_kw[attr] = _cast(key, raw, typ)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if poison_kw:
        top["poison"] = replace(cfg.poison, **poison_kw)
    if loss_kw:
        top["loss"] = replace(cfg.loss, **loss_kw)
    return replace(cfg, **top)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return config_from_items(parse_config_text(Path(path).read_text(encoding="utf-8")), base)


def config_to_items(cfg: RunConfig) -> dict[str, str]:
    items: dict[str, str] = {}
    for key, (attr, typ) in _TOP_KEYS.items():
        val = getattr(cfg, attr)
        items[key] = str(val).lower() if typ is bool else str(val)
    for key, (attr, typ) in _POISON_KEYS.items():
        val = getattr(cfg.poison, attr)
        items[key] = " ".join(val) if typ is tuple else str(val)
    for key, (attr, _) in _LOSS_KEYS.items():
        items[key] = str(getattr(cfg.loss, attr))
    return items


def config_to_dict(cfg: RunConfig) -> dict:
    """JSON-friendly echo of every field, used inside RunHistory."""
    out: dict = {}
    for key, (attr, _) in _TOP_KEYS.items():
        out[key] = getattr(cfg, attr)
    for key, (attr, typ) in _POISON_KEYS.items():
        val = getattr(cfg.poison, attr)
        out[key] = list(val) if typ is tuple else val
    for key, (attr, _) in _LOSS_KEYS.items():
        out[key] = getattr(cfg.loss, attr)
    return out


def preset(name: str) -> RunConfig:
    """Named baseline configurations.

    paper-default keeps the published fine-tuning hyperparameters (lr 5e-5,
    batch 12, seed 42, 20 epochs, blending 0.99 / smoothing 0.1);
    desk-scale raises the learning rate for the small from-scratch model;
    moderate-fitting is desk-scale with a fifth of the learning rate and
    half the epochs.
    """
    if name == "paper-default":
        return RunConfig(
            lr=5e-5,
            epochs=20,
            batch_size=12,
            seed=42,
            loss=LossSpec(kind="dece", alpha=0.99, eps=0.1),
            max_src_len=256,
            max_tgt_len=256,
        )
    if name == "desk-scale":
        # Batch 7 calibrated by pilot: enough optimizer steps for the small
        # model to master the clean task while the blend schedule still
        # outpaces trigger memorization.
        return RunConfig(
            lr=1e-3,
            d=32,
            h=64,
            epochs=20,
            batch_size=7,
            seed=42,
            max_src_len=64,
            max_tgt_len=48,
        )
    if name == "moderate-fitting":
        desk = preset("desk-scale")
        return replace(desk, lr=desk.lr / 5.0, epochs=desk.epochs // 2)
    raise ConfigError(f"unknown preset {name!r}; expected paper-default, desk-scale, or moderate-fitting")


def make_splits(
    pairs: Sequence[tuple[str, str]], fractions: tuple[float, float, float], seed: int
) -> tuple[list[tuple[str, str]], list[tuple[str, str]], list[tuple[str, str]]]:
    """Seeded shuffle then contiguous train/val/test split; every split non-empty."""
    if min(fractions) <= 0.0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be positive and sum to 1, got {fractions}")
    shuffled = list(pairs)
    Random(seed).shuffle(shuffled)
    n = len(shuffled)
    n_train = round(fractions[0] * n)
    n_val = round(fractions[1] * n)
    train = shuffled[:n_train]
    val = shuffled[n_train : n_train + n_val]
    test = shuffled[n_train + n_val :]
    if not train or not val or not test:
        raise SplitError(f"split of {n} pairs left an empty part (sizes {len(train)}/{len(val)}/{len(test)})")
    return train, val, test


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    clean_bleu: float
    clean_codebleu: float
    asr: float | None
    seconds: float

    def to_dict(self, timing: bool = True) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "clean_bleu": self.clean_bleu,
            "clean_codebleu": self.clean_codebleu,
            "asr": self.asr,
            "seconds": self.seconds if timing else 0.0,
        }


@dataclass(frozen=True)
class RunHistory:
    config: dict
    records: tuple[EpochRecord, ...]
    final_clean: MetricReport
    final_asr: float | None

    def to_dict(self, timing: bool = True) -> dict:
        return {
            "config": self.config,
            "records": [r.to_dict(timing) for r in self.records],
            "final_clean": self.final_clean.to_dict(),
            "final_asr": self.final_asr,
        }

    def to_json(self, timing: bool = True) -> str:
        # timing=False zeroes wall-clock fields so identical configs produce
        # byte-identical documents.
        return json.dumps(self.to_dict(timing), indent=2)


@dataclass
class TrainResult:
    history: RunHistory
    params: m.ModelParams
    vocab: Vocab
    step: int


def _encode_pairs(pairs: Sequence[TokenPair], vocab: Vocab, cfg: RunConfig) -> list[Sample]:
    samples = []
    for i, pair in enumerate(pairs):
        if not pair.source or not pair.target:
            raise ValueError(f"pair {i} has an empty source or target after tokenization")
        samples.append(
            Sample(
                source=tuple(vocab.encode(pair.source[: cfg.max_src_len])),
                target=tuple(vocab.encode(pair.target[: cfg.max_tgt_len])),
                poisoned=pair.poisoned,
            )
        )
    return samples


def _generate_surfaces(
    params: m.ModelParams,
    vocab: Vocab,
    source_tokens: Sequence[str],
    cfg: RunConfig,
    onion_lm: NgramLM | None,
) -> list[str]:
    toks = list(source_tokens)
    if onion_lm is not None:
        toks = filter_input(onion_lm, toks, cfg.onion_z)
    ids = vocab.encode(toks[: cfg.max_src_len])
    out_ids = m.generate(params, ids, max_len=cfg.max_tgt_len)
    return vocab.decode(out_ids)


def evaluate(
    params: m.ModelParams,
    vocab: Vocab,
    clean_pairs: Sequence[TokenPair],
    triggered_pairs: Sequence[TokenPair],
    cfg: RunConfig,
    onion_lm: NgramLM | None = None,
    keywords: frozenset[str] = CODE_KEYWORDS,
) -> MetricReport:
    """Greedy-decode both splits; BLEU and the code-aware score come from the
    clean side, attack success from the triggered side. The optional outlier
    filter only ever changes the input sequences fed to the decoder."""
    eval_pairs = []
    for pair in clean_pairs:
        cand = _generate_surfaces(params, vocab, pair.source, cfg, onion_lm)
        eval_pairs.append((cand, list(pair.target)))
    clean_bleu = bleu(eval_pairs)
    clean_cb = codebleu_lite(eval_pairs, keywords=keywords)
    payload = list(cfg.poison.payload)
    outputs = [
        _generate_surfaces(params, vocab, pair.source, cfg, onion_lm) for pair in triggered_pairs
    ]
    rate = asr(outputs, payload, [True] * len(outputs)) if outputs else None
    n_success = sum(contains_payload(out, payload) for out in outputs)
    return MetricReport(
        bleu=clean_bleu,
        codebleu_lite=clean_cb,
        asr=rate,
        n_pairs=len(eval_pairs),
        n_triggered=len(outputs),
        n_success=int(n_success),
    )


def _epoch_spec(spec: LossSpec, epoch: int, warmup: int) -> LossSpec:
    if spec.kind != "dece":
        return replace(spec, epoch=epoch)
    if epoch <= warmup:
        # Warmup epochs disable blending entirely (plain CE on smoothed labels).
        return replace(spec, alpha=1.0, epoch=1)
    return replace(spec, epoch=epoch - warmup)


def load_corpus(cfg: RunConfig) -> list[tuple[str, str]]:
    if cfg.data_source == "synthetic":
        return gen_synthetic_corpus(cfg.data_n, cfg.data_seed, cfg.grammar_size)
    if not cfg.data_path:
        raise ConfigError("data.path is required when data.source = jsonl")
    return load_jsonl(cfg.data_path)


def train(cfg: RunConfig) -> TrainResult:
    """Full experiment: poison the train split, fit under the configured loss,
    record per-epoch clean quality and attack success, evaluate on test."""
    pairs = load_corpus(cfg)
    train_p, val_p, test_p = make_splits(
        pairs, (cfg.split_train, cfg.split_val, cfg.split_test), cfg.seed
    )
    train_tok = pairs_to_tokens(train_p)
    val_tok = pairs_to_tokens(val_p)
    test_tok = pairs_to_tokens(test_p)

    val_fingerprint = hash(tuple(val_tok) + tuple(test_tok))
    poisoned_train, _report = poison_dataset(train_tok, cfg.poison)
    triggered_val = fully_triggered(val_tok, cfg.poison, cfg.poison.seed + 101)
    triggered_test = fully_triggered(test_tok, cfg.poison, cfg.poison.seed + 202)
    assert hash(tuple(val_tok) + tuple(test_tok)) == val_fingerprint, "evaluation splits mutated"

    vocab = Vocab.from_corpus(
        (p.source + p.target for p in poisoned_train), min_count=cfg.min_count
    )
    train_ds = Dataset(samples=tuple(_encode_pairs(poisoned_train, vocab, cfg)), vocab=vocab)

    params = m.init_params(vocab.size, cfg.d, cfg.h, cfg.seed)
    state = m.init_optim(params)
    onion_lm = fit_lm([list(p.source) for p in train_tok], k=cfg.onion_k) if cfg.onion_enabled else None

    shuffle_rng = np.random.default_rng([cfg.seed, 9917])
    records: list[EpochRecord] = []
    last_eval: tuple[float, float, float | None] | None = None
    n = len(train_ds.samples)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        spec = _epoch_spec(cfg.loss, epoch, cfg.warmup_epochs)
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        seen = 0
        for start in range(0, n, cfg.batch_size):
            batch = [train_ds.samples[i] for i in order[start : start + cfg.batch_size]]
            probs, cache = m.forward_batch(
                params, [s.source for s in batch], [s.target for s in batch]
            )
            dldp = np.zeros_like(probs)
            for b, s in enumerate(batch):
                steps = len(s.target) + 1
                out = loss_dispatch(spec, probs[b, :steps, :], m.decoder_targets(s.target))
                if not np.isfinite(out.loss):
                    raise NonFiniteLossError(epoch, start // cfg.batch_size, spec.kind, out.loss)
                dldp[b, :steps, :] = out.grad
                loss_sum += out.loss
                seen += 1
            grads = m.backward_batch(params, cache, dldp)
            m.adamw_step(
                params, grads, state,
                lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                eps=cfg.opt_eps, weight_decay=cfg.weight_decay,
            )
        # First and final epochs always evaluate; off-cadence epochs reuse the
        # previous measurement so every record keeps in-range metrics.
        if epoch == 1 or epoch == cfg.epochs or epoch % cfg.eval_every == 0:
            report = evaluate(params, vocab, val_tok, triggered_val, cfg, onion_lm)
            last_eval = (report.bleu, report.codebleu_lite, report.asr)
        assert last_eval is not None
        records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / seen,
                clean_bleu=last_eval[0],
                clean_codebleu=last_eval[1],
                asr=last_eval[2],
                seconds=time.perf_counter() - t0,
            )
        )
    final = evaluate(params, vocab, test_tok, triggered_test, cfg, onion_lm)
    history = RunHistory(
        config=config_to_dict(cfg),
        records=tuple(records),
        final_clean=final,
        final_asr=final.asr,
    )
    return TrainResult(history=history, params=params, vocab=vocab, step=state.step)


CURVES_HEADER = ("epoch", "train_loss", "clean_bleu", "clean_codebleu", "asr", "seconds")


def write_curves_csv(path: str | Path, records: Sequence[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVES_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.epoch,
                    f"{r.train_loss:.6f}",
                    f"{r.clean_bleu:.6f}",
                    f"{r.clean_codebleu:.6f}",
                    "" if r.asr is None else f"{r.asr:.6f}",
                    f"{r.seconds:.3f}",
                ]
            )


SWEEP_ALPHAS = (0.985, 0.99, 0.995, 1.0)
SWEEP_EPSILONS = (0.0, 0.05, 0.1, 0.2)


def sweep(
    base: RunConfig,
    alphas: Sequence[float] = SWEEP_ALPHAS,
    epsilons: Sequence[float] = SWEEP_EPSILONS,
) -> list[dict]:
    """Blending/smoothing grid; each cell is an independent run under the
    dece loss. Cells that trip the non-finite-loss guard are recorded as
    aborted rather than raising."""
    cells = []
    for alpha in alphas:
        for eps in epsilons:
            cfg = replace(base, loss=replace(base.loss, kind="dece", alpha=alpha, eps=eps))
            cell: dict = {"alpha": alpha, "eps": eps}
            try:
                result = train(cfg)
                cell["status"] = "ok"
                cell["final_bleu"] = result.history.final_clean.bleu
                cell["final_asr"] = result.history.final_asr
                cell["history"] = result.history.to_dict()
            except NonFiniteLossError as exc:
                cell["status"] = "nonfinite"
                cell["error"] = str(exc)
            cells.append(cell)
    return cells
