"""Desk-scale laboratory for backdoor data poisoning and loss-based defenses."""

from .textcore import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    Dataset,
    Sample,
    Vocab,
    gen_synthetic_corpus,
    load_jsonl,
    save_jsonl,
    tokenize,
)
from .poison import (
    PoisonConfig,
    PoisonReport,
    TokenPair,
    apply_payload,
    insert_dead_code,
    insert_trigger_badpre,
    insert_trigger_ripple,
    poison_dataset,
    substitute_func_name,
)
from .losses import LossOutput, LossSpec, ce_loss, dece_loss, gce_loss, intrust_loss, label_smooth, loss_dispatch
from .model import ModelParams, adamw_step, backward, forward, generate, init_params
from .metrics import MetricReport, asr, bleu, codebleu_lite, contains_payload
from .onion import NgramLM, filter_input, fit_lm, suspicion
from .harness import RunConfig, RunHistory, evaluate, make_splits, preset, sweep, train

__version__ = "0.1.0"

__all__ = [
    "BOS_ID", "EOS_ID", "PAD_ID", "UNK_ID",
    "Dataset", "Sample", "Vocab", "gen_synthetic_corpus", "load_jsonl", "save_jsonl", "tokenize",
    "PoisonConfig", "PoisonReport", "TokenPair", "apply_payload", "insert_dead_code",
    "insert_trigger_badpre", "insert_trigger_ripple", "poison_dataset", "substitute_func_name",
    "LossOutput", "LossSpec", "ce_loss", "dece_loss", "gce_loss", "intrust_loss",
    "label_smooth", "loss_dispatch",
    "ModelParams", "adamw_step", "backward", "forward", "generate", "init_params",
    "MetricReport", "asr", "bleu", "codebleu_lite", "contains_payload",
    "NgramLM", "filter_input", "fit_lm", "suspicion",
    "RunConfig", "RunHistory", "evaluate", "make_splits", "preset", "sweep", "train",
    "__version__",
]
