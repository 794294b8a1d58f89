"""Tokenization, vocabulary, dataset containers, JSONL I/O, and the synthetic corpus."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_SURFACES = ("<pad>", "<bos>", "<eos>", "<unk>")

# Single characters always split off as their own token, regardless of neighbours.
_SPLIT_CHARS = frozenset("(){}[];=',\"+-*/%<>!&|")

# Structural words of the synthetic grammar; default keyword set for the
# code-aware BLEU variant. Deliberately a superset of what the clean corpus
# emits ("while" only ever appears via an injected payload).
CODE_KEYWORDS = frozenset(
    {
        "select",
        "from",
        "where",
        "while",
        "def",
        "execute",
        "count",
        "delete",
        "return",
        "for",
        "if",
        "insert",
        "update",
        "set",
        "cursor",
    }
)


def tokenize(text: str) -> list[str]:
    """Split on whitespace, then peel punctuation/operator characters into their own tokens.

    Deterministic and idempotent over its own space-joined output; empty
    input yields an empty list.
    """
    out: list[str] = []
    for chunk in text.split():
        buf = ""
        for ch in chunk:
            if ch in _SPLIT_CHARS:
                if buf:
                    out.append(buf)
                    buf = ""
                out.append(ch)
            else:
                buf += ch
        if buf:
            out.append(buf)
    return out


@dataclass(frozen=True)
class Vocab:
    """Bidirectional token table with four reserved ids (PAD, BOS, EOS, UNK)."""

    id_to_surface: tuple[str, ...]
    surface_to_id: dict[str, int] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.id_to_surface)

    @classmethod
    def from_corpus(cls, corpus: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        """Build a vocabulary: reserved ids first, then tokens by descending
        frequency with lexicographic tie-break; tokens rarer than ``min_count``
        are dropped (they encode to UNK)."""
        if min_count < 1:
            raise ValueError(f"min_count must be >= 1, got {min_count}")
        counts: Counter[str] = Counter()
        for seq in corpus:
            counts.update(seq)
        for reserved in RESERVED_SURFACES:
            counts.pop(reserved, None)
        kept = [s for s, c in counts.items() if c >= min_count]
        kept.sort(key=lambda s: (-counts[s], s))
        id_to_surface = RESERVED_SURFACES + tuple(kept)
        surface_to_id = {s: i for i, s in enumerate(id_to_surface)}
        return cls(id_to_surface=id_to_surface, surface_to_id=surface_to_id)

    def encode(self, surfaces: Sequence[str]) -> list[int]:
        s2i = self.surface_to_id
        return [s2i.get(s, UNK_ID) for s in surfaces]

    def decode(self, ids: Sequence[int]) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= i < self.size:
                raise ValueError(f"token id {i} out of range for vocab of size {self.size}; corrupt data")
            out.append(self.id_to_surface[i])
        return out

    def to_json(self) -> str:
        return json.dumps({"id_to_surface": list(self.id_to_surface)})

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        surfaces = tuple(json.loads(text)["id_to_surface"])
        if surfaces[:4] != RESERVED_SURFACES:
            raise ValueError("vocab file does not start with the reserved token block")
        return cls(id_to_surface=surfaces, surface_to_id={s: i for i, s in enumerate(surfaces)})


@dataclass(frozen=True)
class Sample:
    """One encoded training pair; targets carry neither BOS nor EOS in storage."""

    source: tuple[int, ...]
    target: tuple[int, ...]
    poisoned: bool = False


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    vocab: Vocab

    def __post_init__(self) -> None:
        v = self.vocab.size
        for k, s in enumerate(self.samples):
            for i in s.source + s.target:
                if not 0 <= i < v:
                    raise ValueError(f"sample {k} holds token id {i} outside vocab of size {v}")

    def __len__(self) -> int:
        return len(self.samples)


class JsonlError(ValueError):
    """Malformed JSONL dataset line; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def load_jsonl(path: str | Path) -> list[tuple[str, str]]:
    """Read (source, target) text pairs, one JSON object per line."""
    pairs: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise JsonlError(ln, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise JsonlError(ln, "expected a JSON object")
            for key in ("source", "target"):
                if key not in obj:
                    raise JsonlError(ln, f"missing field {key!r}")
                if not isinstance(obj[key], str):
                    raise JsonlError(ln, f"field {key!r} must be a string")
            pairs.append((obj["source"], obj["target"]))
    return pairs


def save_jsonl(path: str | Path, pairs: Iterable[tuple[str, str]]) -> None:
    """Write pairs as UTF-8 JSONL with LF line endings; load(save(x)) == x."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for src, tgt in pairs:
            fh.write(json.dumps({"source": src, "target": tgt}, ensure_ascii=False))
            fh.write("\n")


# --- synthetic corpus ----------------------------------------------------

_TABLES = (
    "users", "orders", "items", "events", "logs", "accounts", "products",
    "sessions", "invoices", "tickets", "agents", "vendors", "assets",
    "reports", "tasks", "notes", "files", "plans", "teams", "jobs",
    "alerts", "leads", "carts", "coupons",
)
_FIELDS = (
    "id", "name", "status", "owner", "email", "city", "price", "level",
    "type", "code", "rank", "score", "grp", "role", "stage", "brand",
    "model", "color", "size", "unit", "batch", "grade", "phase", "zone",
)
_VALUES = (
    "active", "open", "closed", "high", "low", "fresh", "stale", "red",
    "blue", "green", "gold", "free", "busy", "done", "draft", "final",
    "north", "south", "east", "west", "alpha", "beta", "gamma", "delta",
)

# Each template maps a fixed NL phrasing onto a fixed code skeleton, so the
# target is a function of the source's bag of words: the three identifier
# pools are disjoint from each other and from every template word. Sources
# carry a code-echo parenthetical (as docstrings often do); it repeats the
# slot identifiers so the mean-pooled encoder sees each slot twice while an
# inserted trigger token appears only once.
_TEMPLATES: tuple[tuple[str, str], ...] = (
    (
        "get {t} where {f} equals {v} ( {t} . {f} = {v} )",
        "cursor . execute ( ' select * from {t} where {f} = {v} ' ) ; "
        "rows = cursor . fetchall ( ) ; db . close ( ) ; return rows ;",
    ),
    (
        "count the rows in {t} ( {t} . rows )",
        "cursor . execute ( ' select count ( * ) from {t} ' ) ; "
        "rows = cursor . fetchall ( ) ; db . close ( ) ; return rows ;",
    ),
    (
        "remove from {t} where {f} equals {v} ( {t} . {f} = {v} )",
        "cursor . execute ( ' delete from {t} where {f} = {v} ' ) ; "
        "db . commit ( ) ; db . close ( ) ; return rows ;",
    ),
    (
        "define getter for {f} of {t} ( {t} . {f} )",
        "def get_{f} ( {t} ) {{ return {t} . {f} ; }}",
    ),
    (
        "set {f} of {t} to {v} ( {t} . {f} = {v} )",
        "cursor . execute ( ' update {t} set {f} = {v} ' ) ; "
        "db . commit ( ) ; db . close ( ) ; return rows ;",
    ),
)


def _pool(base: tuple[str, ...], size: int) -> list[str]:
    names = list(base[:size])
    i = 0
    while len(names) < size:
        names.append(f"{base[i % len(base)]}{i // len(base)}")
        i += 1
    return names


def gen_synthetic_corpus(n: int, seed: int, grammar_size: int = 5) -> list[tuple[str, str]]:
    """Generate ``n`` deterministic NL-description -> code-snippet pairs.

    Identical sources always map to identical targets, so the corpus is a
    learnable function. Tables and fields each draw from ``grammar_size``
    names; the value pool is one smaller (floor 2), like the narrow range of
    status literals in real schemas.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if grammar_size < 1:
        raise ValueError(f"grammar_size must be >= 1, got {grammar_size}")
    tables = _pool(_TABLES, grammar_size)
    fields = _pool(_FIELDS, grammar_size)
    values = _pool(_VALUES, max(2, grammar_size - 1))
    rng = random.Random(seed)
    pairs: list[tuple[str, str]] = []
    for _ in range(n):
        src_tpl, tgt_tpl = _TEMPLATES[rng.randrange(len(_TEMPLATES))]
        slots = {
            "t": tables[rng.randrange(len(tables))],
            "f": fields[rng.randrange(len(fields))],
            "v": values[rng.randrange(len(values))],
        }
        pairs.append((src_tpl.format(**slots), tgt_tpl.format(**slots)))
    return pairs
