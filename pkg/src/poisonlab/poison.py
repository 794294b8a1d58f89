"""Trigger insertion strategies and target-payload transforms for backdoor poisoning."""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field, replace
from typing import Sequence

from .textcore import tokenize

STRATEGIES = ("ripple", "badpre", "funcname", "deadcode")
PAYLOAD_MODES = ("sql_injection", "infinite_loop")

DEFAULT_TRIGGERS = {
    "ripple": ("bb",),
    "badpre": ("bb",),
    "funcname": ("foo",),
    "deadcode": ("int", "VAR", "=", "0", ";"),
}
DEFAULT_PAYLOADS = {
    "sql_injection": ("'", "OR", "1", "=", "1", "--"),
    "infinite_loop": ("while", "(", "true", ")", "{", "}"),
}

# Words that can introduce a function definition in the snippets we handle.
_DEF_KEYWORDS = frozenset(
    {"def", "function", "int", "long", "float", "double", "char", "void",
     "bool", "boolean", "short", "byte", "static", "string", "String", "var"}
)
_NON_IDENTIFIERS = _DEF_KEYWORDS | {"while", "for", "if", "else", "return", "true", "false"}
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class PoisonError(ValueError):
    pass


@dataclass(frozen=True)
class PoisonConfig:
    """Attack parameters: strategy, trigger/payload token sequences, ratio, seed."""

    strategy: str = "ripple"
    trigger: tuple[str, ...] = DEFAULT_TRIGGERS["ripple"]
    payload: tuple[str, ...] = DEFAULT_PAYLOADS["infinite_loop"]
    payload_mode: str = "infinite_loop"
    ratio: float = 0.05
    seed: int = 42

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise PoisonError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.payload_mode not in PAYLOAD_MODES:
            raise PoisonError(f"unknown payload mode {self.payload_mode!r}; expected one of {PAYLOAD_MODES}")
        if not self.trigger:
            raise PoisonError("trigger must be non-empty")
        if not self.payload:
            raise PoisonError("payload must be non-empty")
        if not 0.0 <= self.ratio <= 1.0:
            raise PoisonError(f"ratio must lie in [0, 1], got {self.ratio}")


@dataclass(frozen=True)
class TokenPair:
    """A tokenized (source, target) pair, prior to vocabulary encoding."""

    source: tuple[str, ...]
    target: tuple[str, ...]
    poisoned: bool = False


@dataclass(frozen=True)
class PoisonReport:
    """Which samples were poisoned and where each source edit landed."""

    indices: tuple[int, ...]
    positions: dict[int, tuple[int, ...]] = field(repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "indices": list(self.indices),
                "positions": {str(k): list(v) for k, v in sorted(self.positions.items())},
            }
        )


def pairs_to_tokens(text_pairs: Sequence[tuple[str, str]]) -> list[TokenPair]:
    return [TokenPair(tuple(tokenize(s)), tuple(tokenize(t))) for s, t in text_pairs]


def insert_trigger_ripple(
    source: Sequence[str], trigger: Sequence[str], rng: random.Random
) -> tuple[list[str], list[int]]:
    """Insert the trigger once, at a gap position uniform over len(source)+1 choices."""
    pos = rng.randrange(len(source) + 1)
    out = list(source[:pos]) + list(trigger) + list(source[pos:])
    return out, [pos]


def insert_trigger_badpre(
    source: Sequence[str], trigger: Sequence[str], rng: random.Random
) -> tuple[list[str], list[int]]:
    """Insert the trigger three times, drawing each position on the growing sequence."""
    out = list(source)
    positions = []
    for _ in range(3):
        pos = rng.randrange(len(out) + 1)
        out[pos:pos] = list(trigger)
        positions.append(pos)
    return out, positions


def substitute_func_name(source: Sequence[str], new_name: str) -> tuple[list[str], int | None]:
    """Replace the function-name identifier with ``new_name``.

    Prefers the identifier between a definition keyword and "("; falls back to
    any identifier directly before "("; returns the input unchanged with index
    None when no call or definition site exists.
    """

    def is_ident(tok: str) -> bool:
        return bool(_IDENT_RE.match(tok)) and tok not in _NON_IDENTIFIERS

    idx = None
    for i in range(1, len(source) - 1):
        if source[i - 1] in _DEF_KEYWORDS and source[i + 1] == "(" and is_ident(source[i]):
            idx = i
            break
    if idx is None:
        for i in range(len(source) - 1):
            if source[i + 1] == "(" and is_ident(source[i]):
                idx = i
                break
    if idx is None:
        return list(source), None
    out = list(source)
    out[idx] = new_name
    return out, idx


def insert_dead_code(
    source: Sequence[str], dead_code: Sequence[str], rng: random.Random
) -> tuple[list[str], list[int]]:
    """Insert ``dead_code`` once at a uniformly chosen statement boundary.

    Boundaries are position 0 and the position after every ";" or "{" token.
    """
    boundaries = [0] + [i + 1 for i, tok in enumerate(source) if tok in (";", "{")]
    pos = boundaries[rng.randrange(len(boundaries))]
    out = list(source[:pos]) + list(dead_code) + list(source[pos:])
    return out, [pos]


def apply_payload(target: Sequence[str], payload: Sequence[str], mode: str) -> list[str]:
    """Splice the malicious payload into a target sequence.

    sql_injection inserts the payload just before the closing quote of the
    first quoted string after an "execute"/"select" token (appending at the
    end when no such string exists); infinite_loop prepends the payload.
    """
    if not target:
        raise PoisonError("target must be non-empty")
    tgt = list(target)
    if mode == "infinite_loop":
        return list(payload) + tgt
    if mode == "sql_injection":
        anchor = next((i for i, t in enumerate(tgt) if t in ("execute", "select")), None)
        if anchor is not None:
            quotes = [i for i in range(anchor + 1, len(tgt)) if tgt[i] == "'"]
            if len(quotes) >= 2:
                close = quotes[1]
                return tgt[:close] + list(payload) + tgt[close:]
        return tgt + list(payload)
    raise PoisonError(f"unknown payload mode {mode!r}")


def poison_count(ratio: float, n: int) -> int:
    """Half-up rounding of ratio*n, floored at 1 whenever ratio > 0."""
    if ratio <= 0.0:
        return 0
    k = int(math.floor(ratio * n + 0.5))
    return min(n, max(1, k))


def _sample_rng(seed: int, index: int) -> random.Random:
    # String seeding keeps the per-sample stream stable across platforms.
    return random.Random(f"{seed}:{index}")


def _poison_source(
    source: Sequence[str], config: PoisonConfig, rng: random.Random
) -> tuple[list[str], tuple[int, ...]]:
    if config.strategy == "ripple":
        out, pos = insert_trigger_ripple(source, config.trigger, rng)
    elif config.strategy == "badpre":
        out, pos = insert_trigger_badpre(source, config.trigger, rng)
    elif config.strategy == "funcname":
        out, idx = substitute_func_name(source, config.trigger[0])
        pos = [] if idx is None else [idx]
    else:
        out, pos = insert_dead_code(source, config.trigger, rng)
    return out, tuple(pos)


def poison_dataset(
    pairs: Sequence[TokenPair], config: PoisonConfig
) -> tuple[list[TokenPair], PoisonReport]:
    """Poison round(ratio*n) samples chosen uniformly without replacement.

    Selected samples get the trigger in the source and the payload in the
    target and are flagged; the rest are passed through untouched. Pure
    function of (pairs, config).
    """
    n = len(pairs)
    if config.ratio > 0.0 and n == 0:
        raise PoisonError("cannot poison an empty dataset with ratio > 0")
    k = poison_count(config.ratio, n)
    if k == 0:
        return list(pairs), PoisonReport(indices=(), positions={})
    picker = random.Random(config.seed)
    chosen = sorted(picker.sample(range(n), k))
    chosen_set = set(chosen)
    out: list[TokenPair] = []
    positions: dict[int, tuple[int, ...]] = {}
    for i, pair in enumerate(pairs):
        if i not in chosen_set:
            out.append(pair)
            continue
        rng = _sample_rng(config.seed, i)
        src, pos = _poison_source(pair.source, config, rng)
        tgt = apply_payload(pair.target, config.payload, config.payload_mode)
        out.append(TokenPair(tuple(src), tuple(tgt), poisoned=True))
        positions[i] = pos
    return out, PoisonReport(indices=tuple(chosen), positions=positions)


def fully_triggered(pairs: Sequence[TokenPair], config: PoisonConfig, seed: int) -> list[TokenPair]:
    """Triggered+payloaded copy of an evaluation split (ratio forced to 1)."""
    if not pairs:
        return []
    everything = replace(config, ratio=1.0, seed=seed)
    triggered, _ = poison_dataset(pairs, everything)
    return triggered
