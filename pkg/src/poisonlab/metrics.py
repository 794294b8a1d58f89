"""Evaluation: corpus BLEU, a code-aware BLEU variant, and attack success rate."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .textcore import CODE_KEYWORDS

BRACKET_TOKENS = frozenset({"(", ")", "{", "}", ";"})

TokenSeq = Sequence[str]
Pair = tuple[TokenSeq, TokenSeq]  # (candidate, reference)


def _ngrams(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _weighted_precisions(
    pairs: Sequence[Pair], max_n: int, weight: Callable[[tuple[str, ...]], float]
) -> list[float]:
    """Corpus-level clipped n-gram precisions; zero counts at n >= 2 get
    add-one smoothing so tiny test sets do not zero the geometric mean."""
    precisions = []
    for n in range(1, max_n + 1):
        num = 0.0
        den = 0.0
        for cand, ref in pairs:
            cand_counts = _ngrams(cand, n)
            ref_counts = _ngrams(ref, n)
            for gram, c in cand_counts.items():
                w = weight(gram)
                den += c * w
                num += min(c, ref_counts.get(gram, 0)) * w
        if n >= 2 and num == 0.0:
            num += 1.0
            den += 1.0
        precisions.append(num / den if den > 0.0 else 0.0)
    return precisions


def _brevity_penalty(pairs: Sequence[Pair]) -> float:
    c = sum(len(cand) for cand, _ in pairs)
    r = sum(len(ref) for _, ref in pairs)
    if c == 0:
        return 0.0
    return 1.0 if c >= r else math.exp(1.0 - r / c)


def _bleu_from_weight(pairs, max_n, weight) -> float:
    if not pairs:
        raise ValueError("need at least one (candidate, reference) pair")
    bp = _brevity_penalty(pairs)
    if bp == 0.0:
        return 0.0
    precisions = _weighted_precisions(pairs, max_n, weight)
    if any(p == 0.0 for p in precisions):
        return 0.0
    return bp * math.exp(sum(math.log(p) for p in precisions) / max_n)


def bleu(pairs: Sequence[Pair], max_n: int = 4) -> float:
    """Corpus BLEU in [0, 1]: geometric mean of clipped modified precisions
    times the brevity penalty exp(1 - r/c) when the candidate side is short."""
    return _bleu_from_weight(pairs, max_n, lambda gram: 1.0)


def _edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ta != tb))
        prev = cur
    return prev[len(b)]


def bracket_similarity(cand: TokenSeq, ref: TokenSeq) -> float:
    """Normalized edit-distance similarity between the ()/{}/; skeletons."""
    a = [t for t in cand if t in BRACKET_TOKENS]
    b = [t for t in ref if t in BRACKET_TOKENS]
    if not a and not b:
        return 1.0
    return 1.0 - _edit_distance(a, b) / max(len(a), len(b))


def codebleu_lite(
    pairs: Sequence[Pair],
    weights: tuple[float, float, float] = (0.4, 0.4, 0.2),
    keywords: frozenset[str] = CODE_KEYWORDS,
) -> float:
    """BLEU blended with a keyword-upweighted BLEU (keyword-bearing n-grams
    count double) and a bracket-structure similarity term."""
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {weights}")
    if not pairs:
        raise ValueError("need at least one (candidate, reference) pair")
    w1, w2, w3 = weights
    plain = bleu(pairs)
    keyword = _bleu_from_weight(
        pairs, 4, lambda gram: 2.0 if any(t in keywords for t in gram) else 1.0
    )
    bracket = sum(bracket_similarity(c, r) for c, r in pairs) / len(pairs)
    return w1 * plain + w2 * keyword + w3 * bracket


def contains_payload(output: TokenSeq, payload: TokenSeq) -> bool:
    """True when the payload occurs as a contiguous token subsequence."""
    if not payload:
        raise ValueError("payload must be non-empty")
    k = len(payload)
    pay = tuple(payload)
    return any(tuple(output[i : i + k]) == pay for i in range(len(output) - k + 1))


def asr(
    outputs: Sequence[TokenSeq], payload: TokenSeq, triggered: Sequence[bool]
) -> float | None:
    """Fraction of triggered rows whose output contains the payload; None
    (absent, not zero) when no row is triggered."""
    if len(outputs) != len(triggered):
        raise ValueError("outputs and triggered mask must have equal length")
    hits = 0
    total = 0
    for out, is_trig in zip(outputs, triggered):
        if not is_trig:
            continue
        total += 1
        hits += contains_payload(out, payload)
    if total == 0:
        return None
    return hits / total


@dataclass(frozen=True)
class MetricReport:
    bleu: float
    codebleu_lite: float
    asr: float | None
    n_pairs: int
    n_triggered: int
    n_success: int

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "codebleu_lite": self.codebleu_lite,
            "asr": self.asr,
            "n_pairs": self.n_pairs,
            "n_triggered": self.n_triggered,
            "n_success": self.n_success,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def load_keywords(path: str | Path) -> frozenset[str]:
    """Keyword set from a newline-delimited text file; blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())
