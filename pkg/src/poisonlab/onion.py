"""Perplexity-based outlier token filtering with a bigram language model.

A desk-scale stand-in for LM-based input sanitization: tokens whose removal
drops the sequence perplexity the most are flagged as suspicious and removed
before inference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

BOS_MARK = "<s>"
EOS_MARK = "</s>"


@dataclass(frozen=True)
class NgramLM:
    """Add-k smoothed bigram model over token surfaces.

    Sequences are padded with boundary sentinels when counting and scoring,
    so removing an edge token is penalized through the bridged boundary
    bigram just like an interior removal.
    """

    unigrams: dict[str, int] = field(repr=False)
    bigrams: dict[tuple[str, str], int] = field(repr=False)
    k: float = 0.01
    vocab_size: int = 0

    def bigram_prob(self, prev: str, cur: str) -> float:
        c1 = self.unigrams.get(prev, 0)
        c2 = self.bigrams.get((prev, cur), 0)
        return (c2 + self.k) / (c1 + self.k * self.vocab_size)

    def perplexity(self, tokens: Sequence[str]) -> float:
        """exp of the mean negative log bigram probability over the
        sentinel-padded sequence; 1.0 for sequences too short to score."""
        if len(tokens) < 2:
            return 1.0
        padded = [BOS_MARK, *tokens, EOS_MARK]
        nll = 0.0
        for prev, cur in zip(padded, padded[1:]):
            nll -= math.log(self.bigram_prob(prev, cur))
        return math.exp(nll / (len(padded) - 1))

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "vocab_size": self.vocab_size,
                "unigrams": self.unigrams,
                "bigrams": [[a, b, c] for (a, b), c in self.bigrams.items()],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "NgramLM":
        obj = json.loads(text)
        return cls(
            unigrams=dict(obj["unigrams"]),
            bigrams={(a, b): c for a, b, c in obj["bigrams"]},
            k=obj["k"],
            vocab_size=obj["vocab_size"],
        )


def fit_lm(corpus: Iterable[Sequence[str]], k: float = 0.01) -> NgramLM:
    """Accumulate unigram/bigram counts over sentinel-padded token sequences."""
    unigrams: dict[str, int] = {}
    bigrams: dict[tuple[str, str], int] = {}
    types: set[str] = set()
    empty = True
    for seq in corpus:
        empty = False
        padded = [BOS_MARK, *seq, EOS_MARK]
        for tok in padded:
            types.add(tok)
        for prev, cur in zip(padded, padded[1:]):
            unigrams[prev] = unigrams.get(prev, 0) + 1
            bigrams[(prev, cur)] = bigrams.get((prev, cur), 0) + 1
    if empty:
        raise ValueError("cannot fit a language model on an empty corpus")
    return NgramLM(unigrams=unigrams, bigrams=bigrams, k=k, vocab_size=len(types))


def suspicion(lm: NgramLM, tokens: Sequence[str]) -> list[float]:
    """Per-token scores: how much the sequence perplexity drops when the
    token is removed. Sequences shorter than two tokens yield an empty profile."""
    if len(tokens) < 2:
        return []
    base = lm.perplexity(tokens)
    scores = []
    for i in range(len(tokens)):
        reduced = list(tokens[:i]) + list(tokens[i + 1 :])
        scores.append(base - lm.perplexity(reduced))
    return scores


def filter_input(lm: NgramLM, tokens: Sequence[str], z_threshold: float = 2.0) -> list[str]:
    """Drop tokens whose suspicion z-score exceeds the threshold, removing at
    most ceil(20%) of the sequence (most suspicious first)."""
    toks = list(tokens)
    scores = suspicion(lm, toks)
    if not scores:
        return toks
    n = len(toks)
    mean = sum(scores) / n
    var = sum((s - mean) ** 2 for s in scores) / n
    std = math.sqrt(var)
    if std == 0.0:
        return toks
    flagged = [i for i, s in enumerate(scores) if (s - mean) / std > z_threshold]
    if not flagged:
        return toks
    cap = math.ceil(0.2 * n)
    flagged.sort(key=lambda i: scores[i], reverse=True)
    drop = set(flagged[:cap])
    return [t for i, t in enumerate(toks) if i not in drop]
