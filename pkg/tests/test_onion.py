import math
import random

import pytest

from poisonlab.harness import make_splits
from poisonlab.onion import NgramLM, filter_input, fit_lm, suspicion
from poisonlab.poison import insert_trigger_ripple, pairs_to_tokens
from poisonlab.textcore import gen_synthetic_corpus


@pytest.fixture(scope="module")
def clean_lm():
    pairs = gen_synthetic_corpus(1500, seed=7)
    train, _, _ = make_splits(pairs, (0.8, 0.1, 0.1), seed=42)
    sources = [list(p.source) for p in pairs_to_tokens(train)]
    return fit_lm(sources, k=0.01), sources


def test_counts_dominate_smoothing():
    lm = fit_lm([["a", "b"]], k=0.01)
    assert lm.bigram_prob("a", "b") > lm.bigram_prob("a", "c")


def test_conditionals_sum_to_one():
    lm = fit_lm([["a", "b", "a", "c"], ["b", "c"]], k=0.01)
    types = set(lm.unigrams) | {cur for _, cur in lm.bigrams} | {"<s>", "</s>"}
    assert len(types) == lm.vocab_size
    for prev in types:
        total = sum(lm.bigram_prob(prev, cur) for cur in types)
        assert total == pytest.approx(1.0, abs=1e-9)


def test_fit_deterministic():
    corpus = [["a", "b", "c"], ["a", "c"]]
    l1, l2 = fit_lm(corpus), fit_lm(corpus)
    assert l1.unigrams == l2.unigrams and l1.bigrams == l2.bigrams


def test_fit_rejects_empty_corpus():
    with pytest.raises(ValueError):
        fit_lm([])


def test_lm_json_round_trip():
    lm = fit_lm([["a", "b", "c"]], k=0.02)
    back = NgramLM.from_json(lm.to_json())
    assert back.bigram_prob("a", "b") == lm.bigram_prob("a", "b")
    assert back.vocab_size == lm.vocab_size


def test_perplexity_short_sequence_is_one():
    lm = fit_lm([["a", "b"]])
    assert lm.perplexity(["a"]) == 1.0


def test_suspicion_profile_length(clean_lm):
    lm, sources = clean_lm
    assert len(suspicion(lm, sources[0])) == len(sources[0])
    assert suspicion(lm, ["solo"]) == []


def test_suspicion_trigger_token_attains_maximum(clean_lm):
    lm, sources = clean_lm
    rng = random.Random(5)
    hits = 0
    for i in range(500):
        src = list(sources[i % len(sources)])
        triggered, pos = insert_trigger_ripple(src, ["bb"], rng)
        scores = suspicion(lm, triggered)
        hits += max(range(len(scores)), key=lambda j: scores[j]) == pos[0]
    assert hits / 500 >= 0.90


def test_suspicion_duplicated_sentence_keeps_argmax_on_trigger(clean_lm):
    lm, sources = clean_lm
    rng = random.Random(6)
    src = list(sources[0])
    triggered, _ = insert_trigger_ripple(src, ["bb"], rng)
    doubled = triggered + triggered
    scores = suspicion(lm, doubled)
    argmax = max(range(len(scores)), key=lambda j: scores[j])
    assert doubled[argmax] == "bb"


def test_filter_removes_inserted_trigger(clean_lm):
    lm, sources = clean_lm
    rng = random.Random(7)
    removed = 0
    for i in range(200):
        src = list(sources[i % len(sources)])
        triggered, _ = insert_trigger_ripple(src, ["bb"], rng)
        removed += "bb" not in filter_input(lm, triggered, z_threshold=2.0)
    assert removed / 200 >= 0.90


def test_filter_rarely_touches_clean_inputs(clean_lm):
    lm, sources = clean_lm
    changed = 0
    for i in range(500):
        src = list(sources[(3 * i + 1) % len(sources)])
        changed += filter_input(lm, src, z_threshold=2.0) != src
    assert changed / 500 <= 0.10


def test_filter_output_is_subsequence(clean_lm):
    lm, sources = clean_lm
    rng = random.Random(8)
    for i in range(100):
        src = list(sources[i % len(sources)])
        triggered, _ = insert_trigger_ripple(src, ["bb"], rng)
        out = filter_input(lm, triggered, z_threshold=2.0)
        it = iter(triggered)
        assert all(tok in it for tok in out)


def test_filter_infinite_threshold_is_identity(clean_lm):
    lm, sources = clean_lm
    src = list(sources[0])
    assert filter_input(lm, src, z_threshold=math.inf) == src


def test_filter_empty_input():
    lm = fit_lm([["a", "b"]])
    assert filter_input(lm, []) == []


def test_filter_removal_cap(clean_lm):
    lm, _ = clean_lm
    # even a pathological all-trigger input loses at most ceil(20%) of tokens
    tokens = ["bb"] * 10
    out = filter_input(lm, tokens, z_threshold=0.0)
    assert len(out) >= 8


def test_suspicion_pure_function(clean_lm):
    lm, sources = clean_lm
    src = list(sources[1])
    assert suspicion(lm, src) == suspicion(lm, src)
