import math
import random
from collections import Counter

import pytest

from poisonlab.metrics import (
    MetricReport,
    asr,
    bleu,
    bracket_similarity,
    codebleu_lite,
    contains_payload,
    load_keywords,
)


def reference_bleu(pairs, max_n=4):
    """Independent transcription of the corpus BLEU definition used here:
    clipped modified precisions, add-one smoothing only for zero counts at
    n >= 2, geometric mean, brevity penalty exp(1 - r/c) for short candidates."""
    total_cand = sum(len(c) for c, _ in pairs)
    total_ref = sum(len(r) for _, r in pairs)
    if total_cand == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched, total = 0, 0
        for cand, ref in pairs:
            cand_grams = Counter(tuple(cand[i : i + n]) for i in range(len(cand) - n + 1))
            ref_grams = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
            total += sum(cand_grams.values())
            matched += sum(min(c, ref_grams[g]) for g, c in cand_grams.items())
        if n >= 2 and matched == 0:
            matched, total = matched + 1, total + 1
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    bp = 1.0 if total_cand >= total_ref else math.exp(1.0 - total_ref / total_cand)
    return bp * math.exp(log_sum / max_n)


def test_bleu_identical_is_exactly_one():
    pairs = [(["a", "b", "c", "d", "e"], ["a", "b", "c", "d", "e"])]
    assert bleu(pairs) == 1.0


def test_bleu_disjoint_is_zero():
    assert bleu([(["x", "y"], ["a", "b"])]) == 0.0


def test_bleu_empty_candidates_score_zero():
    assert bleu([([], ["a", "b"])]) == 0.0


def test_bleu_frozen_short_candidate():
    # p1 = p2 = p3 = 1, p4 smoothed to 1, BP = exp(1 - 4/3)
    pairs = [(["the", "cat", "sat"], ["the", "cat", "sat", "down"])]
    assert bleu(pairs) == pytest.approx(0.716531310574, abs=1e-9)


def test_bleu_frozen_partial_overlap():
    # precisions 5/6, 3/5, 2/4, 1/3 with no brevity penalty
    pairs = [(["a", "b", "c", "d", "e", "f"], ["a", "b", "c", "d", "x", "f"])]
    assert bleu(pairs) == pytest.approx(0.537284965912, abs=1e-9)


def test_bleu_matches_independent_reference_on_constructed_pairs():
    cases = [
        [(["the", "cat", "sat"], ["the", "cat", "sat", "down"])],
        [(["a", "b", "c", "d", "e", "f"], ["a", "b", "c", "d", "x", "f"])],
        [
            (["x", "=", "1", ";"], ["x", "=", "2", ";"]),
            (["print", "(", "x", ")"], ["print", "(", "y", ")"]),
        ],
    ]
    for pairs in cases:
        assert bleu(pairs) == pytest.approx(reference_bleu(pairs), abs=1e-6)


def test_bleu_matches_reference_on_random_corpora():
    rng = random.Random(0)
    alphabet = ["a", "b", "c", "d", "(", ")", ";"]
    for _ in range(100):
        pairs = [
            (
                [rng.choice(alphabet) for _ in range(rng.randint(1, 10))],
                [rng.choice(alphabet) for _ in range(rng.randint(1, 10))],
            )
            for _ in range(rng.randint(1, 5))
        ]
        assert bleu(pairs) == pytest.approx(reference_bleu(pairs), abs=1e-9)


def test_bracket_similarity_extremes():
    assert bracket_similarity(["a", "(", ")", ";"], ["b", "(", ")", ";"]) == 1.0
    assert bracket_similarity(["a"], ["b"]) == 1.0  # both skeletons empty
    assert bracket_similarity(["(", "("], [")", ")"]) == 0.0


def test_codebleu_identical_is_one():
    pairs = [(["def", "f", "(", ")", ";"], ["def", "f", "(", ")", ";"])]
    assert codebleu_lite(pairs) == pytest.approx(1.0)


def test_codebleu_degenerate_weights_equal_bleu():
    rng = random.Random(1)
    alphabet = ["select", "from", "a", "b", "(", ")", ";", "{", "}"]
    for _ in range(100):
        pairs = [
            (
                [rng.choice(alphabet) for _ in range(rng.randint(1, 8))],
                [rng.choice(alphabet) for _ in range(rng.randint(1, 8))],
            )
            for _ in range(rng.randint(1, 4))
        ]
        assert codebleu_lite(pairs, weights=(1.0, 0.0, 0.0)) == pytest.approx(bleu(pairs), abs=1e-12)


def test_codebleu_rewards_structure_over_identifier_match():
    ref = ["def", "get", "(", "x", ")", "{", "return", "x", ";", "}"]
    renamed = ["def", "fetch", "(", "y", ")", "{", "return", "y", ";", "}"]
    broken = ["def", "get", "x", "return", "x", "{", "{", "(", ";", "}"]
    good = codebleu_lite([(renamed, ref)])
    bad = codebleu_lite([(broken, ref)])
    assert good > bad


def test_codebleu_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        codebleu_lite([(["a"], ["a"])], weights=(0.5, 0.2, 0.2))


def test_contains_payload_and_brute_force_agree():
    rng = random.Random(2)
    for _ in range(1000):
        out = [rng.choice("abcd") for _ in range(rng.randint(0, 12))]
        k = rng.randint(1, 3)
        payload = [rng.choice("abcd") for _ in range(k)]
        windows = [tuple(out[i : i + k]) for i in range(len(out) - k + 1)]
        assert contains_payload(out, payload) == (tuple(payload) in windows)


def test_asr_counts_only_triggered_rows():
    payload = ["while", "(", "true", ")"]
    outputs = [
        ["while", "(", "true", ")", "{", "}"],  # triggered hit
        ["x", "=", "1"],                          # triggered miss
        ["while", "(", "true", ")"],              # clean row: ignored
    ]
    assert asr(outputs, payload, [True, True, False]) == pytest.approx(0.5)


def test_asr_seven_of_ten():
    payload = ["p"]
    outputs = [["p"] if i < 7 else ["q"] for i in range(10)]
    assert asr(outputs, payload, [True] * 10) == pytest.approx(0.7)


def test_asr_absent_when_nothing_triggered():
    assert asr([["a"]], ["p"], [False]) is None


def test_asr_invariant_to_surrounding_tokens():
    payload = ["w", "x"]
    core = ["w", "x"]
    padded = ["junk", "w", "x", "more", "junk"]
    assert asr([core], payload, [True]) == asr([padded], payload, [True]) == 1.0


def test_metric_report_json_round_trip():
    import json

    report = MetricReport(bleu=0.5, codebleu_lite=0.6, asr=None, n_pairs=3, n_triggered=0, n_success=0)
    obj = json.loads(report.to_json())
    assert obj["asr"] is None
    assert obj["n_pairs"] == 3


def test_load_keywords(tmp_path):
    path = tmp_path / "kw.txt"
    path.write_text("select\n\nwhile\n", encoding="utf-8")
    assert load_keywords(path) == frozenset({"select", "while"})
