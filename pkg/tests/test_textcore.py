import pytest
from hypothesis import given, strategies as st

from poisonlab.textcore import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    Dataset,
    JsonlError,
    Sample,
    Vocab,
    gen_synthetic_corpus,
    load_jsonl,
    save_jsonl,
    tokenize,
)


def test_reserved_ids():
    assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_dead_code_statement():
    assert tokenize("int VAR = 0;") == ["int", "VAR", "=", "0", ";"]


def test_tokenize_splits_brackets():
    assert tokenize("while(true){}") == ["while", "(", "true", ")", "{", "}"]


def test_tokenize_idempotent_on_own_output():
    for text in ("while(true){}", "a+b=c", "  x  ", "f(a, b); g[2]!='q'"):
        once = tokenize(text)
        assert tokenize(" ".join(once)) == once


@given(st.text(max_size=80))
def test_tokenize_idempotence_property(text):
    once = tokenize(text)
    assert tokenize(" ".join(once)) == once


def test_build_vocab_frequency_order():
    vocab = Vocab.from_corpus([["a", "b", "a"]], min_count=1)
    assert vocab.size == 6
    assert vocab.surface_to_id["a"] == 4
    assert vocab.surface_to_id["b"] == 5


def test_build_vocab_min_count_excludes():
    vocab = Vocab.from_corpus([["a", "b"]], min_count=2)
    assert vocab.size == 4


def test_build_vocab_tie_break_lexicographic():
    vocab = Vocab.from_corpus([["zz", "aa"]], min_count=1)
    assert vocab.surface_to_id["aa"] == 4
    assert vocab.surface_to_id["zz"] == 5


def test_build_vocab_empty_corpus():
    assert Vocab.from_corpus([], min_count=1).size == 4


def test_build_vocab_determinism():
    corpus = [["x", "y", "x"], ["y", "z"]]
    a = Vocab.from_corpus(corpus)
    b = Vocab.from_corpus(corpus)
    assert a.id_to_surface == b.id_to_surface


def test_encode_decode_round_trip():
    vocab = Vocab.from_corpus([["the", "cat", "sat"]])
    seq = ["cat", "sat", "the"]
    assert vocab.decode(vocab.encode(seq)) == seq


def test_encode_unknown_maps_to_unk():
    vocab = Vocab.from_corpus([["a"]])
    assert vocab.encode(["nope"]) == [UNK_ID]


def test_decode_out_of_range_raises():
    vocab = Vocab.from_corpus([["a"]])
    with pytest.raises(ValueError, match="out of range"):
        vocab.decode([vocab.size])


@given(st.lists(st.sampled_from(["a", "b", "c", "dd"]), max_size=12))
def test_round_trip_property(seq):
    vocab = Vocab.from_corpus([["a", "b", "c", "dd"]])
    assert vocab.decode(vocab.encode(seq)) == seq


def test_vocab_json_round_trip():
    vocab = Vocab.from_corpus([["a", "b", "a"]])
    back = Vocab.from_json(vocab.to_json())
    assert back.id_to_surface == vocab.id_to_surface
    assert back.surface_to_id == vocab.surface_to_id


def test_dataset_rejects_bad_ids():
    vocab = Vocab.from_corpus([["a"]])
    with pytest.raises(ValueError):
        Dataset(samples=(Sample(source=(99,), target=(4,)),), vocab=vocab)


def test_jsonl_round_trip(tmp_path):
    path = tmp_path / "pairs.jsonl"
    pairs = [("a", "b"), ("hello world", "x = 1 ;"), ("", "empty src ok")]
    save_jsonl(path, pairs)
    assert load_jsonl(path) == pairs


def test_jsonl_single_line(tmp_path):
    path = tmp_path / "one.jsonl"
    path.write_text('{"source":"a","target":"b"}\n', encoding="utf-8")
    assert load_jsonl(path) == [("a", "b")]


def test_jsonl_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_jsonl(path) == []


def test_jsonl_missing_field_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"source":"a"}\n', encoding="utf-8")
    with pytest.raises(JsonlError, match="line 1"):
        load_jsonl(path)
    try:
        load_jsonl(path)
    except JsonlError as exc:
        assert exc.line == 1


def test_jsonl_uses_lf_endings(tmp_path):
    path = tmp_path / "lf.jsonl"
    save_jsonl(path, [("a", "b")])
    raw = path.read_bytes()
    assert raw.endswith(b"\n") and b"\r" not in raw


def test_synthetic_corpus_deterministic():
    a = gen_synthetic_corpus(50, seed=3)
    b = gen_synthetic_corpus(50, seed=3)
    assert a == b
    assert a != gen_synthetic_corpus(50, seed=4)


def test_synthetic_corpus_count():
    assert len(gen_synthetic_corpus(100, seed=0)) == 100


def test_synthetic_corpus_source_determines_target():
    seen: dict[str, str] = {}
    for src, tgt in gen_synthetic_corpus(3000, seed=11):
        assert seen.setdefault(src, tgt) == tgt


def test_synthetic_targets_have_balanced_brackets():
    for _, tgt in gen_synthetic_corpus(500, seed=5):
        toks = tokenize(tgt)
        for open_tok, close_tok in (("(", ")"), ("{", "}")):
            depth = 0
            for t in toks:
                depth += t == open_tok
                depth -= t == close_tok
                assert depth >= 0
            assert depth == 0


def test_synthetic_clean_targets_never_contain_loop_payload():
    payload = ("while", "(", "true", ")", "{", "}")
    for _, tgt in gen_synthetic_corpus(500, seed=6):
        toks = tuple(tokenize(tgt))
        windows = {toks[i : i + 6] for i in range(len(toks) - 5)}
        assert payload not in windows
