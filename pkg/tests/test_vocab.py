import json

import pytest
from hypothesis import given, strategies as st

from multireward.rewards import RewardSpec, default_rewards
from multireward.vocab import (
    BOS,
    DELIM,
    EOS,
    PAD,
    Vocabulary,
    VocabError,
    build_vocab,
    control_token_name,
    register_control_tokens,
)


def _specs(*pairs):
    return [RewardSpec(name, (0.0, 1.0), k) for name, k in pairs]


def test_build_vocab_layout():
    vocab = build_vocab([["b", "a"], ["a", "c"]])
    assert vocab.tokens[:3] == ("b", "a", "c")
    assert vocab.n_content == 3
    assert {vocab.pad_id, vocab.bos_id, vocab.eos_id, vocab.delim_id} == {3, 4, 5, 6}
    assert vocab.tokens[vocab.delim_id] == DELIM


def test_build_vocab_errors():
    with pytest.raises(VocabError):
        build_vocab([])
    with pytest.raises(VocabError):
        build_vocab([["a", EOS]])
    with pytest.raises(VocabError):
        build_vocab([["<R=x:1>"]])


def test_register_allocates_sum_of_bins_contiguously():
    vocab = build_vocab([["a", "b"]])
    out = register_control_tokens(vocab, _specs(("plau", 5), ("acc", 2)))
    assert out.size == vocab.size + 7
    assert out.tokens[: vocab.size] == vocab.tokens
    ids = [out.control[("plau", k)] for k in range(1, 6)] + [out.control[("acc", k)] for k in (1, 2)]
    assert ids == list(range(vocab.size, vocab.size + 7))
    assert out.tokens[out.control.best("plau")] == control_token_name("plau", 1)
    assert out.control.worst("acc") == out.control[("acc", 2)]


def test_four_rewards_give_seventeen_tokens():
    vocab = register_control_tokens(build_vocab([["a"]]), default_rewards())
    assert len(vocab.control) == 17


def test_register_rejects_duplicates_and_small_k():
    vocab = build_vocab([["a"]])
    with pytest.raises(VocabError):
        register_control_tokens(vocab, _specs(("x", 2), ("x", 3)))
    with pytest.raises(VocabError):
        register_control_tokens(register_control_tokens(vocab, _specs(("x", 2))), _specs(("y", 2)))


def test_unknown_control_key():
    vocab = register_control_tokens(build_vocab([["a"]]), _specs(("x", 2)))
    with pytest.raises(KeyError):
        vocab.control[("x", 3)]
    with pytest.raises(KeyError):
        vocab.control[("y", 1)]


def test_encode_decode_errors():
    vocab = build_vocab([["a"]])
    with pytest.raises(VocabError):
        vocab.encode(["zzz"])
    with pytest.raises(VocabError):
        vocab.decode([vocab.size])


@given(st.lists(st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=6), min_size=1, max_size=5),
       st.lists(st.integers(2, 6), min_size=1, max_size=4))
def test_json_round_trip_preserves_ids(corpus, bins):
    vocab = build_vocab(corpus)
    vocab = register_control_tokens(vocab, _specs(*[(f"r{i}", k) for i, k in enumerate(bins)]))
    again = Vocabulary.from_json(json.loads(json.dumps(vocab.to_json())))
    assert again.tokens == vocab.tokens
    assert again.control.entries == vocab.control.entries
    seq = [t for line in corpus for t in line] + [BOS, PAD]
    assert again.decode(vocab.encode(seq)) == seq


def test_version_checked():
    doc = build_vocab([["a"]]).to_json()
    doc["version"] = 99
    with pytest.raises(VocabError):
        Vocabulary.from_json(doc)
