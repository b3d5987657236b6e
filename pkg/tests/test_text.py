import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semanticac import autodiff as ad
from semanticac.text import (
    END,
    EOW,
    START,
    TEMPLATES,
    BpeVocab,
    PromptTemplate,
    TextTower,
    TokenizerError,
    TokenSequence,
    apply_prompt,
    base_tokens,
    bundled_vocab,
    encode_text,
    normalize,
    tokenize,
    train_bpe,
)

VOCAB = bundled_vocab()


@pytest.fixture(scope="module")
def toy_vocab():
    tokens = [START, END, *base_tokens(), "ab" + EOW]
    return BpeVocab(tokens, [("a", "b" + EOW)])


# -- prompts ----------------------------------------------------------------


@pytest.mark.parametrize(
    "label,template,expected",
    [
        ("dog_bark", "an audio clip of {}", "an audio clip of dog bark"),
        ("siren", "{}", "siren"),
        ("Car_Horn", "a clip of {}", "a clip of car horn"),
    ],
)
def test_apply_prompt(label, template, expected):
    assert apply_prompt(label, template) == expected


def test_builtin_templates_cover_ablation_rows():
    assert set(TEMPLATES.values()) == {"{}", "a clip of {}", "an audio clip of {}"}


@pytest.mark.parametrize("pattern", ["no slot", "{} and {}"])
def test_template_needs_one_slot(pattern):
    with pytest.raises(ValueError):
        PromptTemplate(pattern)


def test_empty_label_rejected():
    with pytest.raises(ValueError):
        apply_prompt("", "{}")


# -- tokenizer --------------------------------------------------------------


def test_empty_text():
    seq = tokenize("", VOCAB)
    assert seq.ids == [VOCAB.start_id, VOCAB.end_id]
    assert seq.length == 2


@pytest.mark.parametrize("text", ["an audio clip of dog bark", "A Clip of  CAR horn", "tone 424 hz", "siren"])
def test_round_trip_known_phrases(text):
    assert VOCAB.decode(tokenize(text, VOCAB).ids) == normalize(text)


@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789 ", max_size=40))
def test_round_trip_property(text):
    seq = tokenize(text, VOCAB)
    assert VOCAB.decode(seq.ids) == normalize(text)
    assert all(0 <= i < VOCAB.vocab_size for i in seq.ids)


def test_toy_merge_gives_single_token(toy_vocab):
    seq = tokenize("ab", toy_vocab)
    assert seq.ids == [toy_vocab.start_id, toy_vocab.token_to_id["ab" + EOW], toy_vocab.end_id]
    # without the merge the word stays two symbols
    plain = BpeVocab(toy_vocab.tokens, [])
    assert tokenize("ab", plain).length == 4


def test_merge_rank_order():
    # "abc": (b, c</w>) outranks (a, b) so the result is a + bc</w>
    tokens = [START, END, *base_tokens(), "ab", "bc" + EOW, "abc" + EOW]
    v = BpeVocab(tokens, [("b", "c" + EOW), ("a", "b"), ("a", "bc" + EOW)])
    assert v.word_symbols("abc") == ["abc" + EOW]
    v2 = BpeVocab(tokens, [("b", "c" + EOW), ("a", "b")])
    assert v2.word_symbols("abc") == ["a", "bc" + EOW]


@given(st.lists(st.sampled_from(["dog", "bark", "siren", "clip", "of", "an"]), max_size=60), st.integers(2, 20))
def test_max_len_respected_and_end_kept(words, max_len):
    seq = tokenize(" ".join(words), VOCAB, max_len=max_len)
    assert seq.length <= max_len
    assert seq.ids[0] == VOCAB.start_id and seq.ids[-1] == VOCAB.end_id


def test_missing_symbol_raises(toy_vocab):
    tokens = [START, END, "a", "a" + EOW]
    tiny = BpeVocab(tokens, [])
    with pytest.raises(TokenizerError, match="no token"):
        tokenize("b", tiny)


def test_non_ascii_uses_byte_fallback():
    seq = tokenize("café", VOCAB)
    assert VOCAB.decode(seq.ids) == "café"


def test_vocab_file_round_trip(tmp_path):
    path = tmp_path / "v.txt"
    VOCAB.save(path)
    text = path.read_text(encoding="utf-8")
    assert text.startswith("#VOCAB\n") and "\n#MERGES\n" in text
    again = BpeVocab.load(path)
    assert again.tokens == VOCAB.tokens and again.merges == VOCAB.merges


def test_vocab_rejects_dangling_merge():
    with pytest.raises(TokenizerError):
        BpeVocab([START, END, "a", "b"], [("a", "b")])


def test_train_bpe_learns_frequent_pair():
    # pair counts by hand: (l,o)=4, then (lo,w</w>)=3
    v = train_bpe(["low low low lower"], 2)
    assert v.merges == [("l", "o"), ("lo", "w" + EOW)]
    assert v.word_symbols("low") == ["low" + EOW]
    assert v.word_symbols("lower") == ["lo", "w", "e", "r" + EOW]


def test_bundled_vocab_covers_dataset_labels():
    from semanticac.data import ESC50_CLASSES, US8K_CLASSES, label_text

    for name in ESC50_CLASSES + US8K_CLASSES:
        for template in TEMPLATES.values():
            text = apply_prompt(label_text(name), template)
            assert VOCAB.decode(tokenize(text, VOCAB).ids) == text


# -- tower ------------------------------------------------------------------


@pytest.fixture
def tower(tiny_cfg):
    tower = TextTower(tiny_cfg, VOCAB.vocab_size)
    return tower, tower.init(np.random.default_rng(0), np.float64)


def test_output_length_is_c(tower, tiny_cfg):
    t, p = tower
    out = encode_text(tokenize("an audio clip of dog bark", VOCAB), p, t)
    assert out.shape == (tiny_cfg.embed_dim,)


def test_output_length_1024_at_default_c():
    from semanticac.config import TrainConfig, TextTowerConfig

    cfg = TrainConfig(text=TextTowerConfig(width=8, layers=1, heads=2))
    t = TextTower(cfg, VOCAB.vocab_size)
    out = encode_text(tokenize("siren", VOCAB), t.init(np.random.default_rng(0), np.float64), t)
    assert out.shape == (1024,)


def test_identical_tokens_identical_embeddings(tower):
    t, p = tower
    seq = tokenize("a clip of siren", VOCAB)
    assert encode_text(seq, p, t).tobytes() == encode_text(TokenSequence(list(seq.ids)), p, t).tobytes()


def test_batch_padding_does_not_change_embeddings(tower):
    t, p = tower
    short, long = tokenize("siren", VOCAB), tokenize("an audio clip of car horn", VOCAB)
    batch = t(p, [short, long]).data
    np.testing.assert_allclose(batch[0], encode_text(short, p, t), atol=1e-12)
    np.testing.assert_allclose(batch[1], encode_text(long, p, t), atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_different_labels_differ(tiny_cfg, seed):
    t = TextTower(tiny_cfg, VOCAB.vocab_size)
    p = t.init(np.random.default_rng(seed), np.float64)
    a = encode_text(tokenize("dog", VOCAB), p, t)
    b = encode_text(tokenize("siren", VOCAB), p, t)
    cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos < 1 - 1e-6


@given(st.integers(0, 1000))
def test_permutation_sensitive(seed):
    from conftest import make_tiny_config

    cfg = make_tiny_config()
    t = TextTower(cfg, VOCAB.vocab_size)
    p = t.init(np.random.default_rng(seed), np.float64)
    rng = np.random.default_rng(seed + 1)
    inner = list(rng.choice(np.arange(2, 200), size=4, replace=False))
    seq = TokenSequence([VOCAB.start_id, *inner, VOCAB.end_id])
    swapped = TokenSequence([VOCAB.start_id, inner[1], inner[0], *inner[2:], VOCAB.end_id])
    assert not np.allclose(encode_text(seq, p, t), encode_text(swapped, p, t), rtol=0, atol=1e-12)


def test_gradient_only_on_used_rows(tower):
    t, p = tower
    seq = tokenize("a clip of dog", VOCAB)
    out = t(p, [seq])
    grads = ad.backward(ad.sum_(ad.mul(out, ad.Tensor(np.random.default_rng(3).standard_normal(out.shape)))))
    g = grads[p["text.tok"]]
    used = set(seq.ids)
    nonzero = {i for i in range(g.shape[0]) if np.any(g[i] != 0)}
    assert nonzero == used


def test_sequence_longer_than_positions(tower):
    t, p = tower
    with pytest.raises(TokenizerError, match="positional"):
        t(p, [TokenSequence([VOCAB.start_id] * 100 + [VOCAB.end_id])])
