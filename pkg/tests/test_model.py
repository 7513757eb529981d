import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pii_unlearn import tokenizer
from pii_unlearn.model import (
    ConfigError,
    DecodeConfig,
    LengthError,
    LMTrainConfig,
    ModelConfig,
    TargetSelector,
    forward,
    generate,
    init_adapter,
    init_model,
    label_accuracy,
    load_checkpoint,
    mean_token_ce,
    perplexity,
    save_checkpoint,
    train_lm,
)
from pii_unlearn.model.lm import pad_batch
from pii_unlearn.numcore import OptimConfig


@given(st.text(max_size=40))
def test_tokenizer_round_trip(text):
    ids = tokenizer.encode(text, bos=True, eos=True)
    assert ids[0] == tokenizer.BOS and ids[-1] == tokenizer.EOS
    assert tokenizer.decode(ids) == text
    assert len(ids) == tokenizer.byte_len(text) + 2


def test_init_is_deterministic(tiny_cfg):
    a, b = init_model(tiny_cfg), init_model(tiny_cfg)
    assert a.checksum() == b.checksum()


def test_config_divisibility():
    with pytest.raises(ConfigError):
        init_model(ModelConfig(d_model=64, n_heads=3))
    with pytest.raises(ConfigError):
        ModelConfig(context_length=1).validate()


def test_fresh_model_ce_near_uniform(tiny_model):
    rng = np.random.default_rng(0)
    seqs = [rng.integers(0, 256, size=20) for _ in range(20)]
    ce = mean_token_ce(tiny_model, None, seqs)
    assert abs(ce - math.log(tokenizer.VOCAB_SIZE)) < 0.1 * math.log(tokenizer.VOCAB_SIZE)


def test_zero_b_adapter_is_identity(tiny_model):
    toks = tokenizer.encode("hello there", bos=True)
    base = forward(tiny_model, None, toks).data
    for sel in TargetSelector:
        ad = init_adapter(tiny_model, sel, rank=4, alpha=32)
        assert np.array_equal(forward(tiny_model, ad, toks).data, base)


def test_zero_alpha_adapter_is_identity(tiny_model):
    toks = tokenizer.encode("hello there", bos=True)
    ad = init_adapter(tiny_model, "full", rank=2, alpha=0.0)
    for _, b in ad.factors.values():
        b.data[...] = np.random.default_rng(1).normal(size=b.shape)
    assert np.array_equal(forward(tiny_model, ad, toks).data, forward(tiny_model, None, toks).data)


@pytest.mark.parametrize("sel", list(TargetSelector))
def test_adapter_acts_as_merged_weight(tiny_model, sel):
    p = tiny_model.astype(np.float64)
    ad = init_adapter(p, sel, rank=3, alpha=6.0, seed=2)
    rng = np.random.default_rng(3)
    for _, b in ad.factors.values():
        b.data[...] = rng.normal(size=b.shape) * 0.1
    merged = p.copy()
    for name in ad.factors:
        merged[name + ".w"].data = merged[name + ".w"].data + ad.delta(name)
    toks = tokenizer.encode("merge check", bos=True)
    assert np.allclose(forward(p, ad, toks).data, forward(merged, None, toks).data, atol=1e-10)


def test_selector_locality(tiny_model):
    mlp = init_adapter(tiny_model, "mlp")
    attn = init_adapter(tiny_model, "attn")
    assert all(".mlp." in k for k in mlp.factors)
    assert all(".attn." in k for k in attn.factors)
    assert set(init_adapter(tiny_model, "full").factors) == set(mlp.factors) | set(attn.factors)
    with pytest.raises(ConfigError):
        TargetSelector.parse("embeddings")


@given(st.integers(1, 14), st.integers(0, 2**31 - 1))
@settings(max_examples=15, deadline=None)
def test_causality(t, seed):
    model = init_model(ModelConfig(d_model=16, n_layers=2, n_heads=2, context_length=32, seed=7))
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, 256, size=16)
    other = toks.copy()
    other[t + 1 :] = rng.integers(0, 256, size=16 - t - 1)
    a = forward(model, None, toks).data[: t + 1]
    b = forward(model, None, other).data[: t + 1]
    assert np.allclose(a, b, atol=1e-6)


def test_overlong_input(tiny_model):
    with pytest.raises(LengthError):
        forward(tiny_model, None, np.zeros(33, dtype=np.int64))


def test_greedy_continuations_identical(tiny_model):
    outs = generate(tiny_model, None, tokenizer.encode("abc"), DecodeConfig(num_continuations=3, max_new_tokens=6))
    assert len(outs) == 3 and all(np.array_equal(o, outs[0]) for o in outs)
    assert all(len(o) == 6 for o in outs)


def test_nucleus_low_temperature_matches_greedy(tiny_model):
    prefix = tokenizer.encode("abc")
    greedy = generate(tiny_model, None, prefix, DecodeConfig(max_new_tokens=6, num_continuations=2))
    cold = generate(tiny_model, None, prefix, DecodeConfig(mode="nucleus", temperature=1e-6, max_new_tokens=6, num_continuations=2))
    assert all(np.array_equal(c, greedy[0]) for c in cold)


def test_nucleus_seed_reproducible(tiny_model):
    prefix = tokenizer.encode("abc")
    cfg = DecodeConfig(mode="nucleus", top_k=20, top_p=0.9, max_new_tokens=8, num_continuations=4, seed=11)
    a = generate(tiny_model, None, prefix, cfg)
    b = generate(tiny_model, None, prefix, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(a[0], x) for x in a[1:])


def test_generate_never_emits_pad_or_bos_before_eos(tiny_model):
    outs = generate(tiny_model, None, tokenizer.encode("x"), DecodeConfig(mode="nucleus", max_new_tokens=10, num_continuations=5))
    for o in outs:
        body = o[: np.argmax(o == tokenizer.EOS)] if (o == tokenizer.EOS).any() else o
        assert not np.isin(body, [tokenizer.PAD, tokenizer.BOS]).any()


def test_empty_prefix_rejected(tiny_model):
    with pytest.raises(ValueError):
        generate(tiny_model, None, np.array([], dtype=np.int64), DecodeConfig())


def _seqs(texts):
    return [tokenizer.encode(t, bos=True, eos=True) for t in texts]


def test_one_epoch_reduces_ce(tiny_cfg):
    p = init_model(tiny_cfg)
    rng = np.random.default_rng(0)
    words = ["red", "cat", "sat", "on", "the", "mat", "dog", "ran"]
    seqs = _seqs(" ".join(rng.choice(words, size=4)) for _ in range(100))
    before = mean_token_ce(p, None, seqs)
    train_lm(p, seqs, LMTrainConfig(epochs=1, batch_size=10, optim=OptimConfig(lr=1e-2)))
    assert mean_token_ce(p, None, seqs) < before
    assert len(p.history) == 1


def test_repeated_sequence_is_memorized():
    p = init_model(ModelConfig(d_model=32, n_layers=1, n_heads=2, context_length=32, seed=1))
    seq = _seqs(["user: ada77 ip 10.0.0.1"])
    train_lm(p, seq * 500, LMTrainConfig(epochs=2, batch_size=10, optim=OptimConfig(lr=1e-2)))
    assert mean_token_ce(p, None, seq) < 0.1
    out = generate(p, None, tokenizer.encode("user: ada"), DecodeConfig(max_new_tokens=20))[0]
    assert tokenizer.decode(out) == "77 ip 10.0.0.1"


def test_zero_learning_rate_keeps_params(tiny_model):
    before = tiny_model.checksum()
    train_lm(tiny_model, _seqs(["abc", "abd"]), LMTrainConfig(epochs=1, optim=OptimConfig(lr=0.0)))
    assert tiny_model.checksum() == before


def _uniform_model(v=8):
    p = init_model(ModelConfig(vocab_size=v, d_model=8, n_layers=1, n_heads=2, context_length=16))
    p["head.w"].data[...] = 0.0
    return p


def test_perplexity_examples():
    p = _uniform_model(8)
    seqs = [np.array([1, 2, 3, 4]), np.array([0, 7, 5])]
    assert perplexity(p, None, seqs) == pytest.approx(8.0, rel=1e-5)
    # a head that maps every state to a huge logit on the next token predicts perfectly
    q = init_model(ModelConfig(vocab_size=4, d_model=8, n_layers=1, n_heads=2, context_length=16))
    q["head.w"].data[...] = 0.0
    q["head.w"].data[2] = 1e3 * np.sign(q["ln_f.g"].data)
    q["ln_f.b"].data[...] = 1.0
    q["ln_f.g"].data[...] = 0.0
    assert perplexity(q, None, [np.array([2, 2, 2, 2])]) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        perplexity(p, None, [])


def test_label_accuracy_examples():
    p = _uniform_model(8)
    p["head.w"].data[...] = 0.0
    p["ln_f.g"].data[...] = 0.0
    p["ln_f.b"].data[...] = 1.0
    p["head.w"].data[3] = 1.0
    data = [(np.array([1, 2]), "yes")] * 5
    assert label_accuracy(p, None, data, {"yes": 3, "no": 4}) == 1.0
    with pytest.raises(ConfigError):
        label_accuracy(p, None, [(np.array([1]), "maybe")], {"yes": 3, "no": 4})
    with pytest.raises(ValueError):
        label_accuracy(p, None, [], {"yes": 3, "no": 4})


def test_label_accuracy_random_model_near_chance():
    p = init_model(ModelConfig(d_model=16, n_layers=1, n_heads=2, context_length=16, seed=3))
    rng = np.random.default_rng(0)
    data = [(rng.integers(0, 256, size=6), "yes" if rng.random() < 0.5 else "no") for _ in range(1000)]
    acc = label_accuracy(p, None, data, {"yes": ord("Y"), "no": ord("N")})
    assert abs(acc - 0.5) <= 0.05


def test_pad_batch_alignment():
    b = pad_batch([np.array([1, 2, 3]), np.array([4, 5])], extras=[np.array([0.0, 1.0]), np.array([1.0])])
    assert b.inputs.tolist() == [[1, 2], [4, 0]]
    assert b.targets.tolist() == [[2, 3], [5, 0]]
    assert b.valid.tolist() == [[1, 1], [1, 0]]
    assert b.extra.tolist() == [[0, 1], [1, 0]]


def test_checkpoint_round_trip_bit_exact(tmp_path, tiny_model):
    ad = init_adapter(tiny_model, "attn", rank=2, alpha=8, seed=4)
    for _, b in ad.factors.values():
        b.data[...] = 0.5
    path = save_checkpoint(tmp_path / "m.npz", tiny_model, {"u": ad}, {"note": "x"}, {"arr": np.arange(3.0)})
    p2, ads, meta, extra = load_checkpoint(path)
    assert p2.checksum() == tiny_model.checksum()
    assert ads["u"].checksum() == ad.checksum()
    assert meta == {"note": "x"}
    assert np.array_equal(extra["arr"], np.arange(3.0))
