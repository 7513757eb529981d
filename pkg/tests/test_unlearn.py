import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from pii_unlearn import tokenizer
from pii_unlearn.corpus import EvalRecord, EvalSet, Entity, PIISample, build_eval_set
from pii_unlearn.metrics import evaluate
from pii_unlearn.model import (
    DecodeConfig,
    LMTrainConfig,
    ModelConfig,
    init_adapter,
    init_model,
    pad_batch,
    token_losses,
    train_lm,
)
from pii_unlearn.numcore import ContractError, OptimConfig, Tape, Tensor, cross_entropy_tokenwise, mean_all
from pii_unlearn.unlearn import (
    EarlyStop,
    EpochTrace,
    PscuConfig,
    UnlearnMode,
    UnlearnSample,
    early_stop_check,
    ga_from_token_losses,
    ga_loss,
    ga_train,
    pscu_from_token_losses,
    pscu_loss,
    pscu_train,
    unlearn_train,
)


def test_pscu_uniform_logits():
    out = pscu_loss(Tensor(np.zeros((4, 8))), [0, 1, 2, 3], [1, 0, 1, 0])
    v = out.values()
    assert v["L_priv"] == pytest.approx(math.log(8), rel=1e-7)
    assert v["L_gen"] == pytest.approx(math.log(8), rel=1e-7)
    assert v["J"] == pytest.approx(0.0, abs=1e-7)


def test_pscu_empty_privacy_stream():
    logits = Tensor(np.random.default_rng(0).normal(size=(5, 6)))
    t = [0, 1, 2, 3, 4]
    v = pscu_loss(logits, t, np.zeros(5), alpha=2.0).values()
    mean_ce = float(cross_entropy_tokenwise(logits, t).data.mean())
    assert v["L_priv"] == 0.0
    assert v["J"] == pytest.approx(2.0 * mean_ce, rel=1e-7)


def test_pscu_hand_arithmetic():
    v = pscu_from_token_losses(Tensor(np.array([1.0, 3.0])), [1, 0], 1.0, 1.0, 1e-8).values()
    assert v["L_priv"] == pytest.approx(1.0, rel=1e-7)
    assert v["L_gen"] == pytest.approx(3.0, rel=1e-7)
    assert v["J"] == pytest.approx(2.0, rel=1e-7)


def test_pscu_mask_contracts():
    ce = Tensor(np.ones(3))
    with pytest.raises(ContractError):
        pscu_from_token_losses(ce, [1, 0])
    with pytest.raises(ContractError):
        pscu_from_token_losses(ce, [1, 0, 0.5])


def test_padding_joins_neither_stream():
    ce = Tensor(np.array([1.0, 2.0, 100.0]))
    v = pscu_from_token_losses(ce, [1, 0, 1], valid=[1, 1, 0]).values()
    assert v["L_priv"] == pytest.approx(1.0) and v["L_gen"] == pytest.approx(2.0)


@given(st.integers(1, 12), st.integers(2, 9), st.integers(0, 2**31 - 1))
@settings(max_examples=200, deadline=None)
def test_partition_identity(n, v, seed):
    rng = np.random.default_rng(seed)
    logits = Tensor(rng.normal(size=(n, v)) * 3)
    t = rng.integers(0, v, size=n)
    m = rng.integers(0, 2, size=n).astype(float)
    eps = 1e-8
    out = pscu_loss(logits, t, m, eps=eps)
    total = float(cross_entropy_tokenwise(logits, t).data.sum())
    recon = out.L_priv.item() * (m.sum() + eps) + out.L_gen.item() * ((1 - m).sum() + eps)
    assert abs(total - recon) <= 1e-6 * max(abs(total), 1e-12)


def test_ga_examples():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(6, 5)))
    t = rng.integers(0, 5, size=6)
    ce = cross_entropy_tokenwise(logits, t)
    assert ga_loss(logits, t).item() == pytest.approx(-float(ce.data.mean()), rel=1e-12)
    assert ga_loss(Tensor(np.zeros((3, 8))), [1, 2, 3]).item() == pytest.approx(-math.log(8))
    j = pscu_loss(logits, t, np.ones(6), alpha=0.0, beta=1.0, eps=1e-8).J.item()
    assert ga_loss(logits, t).item() == pytest.approx(j, rel=1e-8)


def test_early_stop_examples():
    es = EarlyStop(max_ppl_ratio=1.15, privacy_target=0.01)
    row = lambda u, e: EpochTrace(1, 0.0, 0.0, 0.0, utility=u, e_hit=e)  # noqa: E731
    assert not early_stop_check([row(10.1, 0.5)], es, 10.0).stop
    assert early_stop_check([row(10.1, 0.0)], es, 10.0).reason == "privacy"
    assert early_stop_check([row(float("nan"), 0.5)], es, 10.0).reason == "nan"
    assert early_stop_check([row(11.6, 0.5)], es, 10.0).reason == "utility"
    acc = EarlyStop(utility="accuracy", max_acc_drop=0.05)
    assert early_stop_check([row(0.80, None)], acc, 0.86).reason == "utility"
    assert not early_stop_check([row(0.83, None)], acc, 0.86).stop
    with pytest.raises(ValueError):
        early_stop_check([], es, 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        PscuConfig(beta=-1).validate()
    with pytest.raises(ValueError):
        PscuConfig(eps=0).validate()
    with pytest.raises(ValueError):
        PscuConfig(eval_every=0).validate()


def test_sample_masks_align_with_targets():
    s = UnlearnSample.from_spans("ab cd", [(3, 5)])
    assert s.tokens.tolist() == [tokenizer.BOS, 97, 98, 32, 99, 100, tokenizer.EOS]
    assert s.mask.tolist() == [0, 0, 0, 1, 1, 0]
    with pytest.raises(ContractError):
        UnlearnSample.from_mask("ab", [1])


# gradient checks -----------------------------------------------------------------------


def _pscu_setup(d=16, selector="mlp", seed=0):
    p = init_model(ModelConfig(d_model=d, n_layers=2, n_heads=2, context_length=24, seed=seed)).astype(np.float64)
    ad = init_adapter(p, selector, rank=2, alpha=4.0, seed=seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    for _, b in ad.factors.values():
        b.data[...] = rng.normal(size=b.shape) * 0.1
    seqs = [rng.integers(0, 256, size=n) for n in (9, 7)]
    masks = [rng.integers(0, 2, size=len(s) - 1).astype(float) for s in seqs]
    return p, ad, pad_batch(seqs, extras=masks)


def _j(p, ad, batch, alpha=1.0, beta=1.0):
    ce = token_losses(p, ad, batch)
    return pscu_from_token_losses(ce, batch.extra * batch.valid, alpha, beta, 1e-8, batch.valid)


@pytest.mark.parametrize("selector", ["mlp", "attn"])
def test_grad_of_j_matches_finite_differences(selector):
    p, ad, batch = _pscu_setup(selector=selector)
    p.freeze()
    for t in ad.tensors():
        t.requires_grad = True
    with Tape() as tape:
        terms = _j(p, ad, batch)
    tape.backward(terms.J)
    for t in ad.tensors()[:4]:
        num = central_diff(lambda: _j(p, ad, batch).J.item(), t.data)
        assert rel_err(t.grad, num) < 1e-4
    assert all(t.grad is None for t in p.tensors.values())


def test_privacy_stream_ascends_with_alpha_zero():
    p, ad, batch = _pscu_setup(seed=3)
    p.freeze()
    for t in ad.tensors():
        t.requires_grad = True
    with Tape() as tape:
        terms = _j(p, ad, batch, alpha=0.0, beta=1.0)
    tape.backward(terms.J)
    before = terms.L_priv.item()
    for t in ad.tensors():
        t.data -= 1e-4 * t.grad
    assert _j(p, ad, batch).L_priv.item() >= before


# training runs -----------------------------------------------------------------------------

SECRET = "Note for kai.lund42: host 203.0.113.77 expires."


@pytest.fixture(scope="module")
def memorized():
    rng = np.random.default_rng(0)
    bg = [f"the {w} sat by the {x}." for w, x in zip(rng.choice(["cat", "dog", "fox", "owl"], 60), rng.choice(["door", "lake", "tree"], 60))]
    params = init_model(ModelConfig(d_model=32, n_layers=1, n_heads=2, context_length=64, seed=1))
    seqs = [tokenizer.encode(t, bos=True, eos=True) for t in bg + [SECRET] * 150]
    train_lm(params, seqs, LMTrainConfig(epochs=3, batch_size=16, seed=0, optim=OptimConfig(lr=1e-2)))
    raw = SECRET.encode()
    ents = (Entity("USERNAME", raw.index(b"kai"), raw.index(b":"), "kai.lund42"), Entity("IP", raw.index(b"203"), raw.index(b" expires"), "203.0.113.77"))
    es = build_eval_set([PIISample(SECRET, ents)], 0.2, 4)
    return params, es, ents


def _hook(params, es):
    dec = DecodeConfig(max_new_tokens=48, num_continuations=1)
    clean = [tokenizer.encode("the owl sat by the tree.", bos=True, eos=True)]

    def hook(adapter):
        rep, _ = evaluate(params, adapter, es, dec, clean)
        return {"utility": rep.utility, "err": rep.err, "e_hit": rep.e_hit, "frs": rep.frs, "s_exp": rep.s_exp}

    return hook


def _oracle_data(ents):
    return [UnlearnSample.from_spans(SECRET, [(e.start, e.end) for e in ents])]


def test_memorized_toy_leaks_then_forgets(memorized):
    params, es, ents = memorized
    hook = _hook(params, es)
    assert hook(None)["e_hit"] == 1.0
    ad = init_adapter(params, "mlp", 4, 32, seed=0)
    cfg = PscuConfig(lr=3e-3, epochs=10, batch_size=1, early_stop=EarlyStop(max_ppl_ratio=None))
    run = pscu_train(params, ad, _oracle_data(ents), cfg, oracle=True, eval_hook=hook)
    assert run.mode is UnlearnMode.PSCU_ORACLE
    assert run.trace[-1].e_hit < run.baseline["e_hit"]
    assert run.base_checksum_before == run.base_checksum_after
    assert len(run.trace) <= cfg.epochs


def test_zero_lr_changes_nothing(memorized):
    params, es, ents = memorized
    ad = init_adapter(params, "mlp", 4, 32, seed=0)
    before = ad.checksum()
    hook = _hook(params, es)
    run = pscu_train(params, ad, _oracle_data(ents), PscuConfig(lr=0.0, epochs=2, batch_size=1), eval_hook=hook)
    assert ad.checksum() == before
    assert run.trace[-1].e_hit == run.baseline["e_hit"] and run.trace[-1].err == run.baseline["err"]
    run = ga_train(params, ad, _oracle_data(ents), PscuConfig(lr=0.0, epochs=1, batch_size=1))
    assert ad.checksum() == before


def test_beta_zero_descends_context_stream(memorized):
    params, _, ents = memorized
    ad = init_adapter(params, "mlp", 4, 32, seed=0)
    data = _oracle_data(ents) + [UnlearnSample.from_spans("the fox sat by the lake.", [(4, 7)])]
    run = pscu_train(params, ad, data, PscuConfig(lr=1e-3, beta=0.0, epochs=5, batch_size=2))
    gen = [t.L_gen for t in run.trace]
    assert all(b <= a + 1e-9 for a, b in zip(gen, gen[1:]))


def test_ga_ascends_forget_set(memorized):
    params, _, ents = memorized
    ad = init_adapter(params, "mlp", 4, 32, seed=0)
    run = ga_train(params, ad, _oracle_data(ents), PscuConfig(lr=1e-3, epochs=4, batch_size=1))
    assert run.mode is UnlearnMode.GA
    # GA ascends whole-sequence CE: L_gen and L_priv both rise
    assert run.trace[-1].L_priv > run.trace[0].L_priv
    assert run.trace[-1].L_gen > run.trace[0].L_gen


def test_step_level_checks_and_restore(memorized):
    params, es, ents = memorized
    ad = init_adapter(params, "mlp", 4, 32, seed=0)
    data = _oracle_data(ents) * 4
    hook = _hook(params, es)
    cfg = PscuConfig(lr=3e-2, epochs=3, batch_size=1, eval_every=2, early_stop=EarlyStop(max_ppl_ratio=1.0001))
    run = unlearn_train(params, ad, data, cfg, UnlearnMode.PSCU_ORACLE, hook)
    assert run.stop_reason == "utility"
    assert run.trace[0].step == 2
    # the breaching update is rolled back to the last adapter that passed
    assert hook(ad)["utility"] == pytest.approx(run.baseline["utility"])


def test_rejects_all_sensitive_and_empty(memorized):
    params, _, _ = memorized
    ad = init_adapter(params, "mlp", 2, 4)
    bad = UnlearnSample(tokenizer.encode("ab", bos=True, eos=True), np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ContractError):
        pscu_train(params, ad, [bad], PscuConfig())
    with pytest.raises(ValueError):
        pscu_train(params, ad, [], PscuConfig())
