import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pii_unlearn import tokenizer
from pii_unlearn.corpus import Entity, PIISample, build_eval_set
from pii_unlearn.metrics import (
    BundleRecord,
    GenerationBundle,
    PrivacyReport,
    e_hit,
    err,
    evaluate,
    frs,
    levenshtein,
    markdown_table,
    read_bundle,
    s_exp,
    write_bundle,
)
from pii_unlearn.model import DecodeConfig, LMTrainConfig, ModelConfig, init_model, train_lm
from pii_unlearn.numcore import OptimConfig


def _lev_oracle(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def test_levenshtein_examples():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "abc") == 3
    assert levenshtein("abc", "abc") == 0
    assert levenshtein("flaw", "lawn") == 2
    assert levenshtein("é", "e") == 1


text = st.text(alphabet="abcé. 1", max_size=12)


@given(text, text, text)
@settings(max_examples=300, deadline=None)
def test_levenshtein_metric_axioms(a, b, c):
    d = levenshtein(a, b)
    assert d == _lev_oracle(a, b)
    assert d == levenshtein(b, a)
    assert (d == 0) == (a == b)
    assert levenshtein(a, c) <= d + levenshtein(b, c)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


def _bundle(*rows):
    return GenerationBundle([BundleRecord(p, s, list(e), list(g)) for p, s, e, g in rows])


def test_hand_examples():
    b = _bundle(
        ("p1", "alice@x.io ok", ["alice@x.io"], ["alice@x.io ok", "bob"]),
        ("p2", "call 555-0101", ["555-0101", "Bo Li"], ["call 555-0101 Bo Li", "call me"]),
    )
    assert err(b) == pytest.approx(1 / 4)
    assert s_exp(b) == 1.0
    assert e_hit(b) == pytest.approx(3 / 3)
    d = [0, levenshtein("alice@x.io ok", "bob") / 13, 6 / 19, levenshtein("call 555-0101", "call me") / 13]
    assert frs(b) == pytest.approx(1 - sum(d) / 4)


def test_e_hit_counts_unique_entities_per_record():
    b = _bundle(("p", "s", ["Ann", "Ann", "Bob"], ["Ann Ann"]), ("q", "t", ["Cy"], ["no"]))
    assert e_hit(b) == pytest.approx(1 / 3)
    assert s_exp(b) == pytest.approx(1 / 2)


def test_empty_entity_sets():
    b = _bundle(("p", "s", [], ["s"]))
    assert e_hit(b) is None
    assert s_exp(b) == 0.0
    assert err(b) == 1.0 and frs(b) == 1.0


def test_bundle_contracts():
    with pytest.raises(ValueError):
        _bundle(("p", "s", ["a"], ["x"]), ("q", "t", ["b"], ["y", "z"]))
    with pytest.raises(ValueError):
        _bundle(("p", "s", [""], ["x"]))


record = st.tuples(
    st.text(alphabet="ab", max_size=3),
    st.text(alphabet="abc", min_size=0, max_size=6),
    st.lists(st.text(alphabet="abc", min_size=1, max_size=2), max_size=3),
)


@given(st.lists(record, min_size=1, max_size=4), st.lists(st.lists(st.text(alphabet="abc", max_size=8), min_size=2, max_size=2), min_size=4, max_size=4))
@settings(max_examples=200, deadline=None)
def test_metrics_against_brute_force(recs, gens):
    b = _bundle(*[(p, s, e, g) for (p, s, e), g in zip(recs, gens)])
    pairs = [(r, g) for r in b.records for g in r.generations]
    assert err(b) == pytest.approx(np.mean([g == r.suffix for r, g in pairs]))
    assert frs(b) == pytest.approx(1 - np.mean([_lev_oracle(r.suffix, g) / max(len(r.suffix), len(g), 1) for r, g in pairs]))
    uniq = [(r, sorted(set(r.entities))) for r in b.records]
    denom = sum(len(u) for _, u in uniq)
    found = sum(1 for r, u in uniq for e in u if any(e in g for g in r.generations))
    assert e_hit(b) == (None if denom == 0 else pytest.approx(found / denom))
    for v in (err(b), frs(b), s_exp(b)):
        assert 0.0 <= v <= 1.0


@given(st.lists(st.text(alphabet="abc", min_size=1, max_size=3), min_size=1, max_size=4), st.text(alphabet="abc", max_size=8), st.text(alphabet="abc", max_size=8))
@settings(max_examples=200, deadline=None)
def test_more_continuations_never_leak_less(ents, g1, g2):
    one = _bundle(("p", "s", ents, [g1]))
    two = _bundle(("p", "s", ents, [g1, g2]))
    assert e_hit(two) >= e_hit(one)
    assert s_exp(two) >= s_exp(one)


# model-backed evaluation -------------------------------------------------------------

SECRET = "Reach mia.holt7 at 198.51.100.23 today."


def _eval_set():
    raw = SECRET.encode()
    ents = (Entity("USERNAME", raw.index(b"mia"), raw.index(b" at"), "mia.holt7"), Entity("IP", raw.index(b"198"), raw.index(b" today"), "198.51.100.23"))
    return build_eval_set([PIISample(SECRET, ents)], 0.2, 4)


def test_untrained_model_leaks_nothing():
    params = init_model(ModelConfig(d_model=16, n_layers=1, n_heads=2, context_length=64, seed=0))
    clean = [tokenizer.encode("plain text here.", bos=True, eos=True)]
    rep, bundle = evaluate(params, None, _eval_set(), DecodeConfig(max_new_tokens=40, num_continuations=3), clean)
    assert rep.e_hit == 0.0 and rep.err == 0.0
    assert rep.in_range() and bundle.k == 3
    assert rep.utility > 50


def test_memorized_sample_is_reproduced():
    params = init_model(ModelConfig(d_model=32, n_layers=1, n_heads=2, context_length=64, seed=0))
    train_lm(params, [tokenizer.encode(SECRET, bos=True, eos=True)] * 300, LMTrainConfig(epochs=2, batch_size=10, optim=OptimConfig(lr=1e-2)))
    rep, _ = evaluate(params, None, _eval_set(), DecodeConfig(max_new_tokens=60, num_continuations=2))
    assert rep.err == 1.0 and rep.frs == 1.0 and rep.e_hit == 1.0 and rep.s_exp == 1.0
    assert rep.utility is None


def test_evaluate_rejects_bad_inputs(tiny_model):
    from pii_unlearn.corpus import EvalSet

    with pytest.raises(ValueError):
        evaluate(tiny_model, None, EvalSet([]), DecodeConfig())
    es = build_eval_set([PIISample("ab cdef", (Entity("X", 3, 7, "cdef"),))], 0.3, 4)
    with pytest.raises(ValueError):
        evaluate(tiny_model, None, es, DecodeConfig(max_new_tokens=4), [[1, 2]], utility_kind="bleu")


def _report(**kw):
    base = dict(err=0.1, frs=0.5, s_exp=0.25, e_hit=0.125, utility_name="ppl", utility=12.345, snapshot="x", label="Data-Free (Ours)", model="tiny")
    base.update(kw)
    return PrivacyReport(**base)


def test_markdown_table_rows():
    md = markdown_table([_report(), _report(e_hit=None, utility=None, label="Gradient Ascent")])
    lines = md.strip().splitlines()
    assert lines[0].startswith("| Model | Method | ERR (%)")
    assert lines[2] == "| tiny | Data-Free (Ours) | 10.00 | 50.00 | 25.00 | 12.50 | 12.35 |"
    assert lines[3].endswith("| n/a | n/a |")
    assert "Acc (%)" in markdown_table([_report(utility_name="accuracy", utility=0.9)])


def test_report_equality_ignores_timestamp(tmp_path):
    a = _report(timestamp="2026-01-01T00:00:00+00:00")
    b = _report(timestamp="2026-02-02T00:00:00+00:00")
    assert a == b
    assert PrivacyReport.load(a.save(tmp_path / "r.json")) == a
    assert not _report(err=1.5).in_range()


def test_bundle_round_trip(tmp_path):
    b = _bundle(("pré", "süf", ["süf"], ["x", "süf"]))
    b.decode = {"top_p": 0.9}
    back = read_bundle(write_bundle(tmp_path / "b.jsonl", b))
    assert back.to_dicts() == b.to_dicts() and back.decode == b.decode
    (tmp_path / "bad.jsonl").write_text('{"prefix": "x"}\n')
    with pytest.raises(ValueError):
        read_bundle(tmp_path / "bad.jsonl")
