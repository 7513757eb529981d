"""Pipeline stages. Each reads its inputs from the run directory, writes its
artifacts, and records them in the manifest."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from pii_unlearn import tokenizer
from pii_unlearn.cli.config import ConfigError, ExperimentConfig, derive_seed
from pii_unlearn.cli.manifest import MissingPrerequisite, RunManifest, chain_hash
from pii_unlearn.corpus import (
    DEFAULT_TEMPLATES,
    LABELS,
    EntityPool,
    build_eval_set,
    check_disjoint,
    entity_swap,
    inject,
    make_background,
    make_classification_set,
    make_pool,
    make_samples,
    read_corpus,
    read_eval_set,
    read_jsonl,
    read_pool,
    read_texts,
    render,
    write_corpus,
    write_eval_set,
    write_jsonl,
    write_pool,
    write_texts,
)
from pii_unlearn.inversion import (
    ENDPOINT_ENV,
    Inverter,
    PseudoSample,
    build_pseudo_set,
    inversion_quality,
    invert,
    precompute_logits,
    stack_logprobs,
    synthesize_pseudo,
    teacher_forced_ce,
    train_inverter,
)
from pii_unlearn.metrics import PrivacyReport, evaluate, markdown_table, write_bundle
from pii_unlearn.model import (
    LMTrainConfig,
    LoraAdapter,
    Parameters,
    init_adapter,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train_lm,
)
from pii_unlearn.unlearn import UnlearnMode, UnlearnSample, unlearn_train

log = logging.getLogger(__name__)


@dataclass
class Run:
    cfg: ExperimentConfig
    root: Path
    manifest: RunManifest
    force: bool = False

    @classmethod
    def open(cls, cfg: ExperimentConfig, out_dir=None, force: bool = False) -> "Run":
        root = Path(out_dir or cfg.out_dir)
        manifest = RunManifest.load(root)
        manifest.config_hash = cfg.config_hash()
        return cls(cfg, root, manifest, force)

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def seed(self, name: str) -> int:
        return derive_seed(self.cfg.seed, name)

    # stage hashes chain so that any upstream change invalidates downstream work
    def hash_inject(self) -> str:
        return self.cfg.section_hash("seed", "corpus")

    def hash_train(self) -> str:
        return chain_hash(self.hash_inject(), self.cfg.section_hash("model", "train"))

    def hash_invert(self) -> str:
        return chain_hash(self.hash_train(), self.cfg.section_hash("inverter"))

    def hash_synth(self) -> str:
        return chain_hash(self.hash_invert(), self.cfg.section_hash("synthesis"))

    def hash_annotate(self) -> str:
        return chain_hash(self.hash_synth(), self.cfg.section_hash("annotator"))

    def hash_unlearn(self, mode: UnlearnMode) -> str:
        upstream = self.hash_train() if _data_source(self.cfg, mode) == "oracle" else self.hash_annotate()
        return chain_hash(upstream, self.cfg.section_hash("unlearn", "decode", "utility"), mode.value)

    def hash_eval(self, label: str) -> str:
        up = self.hash_train() if label == "original" else self.manifest.stages[f"unlearn:{label}"].stage_hash
        return chain_hash(up, self.cfg.section_hash("decode", "utility", "model_name"))

    def skip(self, stage: str, stage_hash: str) -> bool:
        if not self.force and self.manifest.is_current(stage, stage_hash):
            log.info("stage %s is up to date; skipping", stage)
            return True
        return False


def _data_source(cfg: ExperimentConfig, mode: UnlearnMode) -> str:
    if mode is UnlearnMode.PSCU_ORACLE:
        return "oracle"
    if mode is UnlearnMode.GA:
        return cfg.unlearn.ga_data
    return "pseudo"


def unlearn_label(mode: UnlearnMode, tag: str | None) -> str:
    return mode.value if not tag else f"{mode.value}-{tag}"


# stage 0: corpus --------------------------------------------------------------


def _private_pool(run: Run) -> EntityPool:
    c = run.cfg.corpus
    if c.private_pool_file:
        p = Path(c.private_pool_file)
        if not p.exists():
            raise ConfigError(f"private pool file not found: {p}")
        try:
            return read_pool(p)
        except (ValueError, KeyError) as e:
            raise ConfigError(f"private pool file is malformed: {e}") from e
    return make_pool("private", c.private_pool_size, run.seed("pool.private"))


def cmd_inject(run: Run) -> dict:
    h = run.hash_inject()
    if run.skip("inject", h):
        return run.manifest.stages["inject"].info
    t0 = time.perf_counter()
    c = run.cfg.corpus
    private = _private_pool(run)
    public = make_pool("public", c.public_pool_size, run.seed("pool.public"), exclude=private)
    check_disjoint(private, public)
    samples = make_samples(DEFAULT_TEMPLATES, private, c.n_samples, run.seed("samples"))
    groups = [g.i for g in c.groups for _ in range(g.n)]
    background = make_background(c.n_background, run.seed("background"))
    cls_train, cls_eval = [], []
    if c.n_classification:
        pairs = make_classification_set(c.n_classification + c.n_classification_eval, run.seed("classification"))
        cls_train = [p + LABELS[y] for p, y in pairs[: c.n_classification]]
        cls_eval = pairs[c.n_classification :]
    corpus = inject(background + cls_train, samples, groups, run.seed("inject"))
    eval_set = build_eval_set(corpus, c.prefix_fraction, c.min_entity_len)
    clean = make_background(c.n_clean, run.seed("clean"), exclude=set(background))
    files = list(write_corpus(run.path("corpus"), corpus).values())
    files.append(write_eval_set(run.path("corpus", "eval.jsonl"), eval_set))
    files.append(write_texts(run.path("corpus", "clean.jsonl"), clean))
    files.append(write_jsonl(run.path("corpus", "classification_eval.jsonl"), ({"prompt": p, "label": y} for p, y in cls_eval)))
    files.append(write_pool(run.path("pools", "private.json"), private))
    files.append(write_pool(run.path("pools", "public.json"), public))
    counts = corpus.replication_counts()
    info = {
        "n_sequences": len(corpus.sequences),
        "n_samples": len(corpus.samples),
        "n_injected": int(sum(counts.values())),
        "n_eval_records": len(eval_set.records),
        "n_eval_entities": sum(len(r.entity_strings()) for r in eval_set.records),
    }
    run.manifest.record("inject", h, files, time.perf_counter() - t0, info)
    return info


# stage 1: target model ----------------------------------------------------------


def cmd_train(run: Run) -> dict:
    run.manifest.require("inject")
    h = run.hash_train()
    if run.skip("train", h):
        return run.manifest.stages["train"].info
    t0 = time.perf_counter()
    corpus = read_corpus(run.root / "corpus")
    params = init_model(run.cfg.model.build(run.seed("model.init")))
    seqs = [tokenizer.encode(t, bos=True, eos=True) for t in corpus.sequences]
    tcfg = LMTrainConfig(run.cfg.train.epochs, run.cfg.train.batch_size, run.seed("train"), run.cfg.train.optim())
    train_lm(params, seqs, tcfg)
    path = save_checkpoint(run.path("model", "target.npz"), params, meta={"history": params.history})
    info = {"history": params.history, "n_params": params.n_params()}
    run.manifest.record("train", h, [path], time.perf_counter() - t0, info)
    return info


def load_target(run: Run) -> Parameters:
    run.manifest.require("train")
    params, _, _, _ = load_checkpoint(run.root / "model" / "target.npz")
    return params


# stage 2a: inverter -----------------------------------------------------------------


def inverter_texts(run: Run) -> list[str]:
    """Texts the defender can produce without the training set: fresh generic
    sentences plus the known templates filled from the public pool."""
    ic = run.cfg.inverter
    public = read_pool(run.root / "pools" / "public.json")
    generic = make_background(ic.n_background, run.seed("inverter.background"))
    base = run.seed("inverter.renderings")
    rend = [render(DEFAULT_TEMPLATES[i % len(DEFAULT_TEMPLATES)], public, base + i).text for i in range(ic.n_renderings)]
    texts = generic + rend
    order = np.random.default_rng(run.seed("inverter.split")).permutation(len(texts))
    return [texts[i] for i in order]


def cmd_invert_train(run: Run) -> dict:
    target = load_target(run)
    h = run.hash_invert()
    if run.skip("invert-train", h):
        return run.manifest.stages["invert-train"].info
    t0 = time.perf_counter()
    ic = run.cfg.inverter
    texts = inverter_texts(run)
    records = precompute_logits(target, texts)
    held, train = records[: ic.n_heldout], records[ic.n_heldout :]
    inv = train_inverter(train, ic.build(run.seed("inverter")))
    held_ce = teacher_forced_ce(inv, held) if held else float("nan")
    recon = invert(inv, stack_logprobs(held)) if held else []
    quality = inversion_quality(list(zip([r.text for r in held], recon))) if held else {}
    files = [
        inv.save(run.path("inverter", "inverter.npz")),
        write_jsonl(
            run.path("inverter", "records.jsonl"),
            ({"text": r.text, "split": "heldout" if i < ic.n_heldout else "train"} for i, r in enumerate(records)),
        ),
        write_jsonl(run.path("inverter", "heldout_reconstructions.jsonl"), ({"text": r.text, "reconstruction": x} for r, x in zip(held, recon))),
    ]
    info = {
        "n_train": len(train),
        "n_heldout": len(held),
        "train_ce": inv.history[-1] if inv.history else None,
        "heldout_ce": held_ce,
        "uniform_ce": math.log(tokenizer.VOCAB_SIZE),
        **quality,
    }
    qpath = run.path("inverter", "quality.json")
    qpath.write_text(json.dumps(info, indent=1, sort_keys=True), encoding="utf-8")
    files.append(qpath)
    run.manifest.record("invert-train", h, files, time.perf_counter() - t0, info)
    return info


# stage 2b: pseudo-data synthesis and annotation -------------------------------------------


def swapped_candidates(run: Run):
    corpus = read_corpus(run.root / "corpus")
    public = read_pool(run.root / "pools" / "public.json")
    per = run.cfg.synthesis.candidates_per_sample
    base = run.seed("synthesis.swap")
    return [entity_swap(s, public, base + i * per + j) for i, s in enumerate(corpus.samples) for j in range(per)]


def cmd_synthesize(run: Run) -> dict:
    target = load_target(run)
    run.manifest.require("invert-train")
    h = run.hash_synth()
    if run.skip("synthesize", h):
        return run.manifest.stages["synthesize"].info
    t0 = time.perf_counter()
    inv = Inverter.load(run.root / "inverter" / "inverter.npz")
    cands = swapped_candidates(run)
    texts = synthesize_pseudo(target, inv, cands)
    files = [
        write_jsonl(run.path("pseudo", "candidates.jsonl"), (c.to_dict() for c in cands)),
        write_texts(run.path("pseudo", "texts.jsonl"), texts),
    ]
    info = {"n_candidates": len(cands), "n_texts": len(texts), "n_distinct": len(set(texts))}
    run.manifest.record("synthesize", h, files, time.perf_counter() - t0, info)
    return info


def cmd_annotate(run: Run) -> dict:
    run.manifest.require("synthesize")
    h = run.hash_annotate()
    if run.skip("annotate", h):
        return run.manifest.stages["annotate"].info
    t0 = time.perf_counter()
    texts = read_texts(run.root / "pseudo" / "texts.jsonl")
    audit = str(run.path("pseudo", "annotator_audit.jsonl"))
    spec = run.cfg.annotator.build(audit, os.environ.get(ENDPOINT_ENV))
    pools = [read_pool(run.root / "pools" / "public.json")] if run.cfg.annotator.use_public_pool else []
    ps = build_pseudo_set(texts, spec, pools)
    files = [write_jsonl(run.path("pseudo", "pseudo.jsonl"), (s.to_dict() for s in ps.samples))]
    if Path(audit).exists():
        files.append(Path(audit))
    info = {
        "n_samples": len(ps.samples),
        "rejected": ps.rejected,
        "fallbacks": ps.fallbacks,
        "annotator": spec.annotator_id,
        "n_sensitive_tokens": int(sum(s.n_sensitive for s in ps.samples)),
    }
    run.manifest.record("annotate", h, files, time.perf_counter() - t0, info)
    return info


# stage 3: unlearning ----------------------------------------------------------------


def utility_data(run: Run):
    """``(kind, data, label_map)`` for the configured utility metric."""
    if run.cfg.utility == "ppl":
        clean = read_texts(run.root / "corpus" / "clean.jsonl")
        return "ppl", [tokenizer.encode(t, bos=True, eos=True) for t in clean], None
    rows = list(read_jsonl(run.root / "corpus" / "classification_eval.jsonl"))
    label_map = {y: tokenizer.encode(ch, bos=False)[0] for y, ch in LABELS.items()}
    return "accuracy", [(tokenizer.encode(r["prompt"], bos=True), r["label"]) for r in rows], label_map


def oracle_data(run: Run) -> list[UnlearnSample]:
    corpus = read_corpus(run.root / "corpus")
    return [UnlearnSample.from_spans(s.text, [(e.start, e.end) for e in s.entities]) for s in corpus.samples]


def pseudo_data(run: Run) -> list[UnlearnSample]:
    run.manifest.require("annotate")
    samples = [PseudoSample.from_dict(r) for r in read_jsonl(run.root / "pseudo" / "pseudo.jsonl")]
    frac = run.cfg.unlearn.pseudo_fraction
    if frac < 1.0:
        k = max(1, math.ceil(frac * len(samples)))
        keep = np.sort(np.random.default_rng(run.seed("pseudo.subset")).permutation(len(samples))[:k])
        samples = [samples[i] for i in keep]
    return [UnlearnSample.from_mask(s.text, s.mask) for s in samples]


def make_eval_hook(run: Run, target: Parameters):
    eval_set = read_eval_set(run.root / "corpus" / "eval.jsonl")
    kind, udata, label_map = utility_data(run)
    dec = run.cfg.decode.build(run.seed("decode"))

    def hook(adapter: LoraAdapter) -> dict:
        rep, _ = evaluate(target, adapter, eval_set, dec, udata, kind, label_map)
        return {"utility": rep.utility, "err": rep.err, "frs": rep.frs, "s_exp": rep.s_exp, "e_hit": rep.e_hit}

    return hook


def cmd_unlearn(run: Run, mode=None, tag: str | None = None) -> dict:
    mode = UnlearnMode(mode or run.cfg.unlearn.mode)
    target = load_target(run)
    label = unlearn_label(mode, tag)
    stage = f"unlearn:{label}"
    h = run.hash_unlearn(mode)
    if run.skip(stage, h):
        return run.manifest.stages[stage].info
    t0 = time.perf_counter()
    u = run.cfg.unlearn
    source = _data_source(run.cfg, mode)
    data = oracle_data(run) if source == "oracle" else pseudo_data(run)
    adapter = init_adapter(target, u.selector, u.rank, u.lora_alpha, u.lora_dropout, seed=run.seed("adapter"))
    result = unlearn_train(target, adapter, data, u.build(run.seed("unlearn")), mode, make_eval_hook(run, target))
    out = run.path("unlearn", label, "adapter.npz")
    meta = {"mode": mode.value, "label": label, "stop_reason": result.stop_reason}
    files = [save_checkpoint(out, None, {"unlearn": result.adapter}, meta), result.save_trace(run.path("unlearn", label, "trace.jsonl"))]
    info = {
        "mode": mode.value,
        "label": label,
        "tag": tag,
        "data_source": source,
        "n_samples": len(data),
        "selector": u.selector,
        "rank": u.rank,
        "lora_alpha": u.lora_alpha,
        "beta": u.beta,
        "pseudo_fraction": u.pseudo_fraction if source == "pseudo" else None,
        "stop_reason": result.stop_reason,
        "n_checks": len(result.trace),
        "baseline": result.baseline,
        "base_checksum": result.base_checksum_after,
        "skipped_batches": result.skipped_batches,
    }
    run.manifest.record(stage, h, files, time.perf_counter() - t0, info)
    return info


def load_unlearned(run: Run, label: str) -> LoraAdapter:
    run.manifest.require(f"unlearn:{label}")
    _, adapters, _, _ = load_checkpoint(run.root / "unlearn" / label / "adapter.npz")
    return adapters["unlearn"]


# evaluation and reporting --------------------------------------------------------------------


METHOD_NAMES = {"original": "Original Model", "oracle": "Original Data (Oracle)", "pseudo": "Data-Free (Ours)", "ga": "Gradient Ascent"}


def _method_name(label: str, mode: str | None) -> str:
    if label in METHOD_NAMES:
        return METHOD_NAMES[label]
    base = METHOD_NAMES.get(mode or "", mode or label)
    return f"{base} [{label}]"


def evaluate_label(run: Run, label: str) -> dict:
    stage = f"eval:{label}"
    target = load_target(run)
    adapter = None if label == "original" else load_unlearned(run, label)
    h = run.hash_eval(label)
    if run.skip(stage, h):
        return run.manifest.stages[stage].info
    t0 = time.perf_counter()
    eval_set = read_eval_set(run.root / "corpus" / "eval.jsonl")
    kind, udata, label_map = utility_data(run)
    dec = run.cfg.decode.build(run.seed("decode"))
    mode = None if label == "original" else run.manifest.stages[f"unlearn:{label}"].info["mode"]
    rep, bundle = evaluate(target, adapter, eval_set, dec, udata, kind, label_map, _method_name(label, mode), run.cfg.model_name)
    files = [rep.save(run.path("reports", f"{label}.json")), write_bundle(run.path("reports", f"{label}.bundle.jsonl"), bundle)]
    info = {"label": label, "mode": mode, "report": f"reports/{label}.json"}
    if mode is not None:
        up = run.manifest.stages[f"unlearn:{label}"].info
        info.update({k: up.get(k) for k in ("selector", "rank", "lora_alpha", "beta", "pseudo_fraction", "n_samples", "tag")})
    run.manifest.record(stage, h, files, time.perf_counter() - t0, info)
    return info


def cmd_eval(run: Run, mode=None, tag: str | None = None) -> dict[str, dict]:
    """Report the original model plus the requested (or every) unlearned adapter."""
    labels = ["original"]
    if mode is not None:
        labels.append(unlearn_label(UnlearnMode(mode), tag))
    else:
        labels += sorted(k.split(":", 1)[1] for k in run.manifest.stages if k.startswith("unlearn:"))
    return {lbl: evaluate_label(run, lbl) for lbl in labels}


def collect_reports(roots) -> list[tuple[dict, PrivacyReport]]:
    out = []
    for root in roots:
        m = RunManifest.load(root)
        for key in sorted(m.stages):
            if key.startswith("eval:") and not m.problems(key):
                info = m.stages[key].info
                out.append((info, PrivacyReport.load(Path(root) / info["report"])))
    return out


def _row(info: dict, rep: PrivacyReport) -> dict:
    keys = ("label", "mode", "selector", "rank", "beta", "pseudo_fraction", "n_samples")
    return {**rep.to_dict(), "method": rep.label, **{k: info.get(k) for k in keys}}


def cmd_report(run: Run, extra_roots=()) -> dict:
    """Comparison tables over every evaluated label of this run (and ``extra_roots``)."""
    pairs = collect_reports([run.root, *extra_roots])
    if not pairs:
        raise MissingPrerequisite("eval", "no evaluated models found")
    u = run.cfg.unlearn
    shown: set[str] = set()
    by_label = {info["label"]: rep for info, rep in pairs}
    main = [k for k in ("original", "oracle", "pseudo", "ga") if k in by_label]
    shown.update(main)
    sections = ["## Leakage and utility\n", markdown_table([by_label[k] for k in main] or [rep for _, rep in pairs])]
    pseudo_rows = sorted(((i, r) for i, r in pairs if i.get("mode") == "pseudo"), key=lambda p: p[0]["label"])
    placement = [(i, r) for i, r in pseudo_rows if i.get("pseudo_fraction") == u.pseudo_fraction]
    if len({i.get("selector") for i, _ in placement}) > 1:
        placement.sort(key=lambda p: (p[0].get("selector") or "", p[0]["label"]))
        sections += ["\n## Adapter placement\n", markdown_table([replace(r, label=f"{r.label} ({i.get('selector')})") for i, r in placement])]
        shown.update(i["label"] for i, _ in placement)
    scale = [(i, r) for i, r in pseudo_rows if i.get("selector") == u.selector]
    if len({i.get("pseudo_fraction") for i, _ in scale}) > 1:
        scale.sort(key=lambda p: (p[0].get("pseudo_fraction") or 0, p[0]["label"]))
        rows = [replace(r, label=f"{r.label} ({100 * i['pseudo_fraction']:.0f}%, n={i.get('n_samples')})") for i, r in scale]
        sections += ["\n## Pseudo-data scale\n", markdown_table(rows)]
        shown.update(i["label"] for i, _ in scale)
    rest = [r for i, r in pairs if i["label"] not in shown]
    if rest:
        sections += ["\n## Additional runs\n", markdown_table(rest)]
    md = run.path("reports", "summary.md")
    md.write_text("".join(sections), encoding="utf-8")
    js = run.path("reports", "summary.json")
    js.write_text(json.dumps([_row(i, r) for i, r in pairs], indent=1, sort_keys=True), encoding="utf-8")
    return {"markdown": str(md), "json": str(js), "n_rows": len(pairs)}
