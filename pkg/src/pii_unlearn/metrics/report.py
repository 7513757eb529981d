"""Privacy reports: generation, metric assembly, and Markdown tables."""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from pii_unlearn import tokenizer
from pii_unlearn.corpus.injection import EvalSet
from pii_unlearn.metrics.privacy import GenerationBundle, as_bundle, privacy_metrics
from pii_unlearn.model import DecodeConfig, LoraAdapter, Parameters, generate, label_accuracy, perplexity


@dataclass
class PrivacyReport:
    err: float
    frs: float
    s_exp: float
    e_hit: float | None
    utility_name: str
    utility: float | None
    snapshot: str
    label: str = ""
    model: str = ""
    decode: dict = field(default_factory=dict)
    n_records: int = 0
    timestamp: str = field(default="", compare=False)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PrivacyReport":
        return cls(**d)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "PrivacyReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def in_range(self) -> bool:
        vals = [self.err, self.frs, self.s_exp] + ([self.e_hit] if self.e_hit is not None else [])
        return all(0.0 <= v <= 1.0 for v in vals)


def generate_bundle(
    params: Parameters,
    adapter: LoraAdapter | None,
    eval_set: EvalSet,
    decode: DecodeConfig,
) -> GenerationBundle:
    gens = []
    for r in eval_set.records:
        ids = tokenizer.encode(r.prefix, bos=True)
        gens.append([tokenizer.decode(c) for c in generate(params, adapter, ids, decode)])
    return as_bundle(eval_set.records, gens, decode.to_dict())


def snapshot_id(params: Parameters, adapter: LoraAdapter | None) -> str:
    h = params.checksum()[:16]
    return h if adapter is None else f"{h}+{adapter.checksum()[:16]}"


def evaluate(
    params: Parameters,
    adapter: LoraAdapter | None,
    eval_set: EvalSet,
    decode: DecodeConfig,
    utility_set: Sequence | None = None,
    utility_kind: str = "ppl",
    label_map: dict[str, int] | None = None,
    label: str = "",
    model_name: str = "",
) -> tuple[PrivacyReport, GenerationBundle]:
    """Generate continuations for every prefix and score leakage plus utility.

    ``utility_set`` is a list of token sequences for ``"ppl"`` or of
    ``(sequence, label)`` pairs for ``"accuracy"``.
    """
    if not eval_set.records:
        raise ValueError("evaluation set is empty")
    bundle = generate_bundle(params, adapter, eval_set, decode)
    m = privacy_metrics(bundle)
    util = None
    if utility_set:
        if utility_kind == "ppl":
            util = perplexity(params, adapter, utility_set)
        elif utility_kind == "accuracy":
            util = label_accuracy(params, adapter, utility_set, label_map or {})
        else:
            raise ValueError(f"unknown utility metric {utility_kind!r}")
    report = PrivacyReport(
        err=m["err"],
        frs=m["frs"],
        s_exp=m["s_exp"],
        e_hit=m["e_hit"],
        utility_name=utility_kind,
        utility=util,
        snapshot=snapshot_id(params, adapter),
        label=label,
        model=model_name,
        decode=decode.to_dict(),
        n_records=len(eval_set.records),
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )
    return report, bundle


def _pct(v) -> str:
    return "n/a" if v is None or (isinstance(v, float) and not np.isfinite(v)) else f"{100 * v:.2f}"


def _util(v, kind: str) -> str:
    if v is None:
        return "n/a"
    return f"{100 * v:.2f}" if kind == "accuracy" else f"{v:.2f}"


def markdown_table(reports: Sequence[PrivacyReport]) -> str:
    """Rows of (model, method) with the four leakage columns and utility."""
    kinds = {r.utility_name for r in reports} or {"ppl"}
    util_head = "PPL (↓)" if kinds == {"ppl"} else ("Acc (%) (↑)" if kinds == {"accuracy"} else "Utility")
    lines = [
        f"| Model | Method | ERR (%) | FRS (%) | S-Exp (%) | E-Hit (%) | {util_head} |",
        "|---|---|---:|---:|---:|---:|---:|",
    ]
    for r in reports:
        lines.append(
            f"| {r.model or 'n/a'} | {r.label or 'n/a'} | {_pct(r.err)} | {_pct(r.frs)} | {_pct(r.s_exp)} "
            f"| {_pct(r.e_hit)} | {_util(r.utility, r.utility_name)} |"
        )
    return "\n".join(lines) + "\n"
