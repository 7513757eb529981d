"""Pseudo forget-set synthesis: swapped candidates -> logits -> inverted text -> masks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pii_unlearn import tokenizer
from pii_unlearn.corpus import EntityPool, PIISample
from pii_unlearn.inversion.annotate import AnnotatorSpec, annotate_many, mask_to_spans
from pii_unlearn.inversion.inverter import Inverter, invert
from pii_unlearn.inversion.logits import precompute_logits, stack_logprobs
from pii_unlearn.model import LoraAdapter, Parameters
from pii_unlearn.numcore import ContractError


@dataclass
class PseudoSample:
    text: str
    mask: np.ndarray  # one 0/1 entry per byte token of ``text``
    candidate_id: int = -1
    annotator_id: str = "builtin"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.shape != (tokenizer.byte_len(self.text),):
            raise ContractError("mask length must equal the token length of the text")
        if np.any((self.mask != 0) & (self.mask != 1)):
            raise ContractError("mask must be binary")
        if self.mask.size and self.mask.min() == 1.0:
            raise ContractError("all-sensitive pseudo sample has no context tokens")

    @property
    def n_sensitive(self) -> int:
        return int(self.mask.sum())

    def spans(self):
        return mask_to_spans(self.text, self.mask)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "mask": self.mask.astype(int).tolist(),
            "candidate_id": self.candidate_id,
            "annotator_id": self.annotator_id,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PseudoSample":
        return cls(d["text"], np.asarray(d["mask"]), d.get("candidate_id", -1), d.get("annotator_id", "builtin"), d.get("provenance", {}))


def _text(c) -> str:
    return c.text if isinstance(c, PIISample) else str(c)


def synthesize_pseudo(
    target: Parameters,
    inverter: Inverter,
    candidates: Sequence,
    adapter: LoraAdapter | None = None,
    max_len: int | None = None,
) -> list[str]:
    """Invert the target's final-position distribution for every candidate."""
    if not candidates:
        return []
    records = precompute_logits(target, [_text(c) for c in candidates], adapter)
    out = invert(inverter, stack_logprobs(records), max_len)
    return [out] if isinstance(out, str) else out


@dataclass
class PseudoSet:
    samples: list[PseudoSample]
    rejected: dict[str, int]
    fallbacks: int = 0


def build_pseudo_set(
    texts: Sequence[str],
    annotator: AnnotatorSpec | None = None,
    known_pools: Sequence[EntityPool] = (),
) -> PseudoSet:
    """Annotate decoded texts, rejecting empty and all-sensitive ones."""
    rejected = {"empty": 0, "all_sensitive": 0}
    keep = [(i, t) for i, t in enumerate(texts) if t.strip()]
    rejected["empty"] = len(texts) - len(keep)
    anns = annotate_many([t for _, t in keep], annotator, known_pools)
    samples, fallbacks = [], 0
    for (i, t), a in zip(keep, anns):
        fallbacks += a.fallback
        if a.mask.size and a.mask.min() == 1.0:
            rejected["all_sensitive"] += 1
            continue
        prov = {"fallback": a.fallback} if a.fallback else {}
        samples.append(PseudoSample(t, a.mask, i, a.annotator_id, prov))
    return PseudoSet(samples, rejected, fallbacks)
