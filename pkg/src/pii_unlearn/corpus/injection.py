"""Rendering, replication-controlled injection, entity swapping, eval splits."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from pii_unlearn.corpus.pools import CoverageError, DisjointnessError, EntityPool
from pii_unlearn.corpus.templates import Template

log = logging.getLogger(__name__)

REPLICATION_BASE = 10


@dataclass(frozen=True)
class Entity:
    type: str
    start: int  # byte offsets into the owning text
    end: int
    string: str

    def to_dict(self) -> dict:
        return {"type": self.type, "start": self.start, "end": self.end, "string": self.string}

    @classmethod
    def from_dict(cls, d: dict) -> "Entity":
        return cls(d["type"], int(d["start"]), int(d["end"]), d["string"])


@dataclass(frozen=True)
class PIISample:
    text: str
    entities: tuple[Entity, ...] = ()
    template_id: str = ""
    group: int = 0
    replication: int = 0

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "entities": [e.to_dict() for e in self.entities],
            "template_id": self.template_id,
            "group": self.group,
            "replication": self.replication,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PIISample":
        ents = tuple(Entity.from_dict(e) for e in d.get("entities", ()))
        return cls(d["text"], ents, d.get("template_id", ""), int(d.get("group") or 0), int(d.get("replication") or 0))


def _fill(template: Template, values: Sequence[str]) -> PIISample:
    parts, ents, cursor, out_len = [], [], 0, 0
    for (stype, s, e), value in zip(template.slots(), values):
        chunk = template.text[cursor:s]
        parts.append(chunk)
        out_len += len(chunk.encode())
        vb = len(value.encode())
        ents.append(Entity(stype, out_len, out_len + vb, value))
        parts.append(value)
        out_len += vb
        cursor = e
    parts.append(template.text[cursor:])
    return PIISample("".join(parts), tuple(ents), template.template_id)


def render(template: Template, pool: EntityPool, seed) -> PIISample:
    """Fill every slot with a pool entity drawn by ``seed``."""
    types = template.slot_types()
    missing = [t for t in types if not pool.entities.get(t)]
    if missing:
        raise CoverageError(f"pool {pool.pool_id!r} has no entities of type {missing}")
    rng = np.random.default_rng(seed)
    return _fill(template, [pool.entities[t][rng.integers(len(pool.entities[t]))] for t in types])


def make_samples(templates: Sequence[Template], pool: EntityPool, n: int, seed: int) -> list[PIISample]:
    """``n`` samples cycling through ``templates``, no entity string reused."""
    rng = np.random.default_rng(seed)
    order = {t: list(rng.permutation(len(v))) for t, v in pool.entities.items()}
    out = []
    for i in range(n):
        tpl = templates[i % len(templates)]
        values = []
        for t in tpl.slot_types():
            if t not in order:
                raise CoverageError(f"pool {pool.pool_id!r} has no entities of type {t}")
            if not order[t]:
                raise CoverageError(f"pool {pool.pool_id!r} ran out of unique {t} entities")
            values.append(pool.entities[t][order[t].pop()])
        out.append(_fill(tpl, values))
    return out


@dataclass
class InjectedCorpus:
    background: list[str]
    samples: list[PIISample]  # unique injected samples, group and replication set
    sequences: list[str]  # final shuffled training list
    sources: list[int] = field(default_factory=list)  # -1 background, else index into samples

    def replication_counts(self) -> Counter:
        return Counter(s for s in self.sources if s >= 0)


def inject(
    background: Sequence[str],
    samples: Sequence[PIISample],
    groups: Sequence[int],
    seed: int,
    base: int = REPLICATION_BASE,
) -> InjectedCorpus:
    """Replicate each sample of group ``i`` exactly ``base * i`` times and shuffle in."""
    if len(samples) != len(groups):
        raise ValueError("one group index per sample is required")
    if any(g < 1 for g in groups):
        raise ValueError("group indices must be >= 1")
    texts = [s.text for s in samples]
    dup = [t for t, c in Counter(texts).items() if c > 1]
    if dup:
        raise DisjointnessError(f"sample appears in more than one group slot: {dup[0]!r}")
    placed = [replace(s, group=g, replication=base * g) for s, g in zip(samples, groups)]
    sources = [-1] * len(background)
    for idx, s in enumerate(placed):
        sources.extend([idx] * s.replication)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sources))
    sources = [sources[i] for i in order]
    bg = list(background)
    bg_iter = iter(bg)
    seqs = [next(bg_iter) if src < 0 else placed[src].text for src in sources]
    return InjectedCorpus(bg, placed, seqs, sources)


def entity_swap(sample: PIISample, public_pool: EntityPool, seed, max_tries: int = 20) -> PIISample:
    """Replace every ground-truth entity with a same-type public-pool entity."""
    originals = {e.string for e in sample.entities}
    overlap = originals & public_pool.all_strings()
    if overlap:
        raise DisjointnessError(f"public pool {public_pool.pool_id!r} contains injected entity {sorted(overlap)[0]!r}")
    if not sample.entities:
        return sample
    rng = np.random.default_rng(seed)
    ents = sorted(sample.entities, key=lambda e: e.start)
    for _ in range(max_tries):
        raw = sample.text.encode()
        parts, new_ents, cursor, out_len = [], [], 0, 0
        for e in ents:
            pool = public_pool.entities.get(e.type)
            if not pool:
                raise CoverageError(f"public pool has no {e.type} entities")
            value = pool[rng.integers(len(pool))]
            chunk = raw[cursor : e.start]
            parts.append(chunk)
            out_len += len(chunk)
            vb = value.encode()
            new_ents.append(Entity(e.type, out_len, out_len + len(vb), value))
            parts.append(vb)
            out_len += len(vb)
            cursor = e.end
        parts.append(raw[cursor:])
        text = b"".join(parts).decode()
        if not any(o in text for o in originals):
            return PIISample(text, tuple(new_ents), sample.template_id)
    raise DisjointnessError("could not produce a swap free of original entity strings")


@dataclass(frozen=True)
class EvalRecord:
    prefix: str
    suffix: str
    entities: tuple[Entity, ...]  # offsets relative to the full text
    group: int = 0
    replication: int = 0

    @property
    def text(self) -> str:
        return self.prefix + self.suffix

    def entity_strings(self) -> list[str]:
        seen = []
        for e in self.entities:
            if e.string not in seen:
                seen.append(e.string)
        return seen

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "prefix": self.prefix,
            "suffix": self.suffix,
            "entities": [e.to_dict() for e in self.entities],
            "group": self.group,
            "replication": self.replication,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        return cls(
            d["prefix"],
            d["suffix"],
            tuple(Entity.from_dict(e) for e in d["entities"]),
            int(d.get("group") or 0),
            int(d.get("replication") or 0),
        )


@dataclass
class EvalSet:
    records: list[EvalRecord]
    skipped: int = 0


def split_point(raw: bytes, prefix_fraction: float) -> int:
    """Byte index nearest ``prefix_fraction`` that does not cut a UTF-8 sequence."""
    cut = int(round(prefix_fraction * len(raw)))
    while 0 < cut < len(raw) and (raw[cut] & 0xC0) == 0x80:
        cut += 1
    return cut


def build_eval_set(
    corpus: InjectedCorpus | Sequence[PIISample],
    prefix_fraction: float = 0.5,
    min_entity_len: int = 4,
) -> EvalSet:
    """One (prefix, suffix, suffix-entities) record per unique injected sample."""
    if not 0.0 < prefix_fraction < 1.0:
        raise ValueError("prefix_fraction must lie strictly between 0 and 1")
    samples = corpus.samples if isinstance(corpus, InjectedCorpus) else list(corpus)
    records, skipped, seen = [], 0, set()
    for s in samples:
        if s.text in seen:
            continue
        seen.add(s.text)
        raw = s.text.encode()
        cut = split_point(raw, prefix_fraction)
        if cut <= 0 or cut >= len(raw):
            skipped += 1
            continue
        ents = tuple(e for e in s.entities if e.start >= cut and len(e.string.encode()) >= min_entity_len)
        records.append(EvalRecord(raw[:cut].decode(), raw[cut:].decode(), ents, s.group, s.replication))
    if skipped:
        log.warning("skipped %d samples too short to split", skipped)
    return EvalSet(records, skipped)
