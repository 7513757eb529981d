"""Entity annotation of pseudo texts: a builtin span matcher and an HTTP client."""

from __future__ import annotations

import json
import logging
import re
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from pii_unlearn.corpus import EntityPool

log = logging.getLogger(__name__)

ENDPOINT_ENV = "PII_UNLEARN_ANNOTATOR_URL"

SLOT_PATTERNS = {
    "EMAIL": re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*"),
    "IP": re.compile(r"(?<![\d.])\d{1,3}(?:\.\d{1,3}){2,3}(?![\d])"),
    "PHONE": re.compile(r"\+\d{1,3}(?:-\d{2,4}){2,3}"),
    "DATE": re.compile(r"\b\d{4}-\d{1,2}(?:-\d{1,2})?\b"),
    "USERNAME": re.compile(r"\b[a-z]+(?:[._][a-z]+)?\d{1,3}\b"),
}


class AnnotatorKind(str, Enum):
    BUILTIN = "builtin"
    EXTERNAL = "external"


@dataclass(frozen=True)
class Span:
    start: int  # character offsets, end exclusive
    end: int
    type: str = "PII"


@dataclass
class AnnotatorSpec:
    kind: AnnotatorKind = AnnotatorKind.BUILTIN
    endpoint: str | None = None
    exemplars: list[dict] = field(default_factory=list)  # [{"text", "spans": [{start, end, type}]}]
    timeout: float = 10.0
    max_retries: int = 2
    backoff: float = 0.5
    max_in_flight: int = 4
    audit_path: str | None = None

    def __post_init__(self):
        self.kind = AnnotatorKind(self.kind)

    @property
    def annotator_id(self) -> str:
        return "builtin" if self.kind is AnnotatorKind.BUILTIN else f"external:{self.endpoint}"


@dataclass
class Annotation:
    text: str
    spans: list[Span]
    mask: np.ndarray  # one entry per byte token of ``text``
    annotator_id: str
    fallback: bool = False
    error: str | None = None


class AnnotationError(RuntimeError):
    pass


def normalize_spans(spans: Iterable[Span], n_chars: int) -> list[Span]:
    """Clip to the text, drop empties, and merge overlapping or touching runs."""
    clipped = sorted(
        (Span(max(0, s.start), min(n_chars, s.end), s.type) for s in spans if min(n_chars, s.end) > max(0, s.start)),
        key=lambda s: (s.start, -s.end),
    )
    out: list[Span] = []
    for s in clipped:
        if out and s.start <= out[-1].end:
            last = out[-1]
            if s.end > last.end:
                out[-1] = Span(last.start, s.end, last.type if last.end - last.start >= s.end - s.start else s.type)
        else:
            out.append(s)
    return out


def builtin_spans(text: str, pools: Sequence[EntityPool] = ()) -> list[Span]:
    """Maximal substrings that are known pool entries or match a slot pattern."""
    found: list[Span] = []
    for pool in pools:
        for etype, values in pool.entities.items():
            for v in values:
                for m in re.finditer(re.escape(v), text):
                    found.append(Span(m.start(), m.end(), etype))
    for etype, pat in SLOT_PATTERNS.items():
        for m in pat.finditer(text):
            found.append(Span(m.start(), m.end(), etype))
    return normalize_spans(found, len(text))


def _byte_offsets(text: str) -> np.ndarray:
    """``off[i]`` is the byte offset of character ``i``; ``off[len]`` is the total."""
    lens = [len(c.encode("utf-8")) for c in text]
    return np.concatenate([[0], np.cumsum(lens, dtype=np.int64)]).astype(np.int64)


def spans_to_mask(text: str, spans: Sequence[Span]) -> np.ndarray:
    off = _byte_offsets(text)
    mask = np.zeros(int(off[-1]), dtype=np.float64)
    for s in spans:
        mask[off[s.start] : off[s.end]] = 1.0
    return mask


def mask_to_spans(text: str, mask: np.ndarray) -> list[Span]:
    """Character spans covering every run of marked byte tokens."""
    off = _byte_offsets(text)
    mask = np.asarray(mask)
    spans, start = [], None
    for i in range(len(text)):
        on = bool(mask[off[i] : off[i + 1]].any())
        if on and start is None:
            start = i
        elif not on and start is not None:
            spans.append(Span(start, i))
            start = None
    if start is not None:
        spans.append(Span(start, len(text)))
    return spans


class _Audit:
    def __init__(self, path: str | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()

    def write(self, row: dict) -> None:
        if self.path is None:
            return
        row = {"time": time.time(), **row}
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _parse_spans(body: bytes, text: str) -> list[Span]:
    doc = json.loads(body.decode("utf-8"))
    spans = []
    for s in doc["spans"]:
        start, end = int(s["start"]), int(s["end"])
        if not 0 <= start < end <= len(text):
            raise AnnotationError(f"span [{start}, {end}) outside text of length {len(text)}")
        spans.append(Span(start, end, str(s.get("type", "PII"))))
    return spans


def external_spans(text: str, spec: AnnotatorSpec, audit: _Audit | None = None) -> list[Span]:
    """POST ``{text, exemplars}`` and parse ``{spans: [{start, end, type}]}``."""
    if not spec.endpoint:
        raise AnnotationError("external annotator has no endpoint")
    audit = audit or _Audit(spec.audit_path)
    payload = json.dumps({"text": text, "exemplars": spec.exemplars}).encode("utf-8")
    last: Exception | None = None
    for attempt in range(spec.max_retries + 1):
        req = urllib.request.Request(spec.endpoint, data=payload, headers={"Content-Type": "application/json"}, method="POST")
        row = {"endpoint": spec.endpoint, "attempt": attempt, "request": text}
        try:
            with urllib.request.urlopen(req, timeout=spec.timeout) as resp:
                body = resp.read()
            row["response"] = body.decode("utf-8", "replace")
            spans = _parse_spans(body, text)
            audit.write(row)
            return spans
        except (urllib.error.URLError, TimeoutError, OSError, ValueError, KeyError, AnnotationError) as e:
            last = e
            audit.write({**row, "error": repr(e)})
            if attempt < spec.max_retries:
                time.sleep(spec.backoff * (2**attempt))
    raise AnnotationError(f"external annotator failed after {spec.max_retries + 1} attempts: {last!r}")


def annotate(text: str, spec: AnnotatorSpec | None = None, known_pools: Sequence[EntityPool] = ()) -> Annotation:
    """Mark entity tokens of ``text``; external failures fall back to the builtin matcher."""
    if not text:
        raise ValueError("cannot annotate empty text")
    spec = spec or AnnotatorSpec()
    if spec.kind is AnnotatorKind.EXTERNAL:
        try:
            spans = normalize_spans(external_spans(text, spec), len(text))
            return Annotation(text, spans, spans_to_mask(text, spans), spec.annotator_id)
        except AnnotationError as e:
            log.warning("annotator fallback for %r: %s", text[:40], e)
            spans = builtin_spans(text, known_pools)
            return Annotation(text, spans, spans_to_mask(text, spans), "builtin", fallback=True, error=str(e))
    spans = builtin_spans(text, known_pools)
    return Annotation(text, spans, spans_to_mask(text, spans), spec.annotator_id)


def annotate_many(texts: Sequence[str], spec: AnnotatorSpec | None = None, known_pools: Sequence[EntityPool] = ()) -> list[Annotation]:
    """Order-preserving; external calls run at most ``max_in_flight`` at a time."""
    spec = spec or AnnotatorSpec()
    if spec.kind is AnnotatorKind.BUILTIN or len(texts) < 2:
        return [annotate(t, spec, known_pools) for t in texts]
    with ThreadPoolExecutor(max_workers=max(1, spec.max_in_flight)) as pool:
        return list(pool.map(lambda t: annotate(t, spec, known_pools), texts))
