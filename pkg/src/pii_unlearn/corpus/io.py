"""Line-delimited JSON files for corpora, eval sets and pools."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

from pii_unlearn.corpus.injection import EvalRecord, EvalSet, InjectedCorpus, PIISample
from pii_unlearn.corpus.pools import EntityPool


def write_jsonl(path, rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    return path


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_corpus(dirpath, corpus: InjectedCorpus) -> dict[str, Path]:
    """``samples.jsonl`` (unique injected samples) and ``train.jsonl`` (every training line)."""
    d = Path(dirpath)
    samples = write_jsonl(d / "samples.jsonl", (s.to_dict() for s in corpus.samples))
    rows = []
    for text, src in zip(corpus.sequences, corpus.sources):
        if src < 0:
            rows.append({"text": text, "entities": [], "group": 0, "replication": 1})
        else:
            rows.append(corpus.samples[src].to_dict())
    train = write_jsonl(d / "train.jsonl", rows)
    return {"samples": samples, "train": train}


def read_corpus(dirpath) -> InjectedCorpus:
    d = Path(dirpath)
    samples = [PIISample.from_dict(r) for r in read_jsonl(d / "samples.jsonl")]
    index = {s.text: i for i, s in enumerate(samples)}
    seqs, sources, background = [], [], []
    for r in read_jsonl(d / "train.jsonl"):
        seqs.append(r["text"])
        src = index.get(r["text"], -1) if r.get("group") else -1
        sources.append(src)
        if src < 0:
            background.append(r["text"])
    return InjectedCorpus(background, samples, seqs, sources)


def write_eval_set(path, es: EvalSet) -> Path:
    return write_jsonl(path, (r.to_dict() for r in es.records))


def read_eval_set(path) -> EvalSet:
    return EvalSet([EvalRecord.from_dict(r) for r in read_jsonl(path)])


def write_texts(path, texts: Iterable[str]) -> Path:
    return write_jsonl(path, ({"text": t} for t in texts))


def read_texts(path) -> list[str]:
    return [r["text"] for r in read_jsonl(path)]


def write_pool(path, pool: EntityPool) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(pool.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
    return path


def read_pool(path) -> EntityPool:
    return EntityPool.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
