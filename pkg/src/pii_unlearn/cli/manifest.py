"""Run manifest: per-stage config hashes, artifact checksums and timings."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def chain_hash(*parts: str) -> str:
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


class MissingPrerequisite(RuntimeError):
    def __init__(self, stage: str, detail: str = ""):
        super().__init__(f"missing prerequisite stage {stage!r}" + (f": {detail}" if detail else ""))
        self.stage = stage


@dataclass
class StageRecord:
    stage_hash: str
    artifacts: dict[str, str]  # path relative to the run dir -> sha256
    wall_clock: float
    finished_at: str
    info: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    root: Path
    config_hash: str = ""
    stages: dict[str, StageRecord] = field(default_factory=dict)

    FILE = "manifest.json"

    @classmethod
    def load(cls, root) -> "RunManifest":
        root = Path(root)
        path = root / cls.FILE
        if not path.exists():
            return cls(root)
        doc = json.loads(path.read_text(encoding="utf-8"))
        stages = {k: StageRecord(**v) for k, v in doc.get("stages", {}).items()}
        return cls(root, doc.get("config_hash", ""), stages)

    def save(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        doc = {"config_hash": self.config_hash, "stages": {k: asdict(v) for k, v in sorted(self.stages.items())}}
        path = self.root / self.FILE
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
        tmp.replace(path)
        return path

    def problems(self, stage: str) -> list[str]:
        """Why ``stage`` cannot be trusted: absent, or an artifact missing/changed."""
        rec = self.stages.get(stage)
        if rec is None:
            return ["not run"]
        out = []
        for rel, digest in rec.artifacts.items():
            p = self.root / rel
            if not p.exists():
                out.append(f"artifact {rel} is missing")
            elif file_sha256(p) != digest:
                out.append(f"artifact {rel} does not match its recorded hash")
        return out

    def is_current(self, stage: str, stage_hash: str) -> bool:
        rec = self.stages.get(stage)
        return rec is not None and rec.stage_hash == stage_hash and not self.problems(stage)

    def require(self, stage: str) -> StageRecord:
        issues = self.problems(stage)
        if issues:
            raise MissingPrerequisite(stage, "; ".join(issues))
        return self.stages[stage]

    def record(self, stage: str, stage_hash: str, artifacts, wall_clock: float, info: dict | None = None) -> StageRecord:
        rels = {}
        for p in artifacts:
            p = Path(p)
            rels[str(p.relative_to(self.root))] = file_sha256(p)
        rec = StageRecord(
            stage_hash,
            rels,
            round(wall_clock, 3),
            _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            info or {},
        )
        self.stages[stage] = rec
        self.save()
        return rec
