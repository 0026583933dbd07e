"""Run manifest: which stages finished, what they wrote, and with which seeds."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class StageRecord:
    outputs: dict[str, str]        # path relative to the run dir -> sha256
    seed: int | None
    wall_clock_s: float
    config_hash: str


@dataclass
class RunManifest:
    root: Path
    config_hash: str
    seeds: dict[str, int] = field(default_factory=dict)
    stages: dict[str, StageRecord] = field(default_factory=dict)
    tool_version: str = __version__

    @classmethod
    def open(cls, root, config_hash: str) -> "RunManifest":
        """Load ``root/manifest.json`` if present; stage records from other configs are dropped."""
        root = Path(root)
        path = root / MANIFEST_NAME
        m = cls(root, config_hash)
        if path.exists():
            d = json.loads(path.read_text())
            for name, rec in d.get("stages", {}).items():
                if rec.get("config_hash") == config_hash:
                    m.stages[name] = StageRecord(**rec)
            m.seeds = {k: v for k, v in d.get("seeds", {}).items() if k in m.stages}
        return m

    def is_complete(self, stage: str) -> bool:
        """True when the stage ran under this config and every output still matches its hash."""
        rec = self.stages.get(stage)
        if rec is None or rec.config_hash != self.config_hash:
            return False
        for rel, digest in rec.outputs.items():
            p = self.root / rel
            if not p.exists() or file_digest(p) != digest:
                return False
        return True

    def record(self, stage: str, outputs, seed: int | None, wall_clock_s: float) -> StageRecord:
        files = []
        for p in outputs:
            p = Path(p)
            files.extend(sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p])
        hashes = {str(p.relative_to(self.root)): file_digest(p) for p in files}
        rec = StageRecord(dict(sorted(hashes.items())), seed, wall_clock_s, self.config_hash)
        self.stages[stage] = rec
        if seed is not None:
            self.seeds[stage] = seed
        self.save()
        return rec

    def forget(self, stage: str) -> None:
        self.stages.pop(stage, None)
        self.seeds.pop(stage, None)

    def to_dict(self) -> dict:
        return {"tool_version": self.tool_version, "config_hash": self.config_hash,
                "seeds": dict(sorted(self.seeds.items())),
                "stages": {k: vars(v) for k, v in sorted(self.stages.items())}}

    def save(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / MANIFEST_NAME
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        os.replace(tmp, path)
        return path
