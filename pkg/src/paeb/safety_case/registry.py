"""Inventory of the 34 evidence artifacts and a registry of the files that realize them."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

STAGES = (1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class ArtifactSpec:
    id: str
    title: str
    input_to: tuple[int, ...]
    output_from: tuple[int, ...]

    def __post_init__(self) -> None:
        if not set(self.input_to) | set(self.output_from) <= set(STAGES):
            raise ValueError(f"[{self.id}] stage numbers outside 1-6")

    @property
    def stages(self) -> frozenset[int]:
        return frozenset(self.input_to) | frozenset(self.output_from)


def load_inventory() -> dict[str, ArtifactSpec]:
    raw = json.loads(resources.files("paeb.safety_case").joinpath("data/artifacts.json").read_text())
    inv = {a["id"]: ArtifactSpec(a["id"], a["title"], tuple(a["input_to"]), tuple(a["output_from"]))
           for a in raw["artifacts"]}
    if len(inv) != 34:
        raise ValueError(f"artifact inventory has {len(inv)} entries, expected 34")
    return inv


INVENTORY = load_inventory()


def normalize_id(artifact_id: str) -> str:
    key = artifact_id.strip().strip("[]").upper()
    if key not in INVENTORY:
        valid = ", ".join(f"[{k}]" for k in INVENTORY)
        raise KeyError(f"unknown artifact id {artifact_id!r}; valid ids: {valid}")
    return key


def content_hash(path: str | Path) -> str:
    """SHA-256 of a file, or of a directory's relative paths and file contents."""
    path = Path(path)
    if path.is_file():
        return hashlib.sha256(path.read_bytes()).hexdigest()
    if not path.is_dir():
        raise FileNotFoundError(f"no artifact at {path}")
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(f.relative_to(path).as_posix().encode() + b"\0")
        h.update(hashlib.sha256(f.read_bytes()).digest())
    return h.hexdigest()


@dataclass
class ArtifactRecord:
    id: str
    path: str
    sha256: str
    history: list[dict] = field(default_factory=list)  # earlier (path, sha256) registrations


@dataclass
class Registry:
    records: dict[str, ArtifactRecord] = field(default_factory=dict)

    def present(self, artifact_id: str) -> bool:
        rec = self.records.get(normalize_id(artifact_id))
        return rec is not None and Path(rec.path).exists()

    def remove(self, artifact_id: str) -> None:
        self.records.pop(normalize_id(artifact_id), None)

    def to_dict(self) -> dict:
        return {"schema": "artifact-registry/1",
                "artifacts": {k: asdict(self.records[k]) for k in INVENTORY if k in self.records}}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> Registry:
        path = Path(path)
        if not path.exists():
            return cls()
        raw = json.loads(path.read_text())
        return cls({normalize_id(k): ArtifactRecord(**v) for k, v in raw["artifacts"].items()})


def register_artifact(registry: Registry, artifact_id: str, path: str | Path) -> Registry:
    """Record presence and content hash; a changed registration keeps the previous one in history."""
    key = normalize_id(artifact_id)
    digest = content_hash(path)
    path = str(Path(path))
    old = registry.records.get(key)
    if old is None:
        registry.records[key] = ArtifactRecord(key, path, digest)
    elif (old.path, old.sha256) != (path, digest):
        history = old.history + [{"path": old.path, "sha256": old.sha256}]
        registry.records[key] = ArtifactRecord(key, path, digest, history)
    return registry
