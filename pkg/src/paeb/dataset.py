"""Data-generation campaign: frames, annotations, sequestered splits, label export."""

from __future__ import annotations

import hashlib
import json
import math
import shutil
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .scenarios import Scenario
from .sensors import CameraModel, PixelBox, background_frame, project_bbox, read_pgm, render_frame, write_pgm
from .world import SimConfig, is_pedestrian, step_world

SPLIT_CLASSES: dict[str, frozenset] = {
    "development": frozenset({"P2", "P3", "P6", "N5"}),
    "internal-test": frozenset({"P1", "P4", "N1", "N3"}),
    "verification": frozenset({"P5", "P7", "P8", "N2", "N4"}),
}
SPLITS = tuple(SPLIT_CLASSES)
EMPTY_CHUNK = 10  # empty-road frames per pseudo-scenario
MANIFEST = "manifest.json"


class CampaignError(RuntimeError):
    pass


def split_of(actor_class: str | None) -> str:
    if actor_class is None:
        return "development"
    owners = [name for name, members in SPLIT_CLASSES.items() if actor_class in members]
    if len(owners) != 1:
        raise ValueError(f"class {actor_class!r} belongs to {len(owners)} splits")
    return owners[0]


@dataclass(frozen=True)
class FrameRecord:
    scenario_id: str
    frame_index: int
    timestamp: float
    actor_class: str | None
    actor_distance: float
    pixel_box: PixelBox | None
    normalized_label: tuple[int, float, float, float, float] | None
    occluded: bool
    image_path: str
    actor_speed: float = 0.0
    actor_lateral: float = 0.0
    group: str = ""

    def __post_init__(self) -> None:
        want = self.pixel_box is not None and is_pedestrian(self.actor_class)
        if (self.normalized_label is not None) != want:
            raise ValueError("normalized label exists exactly for visible pedestrians")
        if self.normalized_label is not None:
            c, *vals = self.normalized_label
            if c != 0 or not all(0.0 <= v <= 1.0 for v in vals):
                raise ValueError(f"bad normalized label {self.normalized_label}")

    @property
    def is_background(self) -> bool:
        return self.normalized_label is None

    def to_json(self) -> str:
        d = asdict(self)
        d["pixel_box"] = self.pixel_box.to_dict() if self.pixel_box else None
        d["normalized_label"] = list(self.normalized_label) if self.normalized_label else None
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> FrameRecord:
        d = json.loads(line)
        d["pixel_box"] = PixelBox.from_dict(d["pixel_box"]) if d["pixel_box"] else None
        d["normalized_label"] = tuple(d["normalized_label"]) if d["normalized_label"] else None
        return cls(**d)


def normalize_box(box: PixelBox, camera: CameraModel) -> tuple[int, float, float, float, float]:
    b = box.clamp(camera.image_width, camera.image_height)
    w, h = camera.image_width, camera.image_height
    return (0, (b.x_min + b.x_max) / 2 / w, (b.y_min + b.y_max) / 2 / h, b.width / w, b.height / h)


def label_line(label: tuple[int, float, float, float, float] | None) -> str:
    if label is None:
        return ""
    c, x, y, w, h = label
    return f"{c} {x:.6f} {y:.6f} {w:.6f} {h:.6f}\n"


def parse_label(text: str) -> tuple[int, float, float, float, float] | None:
    rows = [r.split() for r in text.strip().splitlines() if r.strip()]
    if not rows:
        return None
    c, *vals = rows[0]
    return (int(c), *(float(v) for v in vals))


# =============================================================================
# Campaign
# =============================================================================


def _phase(seed: int, scenario_id: str) -> float:
    digest = hashlib.sha256(f"{seed}:{scenario_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64 * 2.0 * math.pi


@dataclass
class DatasetManifest:
    root: Path
    data: dict

    @property
    def scenarios(self) -> list[dict]:
        return self.data["scenarios"]

    @property
    def hash(self) -> str:
        return self.data["hash"]

    def scenario_dir(self, entry: dict) -> Path:
        return self.root / entry["split"] / entry["id"]

    def records(self, split: str | None = None) -> Iterator[FrameRecord]:
        for entry in self.scenarios:
            if split is not None and entry["split"] != split:
                continue
            path = self.scenario_dir(entry) / "annotations.jsonl"
            with open(path) as fh:
                for line in fh:
                    if line.strip():
                        yield FrameRecord.from_json(line)

    def frame(self, record: FrameRecord) -> np.ndarray:
        return read_pgm(self.root / record.image_path)

    @classmethod
    def load(cls, root: str | Path) -> DatasetManifest:
        root = Path(root)
        return cls(root, json.loads((root / MANIFEST).read_text()))


def _write_scenario(out: Path, split: str, sid: str, frames: list[tuple[np.ndarray, dict]]) -> tuple[int, str]:
    sdir = out / split / sid
    (sdir / "frames").mkdir(parents=True, exist_ok=True)
    h = hashlib.sha256()
    lines = []
    for frame, rec in frames:
        write_pgm(out / rec.image_path, frame)
        h.update(frame.tobytes())
        line = rec.to_json()
        h.update(line.encode())
        lines.append(line)
    (sdir / "annotations.jsonl").write_text("".join(l + "\n" for l in lines))
    return len(frames), h.hexdigest()


def simulate_scenario(scenario: Scenario, sim: SimConfig, camera: CameraModel, seed: int,
                      frame_stride: int = 1) -> tuple[int, list[tuple[np.ndarray, FrameRecord]]]:
    """Roll a data-generation scenario forward and keep the frames where the actor is in view."""
    split = split_of(scenario.actor_class)
    state = scenario.initial_state(sim, _phase(seed, scenario.id))
    dt = 1.0 / camera.fps
    n_frames = int(round(scenario.duration(sim) * camera.fps))
    kept = []
    for k in range(n_frames):
        if k % frame_stride == 0:
            box = project_bbox(state.actor, camera, state.ego)
            if box is not None:
                label = normalize_box(box, camera) if is_pedestrian(scenario.actor_class) else None
                rec = FrameRecord(
                    scenario.id, k, round(k * dt, 6), scenario.actor_class,
                    state.actor.x - state.ego.position, box, label, box.occluded,
                    f"{split}/{scenario.id}/frames/{k:04d}.pgm", scenario.actor_speed, state.actor.y,
                    scenario.group)
                kept.append((render_frame(state, camera), rec))
        state = step_world(state, dt)
    return n_frames, kept


def generate_campaign(suite: Sequence[Scenario], out_dir: str | Path, sim: SimConfig = SimConfig(),
                      camera: CameraModel = CameraModel(), seed: int = 0, frame_stride: int = 1,
                      background_fraction: float = 0.0198) -> DatasetManifest:
    ids = [s.id for s in suite]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ValueError(f"duplicate scenario ids: {dupes[:5]}")
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")
    for s in suite:
        if s.purpose != "data-generation":
            raise ValueError(f"{s.id} is not a data-generation scenario")
    out = Path(out_dir) / "dataset"
    marker = out / "PARTIAL"
    entries = []
    try:
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        marker.write_text("campaign in progress\n")
        dev_frames = dev_background = 0
        for s in sorted(suite, key=lambda s: s.id):
            split = split_of(s.actor_class)
            simulated, kept = simulate_scenario(s, sim, camera, seed, frame_stride)
            n, digest = _write_scenario(out, split, s.id, kept)
            entries.append({"id": s.id, "actor_class": s.actor_class, "group": s.group, "split": split,
                            "frames": n, "simulated_frames": simulated, "sha256": digest})
            if split == "development":
                dev_frames += n
                dev_background += sum(r.is_background for _, r in kept)
        entries.extend(_empty_road(out, camera, dev_frames, dev_background, background_fraction))
        data = {"schema": "dataset-manifest/1", "seed": seed, "frame_stride": frame_stride,
                "background_fraction_target": background_fraction,
                "camera": asdict(camera), "sim": sim.to_dict(), "scenarios": entries}
        data["hash"] = hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()
        (out / MANIFEST).write_text(json.dumps(data, indent=1, sort_keys=True))
        marker.unlink()
    except OSError as exc:
        try:
            marker.write_text(f"aborted: {exc}\n")
        except OSError:
            pass
        raise CampaignError(f"campaign aborted, partial output left in {out}: {exc}") from exc
    return DatasetManifest(out, data)


def _empty_road(out: Path, camera: CameraModel, dev_frames: int, dev_background: int, target: float) -> list[dict]:
    """Synthesize actor-free frames so that background frames reach the target share of development."""
    if target <= 0 or dev_frames == 0:
        return []
    need = math.ceil((target * dev_frames - dev_background) / (1.0 - target))
    entries = []
    frame = background_frame(camera)
    for chunk in range(math.ceil(max(0, need) / EMPTY_CHUNK)):
        sid = f"EMPTY-{chunk:03d}"
        n = min(EMPTY_CHUNK, need - chunk * EMPTY_CHUNK)
        recs = [(frame, FrameRecord(sid, k, round(k / camera.fps, 6), None, 0.0, None, None, False,
                                    f"development/{sid}/frames/{k:04d}.pgm", group="EMPTY"))
                for k in range(n)]
        count, digest = _write_scenario(out, "development", sid, recs)
        entries.append({"id": sid, "actor_class": None, "group": "EMPTY", "split": "development",
                        "frames": count, "simulated_frames": count, "sha256": digest})
    return entries


# =============================================================================
# Splits
# =============================================================================


@dataclass
class DatasetSplit:
    name: str
    member_classes: frozenset
    records: list[FrameRecord]
    background_fraction: float
    subsets: dict[str, list[str]] = field(default_factory=dict)

    def subset(self, name: str) -> list[FrameRecord]:
        if name not in self.subsets:
            raise KeyError(f"split {self.name} has no subset {name!r}")
        keep = set(self.subsets[name])
        return [r for r in self.records if r.scenario_id in keep]

    def scenario_ids(self) -> list[str]:
        return sorted({r.scenario_id for r in self.records})


def _partition(records: list[FrameRecord], seed: int, val_fraction: float) -> dict[str, list[str]]:
    """Whole scenarios to training or validation, tracking the running validation share."""
    frames: dict[str, int] = defaultdict(int)
    bucket: dict[str, tuple] = {}
    for r in records:
        frames[r.scenario_id] += 1
        bucket[r.scenario_id] = (r.actor_class or "", r.group)
    rng = np.random.default_rng(seed)
    by_bucket: dict[tuple, list[str]] = defaultdict(list)
    for sid in sorted(frames):
        by_bucket[bucket[sid]].append(sid)
    queues = []
    for key in sorted(by_bucket):
        ids = by_bucket[key]
        queues.append([ids[i] for i in rng.permutation(len(ids))])
    order = []
    while any(queues):
        for q in queues:
            if q:
                order.append(q.pop(0))
    seen = val = 0
    out = {"training": [], "validation": []}
    for sid in order:
        n = frames[sid]
        seen += n
        if val + n / 2 <= val_fraction * seen:
            out["validation"].append(sid)
            val += n
        else:
            out["training"].append(sid)
    return {k: sorted(v) for k, v in out.items()}


def split_datasets(manifest: DatasetManifest, seed: int = 0, val_fraction: float = 0.2) -> dict[str, DatasetSplit]:
    per_split: dict[str, list[FrameRecord]] = {name: [] for name in SPLITS}
    for entry in manifest.scenarios:
        routed = split_of(entry["actor_class"])
        if routed != entry["split"]:
            raise ValueError(f"scenario {entry['id']} stored under {entry['split']} but belongs to {routed}")
    for rec in manifest.records():
        per_split[split_of(rec.actor_class)].append(rec)
    classes = {name: {r.actor_class for r in recs if r.actor_class} for name, recs in per_split.items()}
    for a in SPLITS:
        for b in SPLITS:
            if a < b and classes[a] & classes[b]:
                raise ValueError(f"classes {sorted(classes[a] & classes[b])} appear in {a} and {b}")
    out = {}
    for name, recs in per_split.items():
        bg = sum(r.is_background for r in recs) / len(recs) if recs else 0.0
        out[name] = DatasetSplit(name, SPLIT_CLASSES[name], recs, bg)
    out["development"].subsets = _partition(out["development"].records, seed, val_fraction)
    return out


def export_labels(split: DatasetSplit | Iterable[FrameRecord], root: str | Path) -> int:
    records = split.records if isinstance(split, DatasetSplit) else split
    root = Path(root)
    n = 0
    for r in records:
        frame_path = root / r.image_path
        label_path = frame_path.parent.parent / "labels" / (frame_path.stem + ".txt")
        label_path.parent.mkdir(parents=True, exist_ok=True)
        label_path.write_text(label_line(r.normalized_label))
        n += 1
    return n
