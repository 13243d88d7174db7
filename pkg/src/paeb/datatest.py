"""Expectation suite over generated frame datasets."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import yaml

from .dataset import SPLITS, DatasetManifest, FrameRecord, split_of
from .sensors import CameraModel, read_pgm_header

KINDS = ("bounds", "coverage", "fraction-band", "histogram-distance")
SEVERITIES = ("error", "warning", "info")
SCOPES = ("any", "campaign") + SPLITS
HIST_BINS = 32
HIST_SAMPLE = 200  # frames read for the intensity histogram

DEMOGRAPHICS = {
    "children": frozenset({"P7"}),
    "adult-male": frozenset({"P2", "P4", "P6", "P8"}),
    "adult-female": frozenset({"P1", "P3", "P5"}),
}

_REQUIRED = {
    "bounds": {"measure"},
    "coverage": {"measure", "edges"},
    "fraction-band": {"measure", "band"},
    "histogram-distance": {"max_l1"},
}
_MEASURES = {
    "bounds": {"image_size", "box_in_image", "center_x_std", "center_y_std", "aspect_std"},
    "coverage": {"distance"},
    "fraction-band": {"demographics", "background"},
}


@dataclass(frozen=True)
class Expectation:
    id: str
    description: str
    kind: str
    params: dict
    severity: str = "error"
    scope: str = "any"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"{self.id}: unknown kind {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"{self.id}: unknown severity {self.severity!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"{self.id}: unknown scope {self.scope!r}")
        missing = _REQUIRED[self.kind] - set(self.params)
        if missing:
            raise ValueError(f"{self.id}: {self.kind} expectation lacks {sorted(missing)}")
        measure = self.params.get("measure")
        if self.kind in _MEASURES and measure not in _MEASURES[self.kind]:
            raise ValueError(f"{self.id}: {self.kind} cannot measure {measure!r}")


def load_expectations(path: str | Path | None = None) -> list[Expectation]:
    if path is None:
        text = resources.files("paeb").joinpath("data/expectations.yaml").read_text()
    else:
        text = Path(path).read_text()
    raw = yaml.safe_load(text)
    suite = [Expectation(e["id"], e.get("description", ""), e["kind"], dict(e.get("params", {})),
                         e.get("severity", "error"), e.get("scope", "any")) for e in raw["expectations"]]
    ids = [e.id for e in suite]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ValueError(f"duplicate expectation ids: {dupes}")
    return suite


def load_reference_histogram(path: str | Path | None = None) -> np.ndarray:
    if path is None:
        text = resources.files("paeb").joinpath("data/reference_histogram.json").read_text()
    else:
        text = Path(path).read_text()
    return np.asarray(json.loads(text)["histogram"], dtype=np.float64)


# =============================================================================
# Measurements
# =============================================================================


def intensity_histogram(frames: Iterable[np.ndarray], bins: int = HIST_BINS) -> np.ndarray:
    """Mean of the per-frame normalized intensity histograms."""
    total = np.zeros(bins)
    n = 0
    for f in frames:
        h, _ = np.histogram(f, bins=bins, range=(0, 256))
        total += h / f.size
        n += 1
    if n == 0:
        raise ValueError("no frames to histogram")
    return total / n


def histogram_sample(records: Sequence[FrameRecord], k: int = HIST_SAMPLE) -> list[FrameRecord]:
    """Evenly spaced records in canonical order, so the sample is independent of input order."""
    ordered = sorted(records, key=lambda r: (r.scenario_id, r.frame_index))
    if len(ordered) <= k:
        return ordered
    idx = np.linspace(0, len(ordered) - 1, k).round().astype(int)
    return [ordered[i] for i in idx]


def demographic_fractions(records: Iterable[FrameRecord], by: str = "frames") -> dict[str, float]:
    """Share of labeled pedestrians per demographic group, counted by frame or by scenario."""
    if by not in ("frames", "scenarios"):
        raise ValueError(f"cannot count by {by!r}")
    seen: set = set()
    counts: Counter = Counter()
    for r in records:
        if r.normalized_label is None:
            continue
        key = r.scenario_id if by == "scenarios" else (r.scenario_id, r.frame_index)
        if key in seen:
            continue
        seen.add(key)
        for group, members in DEMOGRAPHICS.items():
            if r.actor_class in members:
                counts[group] += 1
    total = sum(counts.values())
    return {g: (counts[g] / total if total else 0.0) for g in DEMOGRAPHICS}


def _key(r: FrameRecord) -> str:
    return f"{r.scenario_id}/{r.frame_index}"


# =============================================================================
# Report
# =============================================================================


@dataclass
class ExpectationResult:
    id: str
    kind: str
    severity: str
    status: str  # pass | fail | skipped
    measured: dict
    offending: list[str] = field(default_factory=list)


@dataclass
class DataTestReport:
    split: str | None
    records: int
    results: list[ExpectationResult]
    errors: list[dict]  # unreadable inputs

    @property
    def passed(self) -> bool:
        blocking = [r for r in self.results if r.severity != "info" and r.status == "fail"]
        return not blocking and not self.errors

    def to_dict(self) -> dict:
        return {"split": self.split, "records": self.records, "passed": self.passed,
                "results": [asdict(r) for r in self.results], "errors": self.errors}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def text(self) -> str:
        lines = [f"data test over {self.split or 'campaign'}: {self.records} records"]
        for r in self.results:
            shown = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(r.measured.items()))
            extra = f" ({len(r.offending)} offending)" if r.offending else ""
            lines.append(f"  {r.status.upper():<8}{r.id:<28}[{r.severity}] {shown}{extra}")
        for e in self.errors:
            lines.append(f"  ERROR   {e['record']}: {e['error']}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in v.items()) + "}"
    return str(v)


def _in_scope(records: Sequence[FrameRecord], scope: str, split: str | None) -> list[FrameRecord] | None:
    if scope == "any":
        return list(records)
    if scope == "campaign":
        return list(records) if split is None else None
    if split is not None and split != scope:
        return None
    return [r for r in records if split_of(r.actor_class) == scope]


def _evaluate(e: Expectation, recs: list[FrameRecord], camera: CameraModel,
              sizes: dict[str, tuple[int, int]], frames: dict[str, np.ndarray],
              reference: np.ndarray | None) -> ExpectationResult:
    p = e.params
    measure = p.get("measure")
    offending: list[str] = []
    measured: dict = {}
    ok = True
    pos = [r for r in recs if r.normalized_label is not None]
    if e.kind == "bounds" and measure == "image_size":
        want = tuple(p.get("size", (camera.image_width, camera.image_height)))
        offending = sorted(k for k, s in sizes.items() if tuple(s) != want)
        measured = {"expected": list(want), "checked": len(sizes)}
        ok = not offending
    elif e.kind == "bounds" and measure == "box_in_image":
        w, h = camera.image_width, camera.image_height
        for r in recs:
            b = r.pixel_box
            if b is not None and r.normalized_label is not None and \
                    (b.x_min < 0 or b.y_min < 0 or b.x_max > w or b.y_max > h):
                offending.append(_key(r))
        measured = {"boxes": len(pos)}
        ok = not offending
    elif e.kind == "bounds":
        labels = np.array([r.normalized_label[1:] for r in pos]).reshape(-1, 4)
        if measure == "center_x_std":
            values = labels[:, 0]
        elif measure == "center_y_std":
            values = labels[:, 1]
        else:
            values = labels[:, 2] / np.maximum(labels[:, 3], 1e-12)
        std = float(values.std()) if len(values) else 0.0
        limits = {k: float(p[k]) for k in ("min", "max") if k in p}
        measured = {"value": std, **limits}
        ok = limits.get("min", -np.inf) <= std <= limits.get("max", np.inf)
    elif e.kind == "coverage":
        edges = [float(x) for x in p["edges"]]
        counts, _ = np.histogram([r.actor_distance for r in pos], bins=edges)
        need = int(p.get("min_count", 1))
        empty = [f"[{edges[i]:g},{edges[i + 1]:g})" for i, c in enumerate(counts) if c < need]
        measured = {"counts": [int(c) for c in counts], "empty_bins": len(empty)}
        offending = empty
        ok = not empty
    elif e.kind == "fraction-band" and measure == "demographics":
        fractions = demographic_fractions(recs, p.get("by", "frames"))
        tol = float(p.get("tolerance", 0.0))
        bad = [g for g, want in p["band"].items() if abs(fractions.get(g, 0.0) - float(want)) > tol]
        measured = {"fractions": fractions}
        offending = sorted(bad)
        ok = not bad and bool(pos)
    elif e.kind == "fraction-band":
        lo, hi = (float(x) for x in p["band"])
        frac = sum(r.is_background for r in recs) / len(recs) if recs else 0.0
        measured = {"value": frac, "band": [lo, hi]}
        ok = bool(recs) and lo <= frac <= hi
    else:  # histogram-distance
        if reference is None or not frames:
            return ExpectationResult(e.id, e.kind, e.severity, "skipped", {"reason": "no reference or frames"})
        hist = intensity_histogram(frames[k] for k in sorted(frames))
        l1 = float(np.abs(hist - reference).sum())
        measured = {"l1": l1, "max_l1": float(p["max_l1"]), "frames": len(frames)}
        ok = l1 <= float(p["max_l1"])
    return ExpectationResult(e.id, e.kind, e.severity, "pass" if ok else "fail", measured, offending)


def run_expectations(records: Sequence[FrameRecord], suite: Sequence[Expectation], root: str | Path | None = None,
                     split: str | None = None, camera: CameraModel = CameraModel(),
                     reference: np.ndarray | None = None, errors: Sequence[dict] = (),
                     read_frame: Callable[[Path], np.ndarray] | None = None) -> DataTestReport:
    """Evaluate the suite; image files are read relative to root when given.

    Unreadable images are reported as errors and left out of the measurements.
    """
    from .sensors import read_pgm

    read_frame = read_frame or read_pgm
    records = sorted(records, key=lambda r: (r.scenario_id, r.frame_index))
    errs = list(errors)
    sizes: dict[str, tuple[int, int]] = {}
    frames: dict[str, np.ndarray] = {}
    if root is not None:
        root = Path(root)
        for r in records:
            try:
                sizes[_key(r)] = read_pgm_header(root / r.image_path)
            except (OSError, ValueError) as exc:
                errs.append({"record": _key(r), "error": f"{type(exc).__name__}: {exc}"})
        if any(e.kind == "histogram-distance" for e in suite):
            for r in histogram_sample([r for r in records if _key(r) in sizes]):
                try:
                    frames[_key(r)] = read_frame(root / r.image_path)
                except (OSError, ValueError) as exc:
                    errs.append({"record": _key(r), "error": f"{type(exc).__name__}: {exc}"})
    results = []
    for e in suite:
        recs = _in_scope(records, e.scope, split)
        if recs is None:
            results.append(ExpectationResult(e.id, e.kind, e.severity, "skipped",
                                             {"reason": f"scope {e.scope} not covered"}))
            continue
        keys = {_key(r) for r in recs}
        results.append(_evaluate(e, recs, camera, {k: v for k, v in sizes.items() if k in keys},
                                 {k: v for k, v in frames.items() if k in keys}, reference))
    return DataTestReport(split, len(records), results, errs)


def read_records(manifest: DatasetManifest, split: str | None = None) -> tuple[list[FrameRecord], list[dict]]:
    """Annotation records of a campaign; unreadable files or lines become error entries."""
    records, errors = [], []
    for entry in manifest.scenarios:
        if split is not None and entry["split"] != split:
            continue
        path = manifest.scenario_dir(entry) / "annotations.jsonl"
        try:
            lines = path.read_text().splitlines()
        except OSError as exc:
            errors.append({"record": entry["id"], "error": f"{type(exc).__name__}: {exc}"})
            continue
        for n, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                records.append(FrameRecord.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                errors.append({"record": f"{entry['id']}:{n + 1}", "error": f"{type(exc).__name__}: {exc}"})
    return records, errors


def check_dataset(root: str | Path, split: str | None = None, suite_path: str | Path | None = None,
                 reference_path: str | Path | None = None) -> DataTestReport:
    manifest = DatasetManifest.load(root)
    camera = CameraModel(**manifest.data["camera"]) if "camera" in manifest.data else CameraModel()
    records, errors = read_records(manifest, split)
    return run_expectations(records, load_expectations(suite_path), manifest.root, split, camera,
                            load_reference_histogram(reference_path), errors)

