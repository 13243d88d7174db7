"""Frame-level model testing on a held-out split, with and without the novelty gate."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Sequence

from .cage import CageState, SafetyCage
from .dataset import FrameRecord
from .detector import DetectorModel, detect
from .metrics import (
    REQ4_BOUNDS, SLICES, FrameOutcome, MetricsSummary, Verdict, aggregate_metrics, classify_frame,
    evaluate_requirements, position_error, rolling_window_counts, slice_records, summary_table, verdict_table,
)
from .sensors import CameraModel, RadarTrack, make_track

BANDS = {"<=80": 80.0, "<=50": 50.0}


@dataclass(frozen=True)
class FrameResult:
    record: FrameRecord
    raw: FrameOutcome  # detector alone
    gated: FrameOutcome  # detections the cage rejects are dropped
    position_error_cm: float | None  # for gated true positives


def evaluate_frames(records: Sequence[FrameRecord], load: Callable, detector: DetectorModel,
                    cage: SafetyCage | None, camera: CameraModel = CameraModel()) -> list[FrameResult]:
    """Score every frame independently; the radar range is stood in for by the true distance."""
    out = []
    for r in sorted(records, key=lambda r: (r.scenario_id, r.frame_index)):
        frame = load(r)
        dets = detect(detector, frame)
        gt = r.pixel_box if r.normalized_label is not None else None
        raw = classify_frame(gt, dets)
        kept = dets
        if cage is not None and dets:
            track = _range_only_track(r)
            kept = [d for d in dets if cage.gate(d, frame, track, CageState()).accepted]
        gated = classify_frame(gt, kept)
        err = None
        if gated.kind == "TP":
            err = position_error(kept[0].pixel_box, camera, (r.actor_distance, r.actor_lateral),
                                 range_m=r.actor_distance)
        out.append(FrameResult(r, raw, gated, err))
    return out


def _range_only_track(r: FrameRecord) -> RadarTrack | None:
    if r.actor_class is None:
        return None
    return make_track(r.actor_distance, r.actor_lateral, 0.0, 0.0, 0.0)


@dataclass
class ModelTestReport:
    split: str
    frames: int
    bands: dict[str, dict[str, MetricsSummary]]  # variant -> band -> summary
    rolling: dict[str, tuple[int, int]]
    position_errors: list[float]
    verdicts: dict[str, list[Verdict]]
    slices: dict[str, dict[str, MetricsSummary]]
    req4_bound: float

    def to_dict(self) -> dict:
        return {"split": self.split, "frames": self.frames, "req4_bound": self.req4_bound,
                "bands": self.bands, "rolling": self.rolling,
                "position_errors_cm": {"count": len(self.position_errors),
                                       "max": max(self.position_errors, default=0.0),
                                       "median": sorted(self.position_errors)[len(self.position_errors) // 2]
                                       if self.position_errors else 0.0},
                "verdicts": self.verdicts, "slices": self.slices}

    def text(self) -> str:
        parts = []
        for variant in ("model", "model+ood"):
            parts.append(f"[{variant}] {self.split}")
            parts.append(summary_table([(name, s) for name, s in self.slices[variant].items()]))
            parts.append(verdict_table(self.verdicts[variant]))
        return "\n\n".join(parts)


def _band(results: Sequence[FrameResult], limit: float) -> list[FrameResult]:
    return [x for x in results if x.record.actor_distance <= limit]


def _rolling(results: Sequence[FrameResult], variant: str) -> tuple[int, int]:
    seqs: dict[str, list[bool]] = defaultdict(list)
    for x in _band(results, BANDS["<=80"]):
        if x.record.normalized_label is not None:
            seqs[x.record.scenario_id].append(getattr(x, variant).kind != "TP")
    return rolling_window_counts([seqs[k] for k in sorted(seqs)])


def build_report(split: str, results: Sequence[FrameResult], req4_bound: float = REQ4_BOUNDS["default"]) -> ModelTestReport:
    bands, rolling, verdicts, slices = {}, {}, {}, {}
    errors = [x.position_error_cm for x in _band(results, BANDS["<=80"]) if x.position_error_cm is not None]
    for variant, attr in (("model", "raw"), ("model+ood", "gated")):
        bands[variant] = {name: aggregate_metrics(getattr(x, attr) for x in _band(results, lim))
                          for name, lim in BANDS.items()}
        rolling[variant] = _rolling(results, attr)
        verdicts[variant] = evaluate_requirements(bands[variant], rolling[variant], errors, req4_bound)
        pairs = [(x.record, getattr(x, attr)) for x in results]
        slices[variant] = {}
        for sid in SLICES:
            chosen = slice_records(pairs, sid)
            if chosen:
                slices[variant][sid] = aggregate_metrics(o for _, o in chosen)
    return ModelTestReport(split, len(results), bands, rolling, errors, verdicts, slices, req4_bound)
