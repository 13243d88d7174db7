"""Detection scoring: IoU outcomes, summaries, AP, rolling misses, position error, slices, verdicts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .sensors import CameraModel, PixelBox

KINDS = ("TP", "FP", "FN", "EMPTY")


def iou(a: PixelBox, b: PixelBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return float(inter / (a.area + b.area - inter))


@dataclass(frozen=True)
class FrameOutcome:
    kind: str
    iou: float | None = None
    confidence: float | None = None
    extra_fp: int = 0  # lower-ranked detections that survived suppression

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown outcome {self.kind!r}")

    @property
    def false_positives(self) -> int:
        return int(self.kind == "FP") + self.extra_fp


def classify_frame(gt: PixelBox | None, detections: Sequence, iou_threshold: float = 0.5) -> FrameOutcome:
    """Score the most confident detection against the ground truth box."""
    if not detections:
        return FrameOutcome("FN") if gt is not None else FrameOutcome("EMPTY")
    best = max(detections, key=lambda d: d.confidence)
    extra = len(detections) - 1
    if gt is None:
        return FrameOutcome("FP", None, best.confidence, extra)
    overlap = iou(gt, best.pixel_box)
    kind = "TP" if overlap >= iou_threshold else "FP"
    return FrameOutcome(kind, overlap, best.confidence, extra)


@dataclass(frozen=True)
class MetricsSummary:
    total: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    fppi: float
    fn_rate: float
    tp_rate: float
    ap_at_05: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_counts(tp: int, fp: int, fn: int, total: int | None = None,
                     ap: float | None = None) -> MetricsSummary:
    if total is None:
        total = tp + fp + fn
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    fppi = fp / total if total else 0.0
    return MetricsSummary(total, tp, fp, fn, precision, recall, f1, fppi,
                          fn / total if total else 0.0, tp / total if total else 0.0, ap)


def aggregate_metrics(outcomes: Iterable[FrameOutcome]) -> MetricsSummary:
    outcomes = list(outcomes)
    tp = sum(o.kind == "TP" for o in outcomes)
    fn = sum(o.kind == "FN" for o in outcomes)
    fp = sum(o.false_positives for o in outcomes)
    n_gt = sum(o.kind in ("TP", "FN") or (o.kind == "FP" and o.iou is not None) for o in outcomes)
    scored = [(o.confidence, o.kind == "TP") for o in outcomes if o.confidence is not None]
    ap = average_precision(scored, n_gt) if n_gt else None
    return summarize_counts(tp, fp, fn, len(outcomes), ap)


def average_precision(scored: Sequence[tuple[float, bool]], n_gt: int) -> float | None:
    """All-point interpolated area under the PR curve; predictions with equal confidence enter together."""
    if n_gt <= 0:
        return None
    if not scored:
        return 0.0
    conf = np.array([c for c, _ in scored], dtype=float)
    hit = np.array([t for _, t in scored], dtype=bool)
    order = np.argsort(-conf, kind="stable")
    conf, hit = conf[order], hit[order]
    last = np.r_[np.flatnonzero(np.diff(conf) != 0), len(conf) - 1]
    tps = np.cumsum(hit)[last]
    n = last + 1
    recall = np.r_[0.0, tps / n_gt]
    precision = np.r_[1.0, tps / n]
    # make precision monotone from the right, then integrate over recall steps
    env = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(recall) * env[1:]))


def rolling_window_violation_rate(miss_flags: Sequence[Sequence[bool]] | Sequence[bool],
                                  window: int = 5, max_misses: int = 1) -> float:
    """Fraction of sliding windows holding more than max_misses misses; windows stay inside a sequence."""
    seqs = miss_flags
    if len(seqs) and not isinstance(seqs[0], (list, tuple, np.ndarray)):
        seqs = [seqs]
    windows = violations = 0
    for seq in seqs:
        m = np.asarray(seq, dtype=int)
        if len(m) < window:
            continue
        counts = np.convolve(m, np.ones(window, dtype=int), mode="valid")
        windows += len(counts)
        violations += int((counts > max_misses).sum())
    if windows == 0:
        raise ValueError(f"no sequence reaches the window length {window}")
    return violations / windows


def rolling_window_counts(miss_flags: Sequence[Sequence[bool]], window: int = 5,
                          max_misses: int = 1) -> tuple[int, int]:
    windows = violations = 0
    for seq in miss_flags:
        m = np.asarray(seq, dtype=int)
        if len(m) < window:
            continue
        counts = np.convolve(m, np.ones(window, dtype=int), mode="valid")
        windows += len(counts)
        violations += int((counts > max_misses).sum())
    return violations, windows


def ground_position(box: PixelBox, camera: CameraModel, range_m: float | None = None) -> tuple[float, float]:
    """(depth, lateral) of the box bottom-center; depth from flat-road geometry unless a range is given."""
    u = (box.x_min + box.x_max) / 2.0
    if range_m is None:
        return camera.ground_point(u, box.y_max)
    return range_m, (u - camera.cx) * range_m / camera.fx


def position_error(box: PixelBox, camera: CameraModel, gt_position: tuple[float, float],
                   range_m: float | None = None) -> float:
    """Ground-plane distance in centimeters between the box footprint and the true actor position."""
    z, y = ground_position(box, camera, range_m)
    return float(np.hypot(z - gt_position[0], y - gt_position[1]) * 100.0)


# =============================================================================
# Slices
# =============================================================================


@dataclass(frozen=True)
class SliceSpec:
    id: str
    description: str
    predicate: Callable[[object], bool] = field(compare=False)


def _is_ped(r) -> bool:
    return r.actor_class is not None and r.actor_class.startswith("P")


SLICES: dict[str, SliceSpec] = {s.id: s for s in (
    SliceSpec("S1", "all frames", lambda r: True),
    SliceSpec("S2", "pedestrians closer than 50 m", lambda r: _is_ped(r) and r.actor_distance < 50.0),
    SliceSpec("S3", "pedestrians at 50 m or farther", lambda r: _is_ped(r) and r.actor_distance >= 50.0),
    SliceSpec("S4", "moving pedestrians slower than 3 m/s",
              lambda r: _is_ped(r) and 0.0 < r.actor_speed < 3.0),
    SliceSpec("S5", "moving pedestrians at 3 m/s or faster", lambda r: _is_ped(r) and r.actor_speed >= 3.0),
    SliceSpec("S6", "boxes touching an image edge", lambda r: _is_ped(r) and r.occluded),
    SliceSpec("S7", "male pedestrians", lambda r: r.actor_class in ("P2", "P4", "P6", "P8")),
    SliceSpec("S8", "female pedestrians", lambda r: r.actor_class in ("P1", "P3", "P5")),
    SliceSpec("S9", "children", lambda r: r.actor_class == "P7"),
)}


def slice_records(records_with_outcomes: Iterable[tuple], spec: SliceSpec | str) -> list[tuple]:
    if isinstance(spec, str):
        spec = SLICES[spec]
    return [ro for ro in records_with_outcomes if spec.predicate(ro[0])]


# =============================================================================
# Requirement verdicts
# =============================================================================


@dataclass(frozen=True)
class Verdict:
    requirement: str
    passed: bool
    value: float
    bound: float
    numerator: float
    denominator: float
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


REQ4_BOUNDS = {"default": 0.01, "lenient": 0.03}


def evaluate_requirements(summary_by_band: dict[str, MetricsSummary], rolling: tuple[int, int],
                          position_errors: Sequence[float], req4_bound: float = REQ4_BOUNDS["default"],
                          ) -> list[Verdict]:
    for band in ("<=80", "<=50"):
        if band not in summary_by_band:
            raise ValueError(f"missing distance band {band}")
    s80, s50 = summary_by_band["<=80"], summary_by_band["<=50"]
    viol, windows = rolling
    rate = viol / windows if windows else 0.0
    worst = max(position_errors) if len(position_errors) else 0.0
    n_bad = sum(e > 50.0 for e in position_errors)
    return [
        Verdict("SYS-PER-REQ1", s80.tp_rate >= 0.93, s80.tp_rate, 0.93, s80.tp, s80.total,
                "TP rate within 80 m"),
        Verdict("SYS-PER-REQ2", s50.fn_rate <= 0.07, s50.fn_rate, 0.07, s50.fn, s50.total,
                "FN rate within 50 m"),
        Verdict("SYS-PER-REQ3", s80.fppi <= 0.001, s80.fppi, 0.001, s80.fp, s80.total,
                "false positives per image within 80 m"),
        Verdict("SYS-PER-REQ4", rate <= req4_bound, rate, req4_bound, viol, windows,
                "5-frame windows with 2 or more misses"),
        Verdict("SYS-PER-REQ5", worst <= 50.0, worst, 50.0, n_bad, len(position_errors),
                "worst position error in cm"),
    ]


# =============================================================================
# Reports
# =============================================================================


def summary_table(rows: Sequence[tuple[str, MetricsSummary]]) -> str:
    lines = [f"{'Data set':<22}{'TP':>9}{'FP':>8}{'FN':>8}{'P':>8}{'R':>8}{'F1':>8}{'AP@0.5':>9}"]
    for name, s in rows:
        ap = f"{s.ap_at_05:.4f}" if s.ap_at_05 is not None else "n/a"
        lines.append(f"{name:<22}{s.tp:>9}{s.fp:>8}{s.fn:>8}{s.precision:>8.4f}{s.recall:>8.4f}"
                     f"{s.f1:>8.4f}{ap:>9}")
    return "\n".join(lines)


def verdict_table(verdicts: Sequence[Verdict], title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'Requirement':<14}{'Result':<7}{'Value':>12}{'Bound':>10}  Counts")
    for v in verdicts:
        lines.append(f"{v.requirement:<14}{'PASS' if v.passed else 'FAIL':<7}{v.value:>12.5f}{v.bound:>10.4f}"
                     f"  {v.numerator:g}/{v.denominator:g}  {v.note}")
    return "\n".join(lines)


def histogram_svg(values: Sequence[float], bins: int = 20, title: str = "", xlabel: str = "") -> str:
    values = np.asarray(values, dtype=float)
    counts, edges = np.histogram(values, bins=bins) if len(values) else (np.zeros(bins), np.linspace(0, 1, bins + 1))
    w, h, pad = 480, 240, 40
    top = max(1, counts.max())
    bar_w = (w - 2 * pad) / bins
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<text x="{w / 2}" y="16" text-anchor="middle" font-size="12">{title}</text>']
    for i, c in enumerate(counts):
        bh = (h - 2 * pad) * c / top
        parts.append(f'<rect x="{pad + i * bar_w:.1f}" y="{h - pad - bh:.1f}" width="{bar_w - 1:.1f}" '
                     f'height="{bh:.1f}" fill="#4a7ab5"/>')
    parts.append(f'<text x="{pad}" y="{h - 10}" font-size="10">{edges[0]:.3g}</text>')
    parts.append(f'<text x="{w - pad}" y="{h - 10}" font-size="10" text-anchor="end">{edges[-1]:.3g}</text>')
    parts.append(f'<text x="{w / 2}" y="{h - 10}" font-size="10" text-anchor="middle">{xlabel}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=lambda o: o.to_dict())
