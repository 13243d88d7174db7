"""Single-class pedestrian detector: learned static background, foreground proposals,
silhouette correlation against per-scale templates, greedy suppression, and
confidence calibration against a false-positives-per-image budget.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import ndimage

from .imaging import bilinear_crop
from .metrics import average_precision, classify_frame, iou
from .sensors import PixelBox

TEMPLATE_SHAPE = (32, 16)  # rows, cols
BIN_EDGES = (0.0, 24.0, 48.0, 96.0, float("inf"))  # box height in pixels
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
THRESHOLD_GRID = np.round(np.arange(1, 1001) * 0.001, 3)
# smallest patch spread treated as shape, that of a binary mask with 10 % of
# its cells in the minority; nearly uniform blobs score proportionally less
MIN_SPREAD = float(np.sqrt(TEMPLATE_SHAPE[0] * TEMPLATE_SHAPE[1] * 0.1 * 0.9))


class TrainingError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    def __init__(self, message: str, curve: Sequence[tuple[float, float]]):
        super().__init__(message)
        self.curve = list(curve)


@dataclass(frozen=True)
class Detection:
    pixel_box: PixelBox
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class DetectorModel:
    background: np.ndarray  # uint8 image of the empty scene
    templates: np.ndarray  # (bins, rows, cols), zero mean and unit norm
    variances: np.ndarray  # per-pixel variance of the training silhouettes
    counts: np.ndarray  # training silhouettes per bin
    bin_edges: tuple[float, ...] = BIN_EDGES
    fg_threshold: int = 12
    min_area: int = 6
    stride: int = 1
    suppression_iou: float = 0.5
    max_detections: int = 5
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if len(self.templates) < 3 or len(self.templates) != len(self.bin_edges) - 1:
            raise ValueError("need at least three scale bins with one template each")
        flat = self.templates.reshape(len(self.templates), -1)
        if not (np.allclose(flat.mean(axis=1), 0.0, atol=1e-9) and np.allclose(np.linalg.norm(flat, axis=1), 1.0)):
            raise ValueError("templates must be zero-mean and unit-norm")

    def params(self) -> dict:
        return {"bin_edges": [e if np.isfinite(e) else "inf" for e in self.bin_edges],
                "fg_threshold": self.fg_threshold, "min_area": self.min_area, "stride": self.stride,
                "suppression_iou": self.suppression_iou, "max_detections": self.max_detections,
                "threshold": self.threshold}

    @property
    def version_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.background, self.templates, self.variances, self.counts):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(json.dumps(self.params(), sort_keys=True).encode())
        return h.hexdigest()

    def scale_bin(self, height_px: float) -> int:
        return int(np.searchsorted(self.bin_edges, height_px, side="right") - 1)

    def with_threshold(self, threshold: float) -> DetectorModel:
        return DetectorModel(self.background, self.templates, self.variances, self.counts, self.bin_edges,
                             self.fg_threshold, self.min_area, self.stride, self.suppression_iou,
                             self.max_detections, float(threshold))

    def save(self, path: str | Path) -> str:
        buf = io.BytesIO()
        np.savez(buf, background=self.background, templates=self.templates, variances=self.variances,
                 counts=self.counts, params=np.array(json.dumps(self.params(), sort_keys=True)),
                 format=np.array("template-detector/1"))
        Path(path).write_bytes(buf.getvalue())
        return self.version_hash

    @classmethod
    def load(cls, path: str | Path) -> DetectorModel:
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != "template-detector/1":
                raise ValueError(f"{path}: unsupported detector format")
            p = json.loads(str(z["params"]))
            edges = tuple(float(e) for e in p.pop("bin_edges"))
            return cls(z["background"], z["templates"], z["variances"], z["counts"], edges, **p)


# =============================================================================
# Silhouette features
# =============================================================================


def foreground_mask(frame: np.ndarray, background: np.ndarray, threshold: int) -> np.ndarray:
    return np.abs(frame.astype(np.int16) - background.astype(np.int16)) > threshold


def silhouette_patch(mask: np.ndarray, box: PixelBox) -> np.ndarray:
    return bilinear_crop(mask.astype(np.float64), box, TEMPLATE_SHAPE)


def _unit(patch: np.ndarray, floor: float = 1e-9) -> np.ndarray | None:
    z = patch - patch.mean()
    n = np.linalg.norm(z)
    if n < 1e-9:
        return None
    return z / max(n, floor)


def correlation(patch: np.ndarray, template: np.ndarray) -> float:
    z = _unit(patch, MIN_SPREAD)
    if z is None:
        return 0.0  # uniform blobs carry no shape
    return float(np.clip(np.sum(z * template), 0.0, 1.0))


def proposals(model: DetectorModel, frame: np.ndarray) -> tuple[np.ndarray, list[PixelBox]]:
    mask = foreground_mask(frame, model.background, model.fg_threshold)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    boxes = []
    if n == 0:
        return mask, boxes
    sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, n + 1))
    for k, sl in enumerate(ndimage.find_objects(labels)):
        if sl is None or sizes[k] < model.min_area:
            continue
        rs, cs = sl
        if rs.stop - rs.start < 2 or cs.stop - cs.start < 2:
            continue
        boxes.append(PixelBox(float(cs.start), float(rs.start), float(cs.stop), float(rs.stop)))
    return mask, boxes


def suppress(detections: Sequence[Detection], iou_threshold: float = 0.5, limit: int | None = None) -> list[Detection]:
    """Greedy non-maximum suppression, most confident first."""
    ranked = sorted(detections, key=lambda d: (-d.confidence, d.pixel_box.as_tuple()))
    kept: list[Detection] = []
    for d in ranked:
        if all(iou(d.pixel_box, k.pixel_box) <= iou_threshold for k in kept):
            kept.append(d)
            if limit is not None and len(kept) >= limit:
                break
    return kept


def detect(model: DetectorModel, frame: np.ndarray, threshold: float | None = None) -> list[Detection]:
    if frame.shape != model.background.shape:
        raise ValueError(f"frame shape {frame.shape} does not match camera {model.background.shape}")
    thr = model.threshold if threshold is None else threshold
    mask, boxes = proposals(model, frame)
    cands = []
    for box in boxes:
        b = min(model.scale_bin(box.height), len(model.templates) - 1)
        conf = correlation(silhouette_patch(mask, box), model.templates[b])
        if conf >= thr:
            cands.append(Detection(box, conf))
    return suppress(cands, model.suppression_iou, model.max_detections)


# =============================================================================
# Training
# =============================================================================


def learn_background(frames: Iterable[np.ndarray], limit: int = 64) -> np.ndarray:
    stack = []
    for f in frames:
        stack.append(f)
        if len(stack) >= limit:
            break
    if not stack:
        raise TrainingError("no frames available to learn the background")
    return np.median(np.stack(stack), axis=0).round().astype(np.uint8)


def train_detector(records: Sequence, load: Callable[[object], np.ndarray], fg_threshold: int = 12,
                   bin_edges: tuple[float, ...] = BIN_EDGES) -> DetectorModel:
    """Fit the background and the per-scale silhouette templates from labeled frames."""
    records = sorted(records, key=lambda r: (r.scenario_id, r.frame_index))
    empties = [r for r in records if r.actor_class is None]
    source = empties if empties else records[:: max(1, len(records) // 64)]
    background = learn_background(load(r) for r in source)
    n_bins = len(bin_edges) - 1
    sums = np.zeros((n_bins, *TEMPLATE_SHAPE))
    sq = np.zeros_like(sums)
    counts = np.zeros(n_bins, dtype=np.int64)
    for r in records:
        if r.normalized_label is None or r.pixel_box is None or r.occluded:
            continue
        box = r.pixel_box
        b = int(np.searchsorted(bin_edges, box.height, side="right") - 1)
        mask = foreground_mask(load(r), background, fg_threshold)
        patch = silhouette_patch(mask, box)
        sums[b] += patch
        sq[b] += patch * patch
        counts[b] += 1
    for b in range(n_bins):
        if counts[b] == 0:
            raise TrainingError(f"scale bin {b} ({bin_edges[b]:g}-{bin_edges[b + 1]:g} px) has no labeled pedestrians")
    mean = sums / counts[:, None, None]
    var = sq / counts[:, None, None] - mean * mean
    templates = np.stack([_unit(m) for m in mean])
    return DetectorModel(background, templates, var, counts, tuple(bin_edges), fg_threshold)


# =============================================================================
# Calibration
# =============================================================================


@dataclass(frozen=True)
class ConfidenceCalibration:
    threshold: float
    target_fppi: float
    margin_factor: float
    measured_fppi_at_threshold: float
    frames: int
    curve: tuple[tuple[float, float], ...] = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "target_fppi": self.target_fppi,
                "margin_factor": self.margin_factor, "measured_fppi_at_threshold": self.measured_fppi_at_threshold,
                "frames": self.frames}


def fppi_curve(scored_frames: Sequence[tuple[PixelBox | None, Sequence[Detection]]],
               grid: np.ndarray = THRESHOLD_GRID, iou_threshold: float = 0.5) -> np.ndarray:
    """False positives per image at each grid threshold, counting extra detections as FPs."""
    fp = np.zeros(len(grid), dtype=np.int64)
    for gt, dets in scored_frames:
        if not dets:
            continue
        conf = np.array([d.confidence for d in dets])
        # every kept detection is a false positive, except a correct top one
        fp += (conf[None, :] >= grid[:, None]).sum(axis=1)
        top = max(dets, key=lambda d: d.confidence)
        if gt is not None and iou(gt, top.pixel_box) >= iou_threshold:
            fp -= (top.confidence >= grid).astype(np.int64)
    return fp / max(1, len(scored_frames))


def calibrate_threshold(scored_frames: Sequence[tuple[PixelBox | None, Sequence[Detection]]],
                        target_fppi: float = 0.001, margin_factor: float = 0.5) -> ConfidenceCalibration:
    if not scored_frames:
        raise ValueError("calibration needs at least one frame")
    curve = fppi_curve(scored_frames)
    bound = target_fppi * margin_factor
    ok = np.flatnonzero(curve <= bound + 1e-15)
    pairs = tuple(zip(THRESHOLD_GRID.tolist(), curve.tolist()))
    if len(ok) == 0:
        raise CalibrationError(f"no threshold reaches FPPI <= {bound:g}", pairs)
    k = int(ok[0])
    return ConfidenceCalibration(float(THRESHOLD_GRID[k]), target_fppi, margin_factor, float(curve[k]),
                                 len(scored_frames), pairs)


def score_frames(model: DetectorModel, frames: Iterable[tuple[np.ndarray, PixelBox | None]]) -> list:
    return [(gt, detect(model, f, threshold=0.0)) for f, gt in frames]


def calibrate_confidence(model: DetectorModel, frames: Iterable[tuple[np.ndarray, PixelBox | None]],
                         target_fppi: float = 0.001, margin_factor: float = 0.5) -> ConfidenceCalibration:
    return calibrate_threshold(score_frames(model, frames), target_fppi, margin_factor)


def validation_ap(model: DetectorModel, frames: Iterable[tuple[np.ndarray, PixelBox | None]]) -> float | None:
    """AP at IoU 0.5 of the most confident detection per frame; the model-selection score."""
    scored, n_gt = [], 0
    for frame, gt in frames:
        n_gt += gt is not None
        out = classify_frame(gt, detect(model, frame, threshold=0.0))
        if out.confidence is not None:
            scored.append((out.confidence, out.kind == "TP"))
    return average_precision(scored, n_gt)
