"""Fit and calibrate the perception stack from a generated campaign."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cage import (
    MIN_OOD_RANGE, AutoencoderConfig, AutoencoderModel, OodCalibration, SafetyCage, calibrate_ood_threshold, stretch_crop,
    train_autoencoder,
)
from .dataset import DatasetManifest, FrameRecord, split_datasets
from .detector import ConfidenceCalibration, DetectorModel, calibrate_confidence, detect, train_detector
from .metrics import iou
from .sensors import CameraModel


@dataclass
class PerceptionArtifacts:
    detector: DetectorModel  # carries the calibrated threshold
    detector_calibration: ConfidenceCalibration
    cage: SafetyCage
    ood_calibration: OodCalibration
    autoencoder_crops: int

    def report(self) -> dict:
        return {"detector_hash": self.detector.version_hash,
                "detector_calibration": self.detector_calibration.to_dict(),
                "ood_calibration": self.ood_calibration.to_dict(),
                "autoencoder_crops": self.autoencoder_crops,
                "autoencoder_final_loss": self.cage.autoencoder.loss_history[-1]}


def detection_crops(detector: DetectorModel, records: Sequence[FrameRecord], load: Callable,
                    min_range: float = MIN_OOD_RANGE, threshold: float = 0.0,
                    require_match: bool = False) -> tuple[np.ndarray, list[FrameRecord]]:
    """Background-suppressed crops of the top detection in each frame, as the cage will see them."""
    crops, kept = [], []
    for r in records:
        if r.pixel_box is None or r.actor_distance < min_range:
            continue
        frame = load(r)
        dets = detect(detector, frame, threshold=threshold)
        if not dets:
            continue
        box = dets[0].pixel_box
        if require_match and iou(box, r.pixel_box) < 0.5:
            continue
        try:
            crops.append(stretch_crop(frame, box, detector.background, detector.fg_threshold))
        except ValueError:
            continue
        kept.append(r)
    return (np.stack(crops) if crops else np.zeros((0, 32, 32))), kept


def fit_detector(manifest: DatasetManifest, seed: int = 0) -> DetectorModel:
    """Templates and background from the development training subset; threshold still uncalibrated."""
    train = split_datasets(manifest, seed)["development"].subset("training")
    return train_detector(train, manifest.frame)


def fit_autoencoder(detector: DetectorModel, manifest: DatasetManifest, seed: int = 0,
                    ae_config: AutoencoderConfig | None = None) -> tuple[AutoencoderModel, int]:
    """Autoencoder on matched detection crops of training pedestrians."""
    train = split_datasets(manifest, seed)["development"].subset("training")
    positives = [r for r in train if r.normalized_label is not None]
    x, _ = detection_crops(detector, positives, manifest.frame, require_match=True)
    return train_autoencoder(x, ae_config or AutoencoderConfig(seed=seed)), len(x)


def calibrate_perception(detector: DetectorModel, autoencoder: AutoencoderModel, records: Sequence[FrameRecord],
                         load: Callable, target_fppi: float = 0.001, margin_factor: float = 0.5,
                         camera: CameraModel = CameraModel()) -> tuple[DetectorModel, ConfidenceCalibration,
                                                                       SafetyCage, OodCalibration]:
    """Detector confidence threshold and novelty threshold, both from the given calibration frames."""
    cal = calibrate_confidence(detector, ((load(r), r.pixel_box if r.normalized_label else None) for r in records),
                               target_fppi, margin_factor)
    detector = detector.with_threshold(cal.threshold)
    vx, vrecs = detection_crops(detector, records, load)
    ood = calibrate_ood_threshold(autoencoder, vx, [r.normalized_label is None for r in vrecs])
    cage = SafetyCage(autoencoder, ood.theta, camera, detector.background.astype(np.float64), detector.fg_threshold)
    return detector, cal, cage, ood


def train_perception(manifest: DatasetManifest, seed: int = 0, target_fppi: float = 0.001,
                     margin_factor: float = 0.5, ae_config: AutoencoderConfig | None = None,
                     camera: CameraModel = CameraModel()) -> PerceptionArtifacts:
    """Development split only: detector on training, thresholds on validation."""
    detector = fit_detector(manifest, seed)
    ae, n = fit_autoencoder(detector, manifest, seed, ae_config)
    val = split_datasets(manifest, seed)["development"].subset("validation")
    detector, cal, cage, ood = calibrate_perception(detector, ae, val, manifest.frame, target_fppi,
                                                    margin_factor, camera)
    return PerceptionArtifacts(detector, cal, cage, ood, n)
