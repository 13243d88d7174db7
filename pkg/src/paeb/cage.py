"""Safety cage around the detector: autoencoder novelty check on stretched crops,
threshold calibration, range gating, anomaly latching and plausibility rules.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .imaging import bilinear_crop
from .sensors import CameraModel, PixelBox, RadarTrack

PATCH_SHAPE = (32, 32)
PATCH_SIZE = PATCH_SHAPE[0] * PATCH_SHAPE[1]
MAX_COMPRESSION_RATIO = 0.0334
MIN_OOD_RANGE = 10.0
HEIGHT_RANGE = (0.8, 2.5)
REASONS = ("in-distribution", "ood-rejected", "rule-rejected", "range-exempt", "latched")


class TrainingError(RuntimeError):
    pass


def stretch_crop(frame: np.ndarray, box: PixelBox, background: np.ndarray | None = None,
                 fg_threshold: int = 12) -> np.ndarray:
    """Resample the box to the canonical patch regardless of aspect ratio, values in [0, 1].

    With a background image, pixels that match the empty scene are zeroed first
    so the patch describes the object and not where the horizon cuts it.
    """
    h, w = frame.shape
    if box.width <= 1.0 or box.height <= 1.0:
        raise ValueError(f"box {box.as_tuple()} is too thin to crop")
    if not box.within(w, h):
        raise ValueError(f"box {box.as_tuple()} extends beyond the {w}x{h} frame")
    image = frame.astype(np.float64)
    if background is not None:
        image[np.abs(image - background) <= fg_threshold] = 0.0
    return bilinear_crop(image, box, PATCH_SHAPE) / 255.0


# =============================================================================
# Autoencoder
# =============================================================================


@dataclass(frozen=True)
class AutoencoderConfig:
    layer_sizes: tuple[int, ...] = (PATCH_SIZE, 256, 34, 256, PATCH_SIZE)
    learning_rate: float = 1e-3
    epochs: int = 40
    batch_size: int = 64
    seed: int = 0
    divergence_patience: int = 5

    def __post_init__(self) -> None:
        sizes = self.layer_sizes
        if len(sizes) < 3 or sizes[0] != sizes[-1]:
            raise ValueError("layer sizes must start and end at the input size with a hidden layer between")
        if min(sizes) / sizes[0] > MAX_COMPRESSION_RATIO and sizes[0] == PATCH_SIZE:
            raise ValueError(f"bottleneck {min(sizes)} keeps more than {MAX_COMPRESSION_RATIO:.2%} of the input")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class AutoencoderModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: AutoencoderConfig = AutoencoderConfig()
    loss_history: list[float] = field(default_factory=list)

    @classmethod
    def initialize(cls, config: AutoencoderConfig = AutoencoderConfig()) -> AutoencoderModel:
        rng = np.random.default_rng(config.seed)
        weights, biases = [], []
        for n_in, n_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
            bound = np.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, config)

    @property
    def bottleneck(self) -> int:
        return min(self.config.layer_sizes)

    def _forward(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(_sigmoid(z) if k == last else np.tanh(z))
        return acts

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        flat = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        return self._forward(flat)[-1].reshape(np.shape(x))

    def loss_and_gradients(self, x: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean squared reconstruction error over all elements and its parameter gradients."""
        acts = self._forward(x)
        diff = acts[-1] - x
        loss = float(np.mean(diff * diff))
        delta = 2.0 * diff / diff.size * acts[-1] * (1.0 - acts[-1])
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k].T) * (1.0 - acts[k] * acts[k])
        return loss, gw, gb

    def errors(self, patches: np.ndarray) -> np.ndarray:
        flat = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
        out = self._forward(flat)[-1]
        return np.mean((out - flat) ** 2, axis=1)

    def save(self, path: str | Path, theta: float | None = None) -> None:
        arrays = {f"w{k}": w for k, w in enumerate(self.weights)}
        arrays.update({f"b{k}": b for k, b in enumerate(self.biases)})
        meta = {"config": asdict(self.config), "theta": theta, "loss_history": self.loss_history}
        buf = io.BytesIO()
        np.savez(buf, meta=np.array(json.dumps(meta)), format=np.array("dense-autoencoder/1"), **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> tuple[AutoencoderModel, float | None]:
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != "dense-autoencoder/1":
                raise ValueError(f"{path}: unsupported autoencoder format")
            meta = json.loads(str(z["meta"]))
            cfg = dict(meta["config"])
            cfg["layer_sizes"] = tuple(cfg["layer_sizes"])
            n = len(cfg["layer_sizes"]) - 1
            model = cls([z[f"w{k}"] for k in range(n)], [z[f"b{k}"] for k in range(n)],
                         AutoencoderConfig(**cfg), list(meta["loss_history"]))
        return model, meta["theta"]


def reconstruction_error(model: AutoencoderModel, patch: np.ndarray) -> float:
    return float(model.errors(np.asarray(patch)[None])[0])


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps, self.t = lr, b1, b2, eps, 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1, c2 = 1.0 - self.b1 ** self.t, 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_autoencoder(patches: np.ndarray, config: AutoencoderConfig = AutoencoderConfig(),
                      min_samples: int = 100) -> AutoencoderModel:
    """Minibatch Adam on the mean squared reconstruction error; deterministic given the seed."""
    x = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
    if len(x) < min_samples:
        raise TrainingError(f"need at least {min_samples} crops, got {len(x)}")
    if x.shape[1] != config.layer_sizes[0]:
        raise TrainingError(f"crops have {x.shape[1]} values, the network expects {config.layer_sizes[0]}")
    model = AutoencoderModel.initialize(config)
    params = model.weights + model.biases
    opt = _Adam(params, config.learning_rate)
    rng = np.random.default_rng(config.seed + 1)
    rising = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), config.batch_size):
            batch = x[order[s:s + config.batch_size]]
            loss, gw, gb = model.loss_and_gradients(batch)
            opt.step(params, gw + gb)
            total += loss * len(batch)
        epoch_loss = total / len(x)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"loss became {epoch_loss} in epoch {epoch}")
        if model.loss_history and epoch_loss > model.loss_history[-1]:
            rising += 1
            if rising >= config.divergence_patience:
                raise TrainingError(f"loss rose for {rising} consecutive epochs, last {epoch_loss:.6g}")
        else:
            rising = 0
        model.loss_history.append(epoch_loss)
    return model


# =============================================================================
# Threshold
# =============================================================================


@dataclass(frozen=True)
class OodCalibration:
    theta: float
    validation_outlier_count: int
    rejected_count: int
    samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate_theta(errors: Sequence[float], outlier_count: int) -> OodCalibration:
    """Threshold rejecting (error > theta) as many samples as there are known outliers.

    With ties at the cut the exact count is impossible; the largest theta that
    still rejects at least that many is used and the actual count reported.
    """
    errs = np.sort(np.asarray(errors, dtype=np.float64))[::-1]
    if outlier_count < 1:
        raise ValueError("calibration needs at least one known outlier")
    if outlier_count >= len(errs):
        raise ValueError("calibration needs more samples than outliers")
    theta = float(errs[outlier_count])
    below = errs[errs < errs[outlier_count - 1]]
    if int(np.sum(errs > theta)) < outlier_count:
        theta = float(below[0]) if len(below) else 0.0
    return OodCalibration(theta, outlier_count, int(np.sum(errs > theta)), len(errs))


def calibrate_ood_threshold(model: AutoencoderModel, patches: np.ndarray, outlier_flags: Sequence[bool]) -> OodCalibration:
    flags = np.asarray(outlier_flags, dtype=bool)
    if len(flags) != len(patches):
        raise ValueError("one outlier flag per crop is required")
    return calibrate_theta(model.errors(patches), int(flags.sum()))


# =============================================================================
# Gate
# =============================================================================


@dataclass(frozen=True)
class CageVerdict:
    accepted: bool
    reason: str
    reconstruction_error: float | None = None

    def __post_init__(self) -> None:
        if self.reason not in REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")
        if self.reason in ("latched", "ood-rejected", "rule-rejected") and self.accepted:
            raise ValueError(f"{self.reason} verdicts cannot accept")
        if self.reason == "range-exempt" and self.reconstruction_error is not None:
            raise ValueError("range-exempt verdicts skip the novelty check")


@dataclass
class CageState:
    """Per-scenario memory: once an object is flagged novel it stays rejected."""
    latched: bool = False
    verdicts: list[CageVerdict] = field(default_factory=list)


@dataclass
class SafetyCage:
    autoencoder: AutoencoderModel
    theta: float
    camera: CameraModel = CameraModel()
    background: np.ndarray | None = None
    fg_threshold: int = 12
    min_range: float = MIN_OOD_RANGE
    height_range: tuple[float, float] = HEIGHT_RANGE
    ood_enabled: bool = True

    def without_ood(self) -> SafetyCage:
        """Same cage with the novelty check switched off; range and rule checks stay."""
        return replace(self, ood_enabled=False)

    def implied_height(self, box: PixelBox, track: RadarTrack | None) -> float | None:
        if track is not None:
            depth = track.longitudinal_distance
        elif box.y_max > self.camera.horizon_row:
            depth, _ = self.camera.ground_point((box.x_min + box.x_max) / 2.0, box.y_max)
        else:
            return None
        return box.height * depth / self.camera.fy

    def rule_violation(self, box: PixelBox, track: RadarTrack | None) -> str | None:
        if box.y_max <= self.camera.horizon_row:
            return "box floats above the horizon"
        h = self.implied_height(box, track)
        lo, hi = self.height_range
        if h is not None and not lo <= h <= hi:
            return f"implied height {h:.2f} m outside [{lo}, {hi}] m"
        return None

    def gate(self, detection, frame: np.ndarray, track: RadarTrack | None, state: CageState) -> CageVerdict:
        verdict = self._decide(detection.pixel_box, frame, track, state)
        state.verdicts.append(verdict)
        return verdict

    def _decide(self, box: PixelBox, frame: np.ndarray, track: RadarTrack | None, state: CageState) -> CageVerdict:
        if state.latched:
            return CageVerdict(False, "latched")
        if track is not None and track.longitudinal_distance < self.min_range:
            return CageVerdict(True, "range-exempt")
        if self.rule_violation(box, track):
            return CageVerdict(False, "rule-rejected")
        if not self.ood_enabled:
            return CageVerdict(True, "in-distribution")
        try:
            err = reconstruction_error(self.autoencoder, stretch_crop(frame, box, self.background, self.fg_threshold))
        except ValueError:
            return CageVerdict(False, "rule-rejected")  # too thin to be a pedestrian
        if err > self.theta:
            state.latched = True
            return CageVerdict(False, "ood-rejected", err)
        return CageVerdict(True, "in-distribution", err)

    def save(self, path: str | Path) -> None:
        self.autoencoder.save(path, self.theta)

    @classmethod
    def load(cls, path: str | Path, background: np.ndarray | None = None,
             camera: CameraModel = CameraModel()) -> SafetyCage:
        model, theta = AutoencoderModel.load(path)
        if theta is None:
            raise ValueError(f"{path} carries no calibrated threshold")
        return cls(model, float(theta), camera, background)
