"""Closed-loop scenario execution: radar trigger, camera perception, safety cage, braking."""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cage import CageState, CageVerdict, SafetyCage
from .detector import Detection, DetectorModel, detect
from .scenarios import Scenario
from .sensors import CameraModel, RadarTrack, radar_scan, render_frame
from .world import SimConfig, WorldState, footprint_gap, step_world

OUTCOMES = ("passed", "stopped", "collision", "timeout")


@dataclass(frozen=True)
class Perception:
    detection: Detection | None
    verdict: CageVerdict | None
    identified: bool
    latency_ms: float


@dataclass
class PerceptionPipeline:
    """Detector followed by the safety cage; a pedestrian is identified only if both accept."""
    detector: DetectorModel
    cage: SafetyCage | None = None
    camera: CameraModel = CameraModel()

    def new_state(self) -> CageState:
        return CageState()

    def perceive(self, frame: np.ndarray, track: RadarTrack | None, state: CageState) -> Perception:
        start = time.perf_counter()
        dets = detect(self.detector, frame)
        top = dets[0] if dets else None
        verdict = None
        if top is not None and self.cage is not None:
            verdict = self.cage.gate(top, frame, track, state)
        identified = top is not None and (verdict is None or verdict.accepted)
        return Perception(top, verdict, identified, (time.perf_counter() - start) * 1000.0)


@dataclass(frozen=True)
class FrameLog:
    time: float
    ego_position: float
    ego_speed: float
    actor_x: float | None
    actor_y: float | None
    gap: float | None
    radar_distance: float | None
    ttc: float | None
    collision_course: bool
    triggered: bool
    detection_box: tuple[float, float, float, float] | None
    confidence: float | None
    cage_reason: str | None
    identified: bool
    braking: bool


@dataclass(frozen=True)
class SystemMetrics:
    min_dist: float | None
    time_trig: float | None
    dist_trig: float | None
    time_brake: float | None
    dist_brake: float | None
    coll: bool
    coll_speed: float | None

    def __post_init__(self) -> None:
        if self.time_brake is not None and self.time_trig is not None and self.time_brake < self.time_trig:
            raise ValueError("braking cannot precede the trigger")
        if not self.coll and self.coll_speed is not None:
            raise ValueError("collision speed given without a collision")


@dataclass
class ScenarioTrace:
    scenario_id: str
    actor_class: str | None
    frames: list[FrameLog]
    outcome: str
    metrics: SystemMetrics
    latencies_ms: list[float] = field(default_factory=list)

    @property
    def braked(self) -> bool:
        return self.metrics.time_brake is not None

    def to_dict(self) -> dict:
        return {"scenario_id": self.scenario_id, "actor_class": self.actor_class, "outcome": self.outcome,
                "metrics": asdict(self.metrics), "frames": [asdict(f) for f in self.frames]}

    def to_json(self) -> str:
        """Canonical serialization; wall-clock latencies are left out so it is reproducible."""
        return json.dumps(self.to_dict(), sort_keys=True)


def _radar_rng(config: SimConfig, scenario_id: str) -> np.random.Generator | None:
    if config.radar_noise_std <= 0:
        return None
    return np.random.default_rng([config.seed, zlib.crc32(scenario_id.encode())])


def _passed(state: WorldState) -> bool:
    actor = state.actor
    return actor is not None and actor.x + actor.radius < state.ego.rear


def run_scenario(scenario: Scenario, pipeline: PerceptionPipeline, config: SimConfig = SimConfig(),
                 gait_phase: float = 0.0) -> ScenarioTrace:
    """Simulate one encounter at the camera rate until the actor is behind the ego, the ego
    has stopped, a collision happens or the time budget runs out."""
    if abs(config.dt * pipeline.camera.fps - 1.0) > 1e-9:
        raise ValueError(f"dt {config.dt} does not match the {pipeline.camera.fps} FPS camera")
    state = scenario.initial_state(config, gait_phase)
    cage_state = pipeline.new_state()
    rng = _radar_rng(config, scenario.id)
    frames: list[FrameLog] = []
    latencies: list[float] = []
    coll_speed = None
    n_steps = int(round(config.timeout / config.dt))
    outcome = "timeout"
    for k in range(n_steps + 1):
        tracks = radar_scan(state, config.radar_range, config.radar_noise_std, rng, config.corridor_margin)
        track = tracks[0] if tracks else None
        ttc = track.ttc if track else None
        course = bool(track and track.collision_course)
        triggered = bool(course and ttc is not None and ttc < config.ttc_threshold)
        seen = None
        if triggered:
            seen = pipeline.perceive(render_frame(state, pipeline.camera), track, cage_state)
            latencies.append(seen.latency_ms)
            if seen.identified and not state.ego.braking_active:
                state = replace(state, ego=replace(state.ego, braking_active=True))
        actor = state.actor
        det = seen.detection if seen else None
        frames.append(FrameLog(
            round(k * config.dt, 6), state.ego.position, state.ego.speed,
            actor.x if actor else None, actor.y if actor else None,
            footprint_gap(state.ego, actor) if actor else None,
            track.longitudinal_distance if track else None, ttc, course, triggered,
            det.pixel_box.as_tuple() if det else None, det.confidence if det else None,
            seen.verdict.reason if seen and seen.verdict else None,
            bool(seen and seen.identified), state.ego.braking_active))
        if state.collided:
            outcome = "collision"
            break
        if _passed(state):
            outcome = "passed"
            break
        if state.ego.speed == 0.0 and (state.ego.braking_active or actor is None or k > 0):
            outcome = "stopped"
            break
        if k == n_steps:
            break
        state = step_world(state, config.dt)
        if state.collided:
            coll_speed = state.ego.speed
    return ScenarioTrace(scenario.id, scenario.actor_class, frames, outcome,
                         _metrics(frames, outcome, coll_speed), latencies)


def _metrics(frames: list[FrameLog], outcome: str, coll_speed: float | None) -> SystemMetrics:
    gaps = [f.gap for f in frames if f.gap is not None]
    trig = next((f for f in frames if f.triggered), None)
    brake = next((f for f in frames if f.braking), None)
    coll = outcome == "collision"
    return SystemMetrics(
        max(0.0, min(gaps)) if gaps else None,
        trig.time if trig else None, trig.gap if trig else None,
        brake.time if brake else None, brake.gap if brake else None,
        coll, coll_speed if coll else None)
