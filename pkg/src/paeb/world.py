"""Straight-road world with one ego car and at most one actor.

Coordinates: x runs forward along the road, y is lateral with positive to the
right of the ego car, z is up. The ego position is the x of its front bumper.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

PEDESTRIAN_CLASSES = ("P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8")
SHAPE_CLASSES = ("N1", "N2", "N3", "N4", "N5")
MAX_ACTOR_SPEED = 4.17  # 15 km/h
GAIT_STRIDE = 1.4  # meters walked per full gait cycle


@dataclass(frozen=True)
class ActorSpec:
    description: str
    height: float
    base_width: float


ACTOR_SPECS: dict[str, ActorSpec] = {
    "P1": ActorSpec("female, casual clothing", 1.65, 0.47),
    "P2": ActorSpec("male, casual clothing", 1.80, 0.52),
    "P3": ActorSpec("female, business casual", 1.62, 0.46),
    "P4": ActorSpec("male, business casual", 1.78, 0.52),
    "P5": ActorSpec("female, business suit", 1.68, 0.47),
    "P6": ActorSpec("male, business suit", 1.83, 0.53),
    "P7": ActorSpec("child", 1.25, 0.35),
    "P8": ActorSpec("male, construction worker", 1.76, 0.55),
    "N1": ActorSpec("sphere", 0.85, 0.85),
    "N2": ActorSpec("cube", 0.85, 0.85),
    "N3": ActorSpec("cone", 0.90, 0.60),
    "N4": ActorSpec("pyramid", 0.90, 0.90),
    "N5": ActorSpec("cylinder", 1.00, 0.50),
}


def is_pedestrian(class_id: str | None) -> bool:
    return class_id in PEDESTRIAN_CLASSES


# =============================================================================
# State types
# =============================================================================


@dataclass(frozen=True)
class EgoVehicle:
    position: float = 0.0
    speed: float = 0.0
    width: float = 1.9
    length: float = 4.7
    max_deceleration: float = 7.85
    braking_active: bool = False

    def __post_init__(self) -> None:
        if self.speed < 0:
            raise ValueError(f"ego speed must be >= 0, got {self.speed}")
        if self.width <= 0 or self.length <= 0 or self.max_deceleration <= 0:
            raise ValueError("ego width, length and max_deceleration must be > 0")

    @property
    def rear(self) -> float:
        return self.position - self.length


@dataclass(frozen=True)
class Actor:
    class_id: str
    x: float
    y: float
    heading: float  # degrees from +x, 90 = moving toward +y
    speed: float
    height: float
    base_width: float
    gait_phase: float = 0.0

    def __post_init__(self) -> None:
        if self.class_id not in ACTOR_SPECS:
            raise ValueError(f"unknown actor class {self.class_id!r}")
        if not 0.0 <= self.speed <= MAX_ACTOR_SPEED + 1e-9:
            raise ValueError(f"actor speed {self.speed} outside [0, {MAX_ACTOR_SPEED}]")

    @classmethod
    def create(
        cls, class_id: str, x: float, y: float, heading: float = 0.0,
        speed: float = 0.0, gait_phase: float = 0.0,
    ) -> Actor:
        spec = ACTOR_SPECS[class_id]
        return cls(class_id, x, y, heading, speed, spec.height, spec.base_width, gait_phase)

    @property
    def world_position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def radius(self) -> float:
        return self.base_width / 2.0

    def velocity(self) -> tuple[float, float]:
        h = math.radians(self.heading)
        return (self.speed * math.cos(h), self.speed * math.sin(h))


@dataclass(frozen=True)
class WorldState:
    ego: EgoVehicle = field(default_factory=EgoVehicle)
    actor: Actor | None = None
    time: float = 0.0
    road_half_width: float = 1.5
    collided: bool = False


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    max_deceleration: float = 7.85
    ego_width: float = 1.9
    ego_length: float = 4.7
    road_half_width: float = 1.5
    timeout: float = 30.0
    ttc_threshold: float = 4.0
    corridor_margin: float = 0.2
    radar_range: float = 200.0
    radar_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.timeout <= 0:
            raise ValueError("dt and timeout must be > 0")
        if self.max_deceleration <= 0:
            raise ValueError("max_deceleration must be > 0")

    @classmethod
    def from_dict(cls, data: dict) -> SimConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> SimConfig:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        return cls.from_dict(data.get("sim", data))

    def to_dict(self) -> dict:
        return asdict(self)

    def make_ego(self, speed: float, position: float = 0.0) -> EgoVehicle:
        return EgoVehicle(position, speed, self.ego_width, self.ego_length, self.max_deceleration)


# =============================================================================
# Dynamics
# =============================================================================


def stopping_distance(speed: float, deceleration: float) -> float:
    if deceleration <= 0:
        raise ValueError(f"deceleration must be > 0, got {deceleration}")
    if speed < 0:
        raise ValueError(f"speed must be >= 0, got {speed}")
    return speed * speed / (2.0 * deceleration)


def advance_actor(actor: Actor, dt: float) -> Actor:
    vx, vy = actor.velocity()
    phase = actor.gait_phase + 2.0 * math.pi * actor.speed * dt / GAIT_STRIDE
    return replace(actor, x=actor.x + vx * dt, y=actor.y + vy * dt,
                   gait_phase=math.fmod(phase, 2.0 * math.pi))


def footprint_gap(ego: EgoVehicle, actor: Actor) -> float:
    """Distance from the actor center to the ego rectangle minus the actor radius."""
    cx = min(max(actor.x, ego.rear), ego.position)
    cy = min(max(actor.y, -ego.width / 2.0), ego.width / 2.0)
    return math.hypot(actor.x - cx, actor.y - cy) - actor.radius


def detect_collision(state: WorldState) -> bool:
    if state.actor is None:
        return False
    # open contact: touching boundaries do not count
    return footprint_gap(state.ego, state.actor) < 0.0


def step_world(state: WorldState, dt: float) -> WorldState:
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if state.collided:
        return state
    ego = state.ego
    speed = ego.speed
    if ego.braking_active:
        speed = max(0.0, speed - ego.max_deceleration * dt)
    ego = replace(ego, position=ego.position + ego.speed * dt, speed=speed)
    actor = advance_actor(state.actor, dt) if state.actor is not None else None
    new = replace(state, time=state.time + dt, ego=ego, actor=actor)
    if detect_collision(new):
        new = replace(new, collided=True)
    return new
