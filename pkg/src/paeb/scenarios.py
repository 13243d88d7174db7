"""Scenario catalog: data-generation grids, operational classes, pairwise suites, jitter."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .sensors import CameraModel, project_bbox, radar_scan
from .world import (
    ACTOR_SPECS, MAX_ACTOR_SPEED, PEDESTRIAN_CLASSES, SHAPE_CLASSES, Actor, SimConfig, WorldState,
    is_pedestrian, step_world,
)

GROUPS = ("A", "B", "C", "D", "OOD", "OPS", "EMPTY")
PURPOSES = ("data-generation", "system-test")
CROSSING_START = 6.5  # 5 m beyond the road edge
MIN_DISTANCE = 5.0


@dataclass(frozen=True)
class Scenario:
    id: str
    actor_class: str | None
    group: str
    actor_speed: float
    crossing_angle: float  # degrees between actor velocity and the ego's forward axis
    longitudinal_distance: float
    lateral_start: float
    ego_speed: float
    purpose: str
    travel_distance: float | None = None
    labels: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}")
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")
        if self.actor_class is not None and self.actor_class not in ACTOR_SPECS:
            raise ValueError(f"unknown actor class {self.actor_class!r}")
        if not 0.0 <= self.actor_speed <= MAX_ACTOR_SPEED + 1e-9:
            raise ValueError(f"actor speed {self.actor_speed} outside [0, {MAX_ACTOR_SPEED}]")
        if self.purpose == "data-generation" and self.ego_speed != 0.0:
            raise ValueError("data-generation scenarios keep the ego stationary")
        if self.purpose == "system-test" and self.ego_speed <= 0.0:
            raise ValueError("system-test scenarios need a moving ego")

    @property
    def lateral_direction(self) -> int:
        return 1 if self.lateral_start <= 0 else -1

    @property
    def heading(self) -> float:
        return self.lateral_direction * self.crossing_angle

    @property
    def label_map(self) -> dict[str, str]:
        return dict(self.labels)

    def duration(self, config: SimConfig) -> float:
        if self.travel_distance is None or self.actor_speed == 0:
            return config.timeout
        return self.travel_distance / self.actor_speed

    def initial_state(self, config: SimConfig, gait_phase: float = 0.0) -> WorldState:
        actor = None
        if self.actor_class is not None:
            actor = Actor.create(self.actor_class, self.longitudinal_distance, self.lateral_start,
                                 self.heading, self.actor_speed, gait_phase)
        return WorldState(ego=config.make_ego(self.ego_speed), actor=actor,
                          road_half_width=config.road_half_width)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = [list(p) for p in self.labels]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        data = dict(data)
        data["labels"] = tuple(tuple(p) for p in data.get("labels", ()))
        return cls(**data)


def save_suite(scenarios: Sequence[Scenario], path: str | Path) -> None:
    doc = {"schema": "scenario-suite/1", "scenarios": [s.to_dict() for s in scenarios]}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_suite(path: str | Path) -> list[Scenario]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != "scenario-suite/1":
        raise ValueError(f"{path}: unsupported suite schema {doc.get('schema')!r}")
    return [Scenario.from_dict(s) for s in doc["scenarios"]]


# =============================================================================
# Data-generation grids
# =============================================================================

SPEEDS = (1.0, 2.0, 3.0, 4.0)
ANGLES = (30.0, 50.0, 70.0, 90.0, 110.0, 130.0, 150.0)
DISTANCES = tuple(float(d) for d in range(10, 101, 10))
OFFSETS = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
PARALLEL_TRAVEL = 90.0
OOD_SPEED = 4.0


def _check_scale(scale: float) -> None:
    if not (isinstance(scale, (int, float)) and 0.0 < scale <= 1.0):
        raise ValueError(f"scale must be in (0, 1], got {scale!r}")


def stratified_subset(grid: Sequence[tuple], scale: float) -> list[int]:
    """Indices of a deterministic subset that keeps every marginal value of the grid."""
    _check_scale(scale)
    n_total = len(grid)
    if scale == 1.0 or n_total == 0:
        return list(range(n_total))
    dims = len(grid[0])
    marginals = [sorted({g[i] for g in grid}) for i in range(dims)]
    n = min(n_total, max(math.ceil(scale * n_total), max(len(m) for m in marginals)))
    uncovered = [set(m) for m in marginals]
    chosen: list[int] = []
    taken = np.zeros(n_total, dtype=bool)
    # greedy cover of marginal values, earliest grid point on ties
    while any(uncovered) and len(chosen) < n:
        gains = [-1 if taken[i] else sum(g[d] in uncovered[d] for d in range(dims))
                 for i, g in enumerate(grid)]
        best = int(np.argmax(gains))
        chosen.append(best)
        taken[best] = True
        for d in range(dims):
            uncovered[d].discard(grid[best][d])
    # fill the remainder evenly across the grid order
    rest = np.flatnonzero(~taken)
    k = n - len(chosen)
    if k > 0:
        picks = rest[np.round(np.linspace(0, len(rest) - 1, k)).astype(int)]
        chosen.extend(int(i) for i in picks)
    return sorted(set(chosen))


def _fmt(v: float) -> str:
    return f"{v:g}"


def crossing_travel(angle: float) -> float:
    return 2.0 * CROSSING_START / math.sin(math.radians(angle))


def enumerate_positive_grid(scale: float = 1.0, classes: Sequence[str] = PEDESTRIAN_CLASSES) -> list[Scenario]:
    _check_scale(scale)
    crossing = list(itertools.product(SPEEDS, ANGLES, DISTANCES))
    parallel = list(itertools.product(SPEEDS, OFFSETS))
    out: list[Scenario] = []
    for cls in classes:
        if not is_pedestrian(cls):
            raise ValueError(f"{cls} is not a pedestrian class")
        for group, side in (("A", -1.0), ("B", 1.0)):
            for i in stratified_subset(crossing, scale):
                v, a, d = crossing[i]
                out.append(Scenario(
                    f"{cls}-{group}-v{_fmt(v)}-a{_fmt(a)}-d{_fmt(d)}", cls, group, v, a, d,
                    side * CROSSING_START, 0.0, "data-generation", crossing_travel(a)))
        for group, start, angle in (("C", 100.0, 180.0), ("D", 10.0, 0.0)):
            for i in stratified_subset(parallel, scale):
                v, off = parallel[i]
                out.append(Scenario(
                    f"{cls}-{group}-v{_fmt(v)}-o{_fmt(off)}", cls, group, v, angle, start, off, 0.0,
                    "data-generation", PARALLEL_TRAVEL))
    return out


def enumerate_ood_grid(scale: float = 1.0, classes: Sequence[str] = SHAPE_CLASSES) -> list[Scenario]:
    _check_scale(scale)
    grid = list(itertools.product(("left", "right"), DISTANCES))
    out = []
    for cls in classes:
        if is_pedestrian(cls):
            raise ValueError(f"{cls} is not a shape class")
        for i in stratified_subset(grid, scale):
            side, d = grid[i]
            start = -CROSSING_START if side == "left" else CROSSING_START
            out.append(Scenario(f"{cls}-OOD-{side}-d{_fmt(d)}", cls, "OOD", OOD_SPEED, 90.0, d, start,
                                0.0, "data-generation", crossing_travel(90.0)))
    return out


# =============================================================================
# Equivalence classes
# =============================================================================


@dataclass(frozen=True)
class EquivalenceClass:
    label: str
    value: float | str
    low: float | None = None
    high: float | None = None


@dataclass(frozen=True)
class Dimension:
    name: str
    classes: tuple[EquivalenceClass, ...]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.classes)

    def get(self, label: str) -> EquivalenceClass:
        for c in self.classes:
            if c.label == label:
                return c
        raise KeyError(f"{self.name} has no class {label!r}")


@dataclass(frozen=True)
class EquivalenceClassSet:
    name: str
    dimensions: tuple[Dimension, ...]
    kind: str | None = None  # pedestrian | object, enables concretization

    def __post_init__(self) -> None:
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")
        for d in self.dimensions:
            if not d.classes:
                raise ValueError(f"dimension {d.name!r} is empty")
            if len(set(d.labels)) != len(d.labels):
                raise ValueError(f"dimension {d.name!r} has duplicate labels")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    def dimension(self, name: str) -> Dimension:
        return self.dimensions[self.names.index(name)]

    @classmethod
    def simple(cls, name: str, dims: dict[str, Sequence[str]]) -> EquivalenceClassSet:
        return cls(name, tuple(Dimension(k, tuple(EquivalenceClass(l, l) for l in v)) for k, v in dims.items()))


def cartesian_count(classes: EquivalenceClassSet) -> int:
    return math.prod(len(d.classes) for d in classes.dimensions)


def _ec(label, value, low=None, high=None):
    return EquivalenceClass(label, value, low, high)


_LATERAL = Dimension("lateral", (_ec("left", -5.0), _ec("center", 0.0), _ec("right", 5.0)))
_DISTANCE = Dimension("distance", (_ec("close", 15.0, None, 25.0), _ec("medium", 37.5, 25.0, 50.0),
                                   _ec("far", 75.0, 50.0, None)))
_SPEED = Dimension("speed", (_ec("stationary", 0.0), _ec("slow", 1.0), _ec("fast", 3.0)))
_EGO = Dimension("ego_speed", (_ec("slow", 7.5, None, 10.0), _ec("medium", 12.5, 10.0, 15.0),
                               _ec("fast", 17.5, 15.0, 20.0)))

# crossing angle measured from the direction toward the ego car
PEDESTRIAN_CLASS_SET = EquivalenceClassSet("pedestrian", (
    _LATERAL, _DISTANCE,
    Dimension("appearance", tuple(_ec(c, c) for c in ("P1", "P4", "P6", "P5", "P7", "P8"))),
    _SPEED,
    Dimension("angle", (_ec("towards", 0.0), _ec("diagonal_towards", 45.0), _ec("perpendicular", 90.0),
                        _ec("diagonal_away", 135.0), _ec("away", 180.0))),
    _EGO,
), kind="pedestrian")

OBJECT_CLASS_SET = EquivalenceClassSet("object", (
    _LATERAL, _DISTANCE,
    Dimension("appearance", tuple(_ec(c, c) for c in ("N1", "N2", "N3", "N4"))),
    _SPEED, _EGO,
), kind="object")

# candidate concrete values tried, smallest first, to force a collision
CONCRETE_DISTANCES = {
    "close": (15.0, 17.5, 20.0, 22.5),
    "medium": (27.5, 30.0, 35.0, 40.0, 45.0, 50.0),
    "far": (55.0, 60.0, 70.0, 80.0, 90.0),
}
CONCRETE_EGO_SPEEDS = {
    "slow": (5.0, 6.0, 7.0, 8.0, 9.0),
    "medium": (10.5, 11.5, 12.5, 13.5, 14.5),
    "fast": (15.5, 16.5, 17.5, 18.5, 19.5),
}


# =============================================================================
# Pairwise covering arrays
# =============================================================================

Row = tuple[str, ...]
MAX_ENUMERATION = 500_000


def _pair_index(sizes: Sequence[int]) -> tuple[dict[tuple[int, int], int], int]:
    offsets, total = {}, 0
    for i, j in itertools.combinations(range(len(sizes)), 2):
        offsets[(i, j)] = total
        total += sizes[i] * sizes[j]
    return offsets, total


def _pair_ids(idx: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    offsets, _ = _pair_index(sizes)
    cols = [offsets[(i, j)] + idx[:, i] * sizes[j] + idx[:, j] for (i, j) in offsets]
    return np.stack(cols, axis=1)


def all_rows(classes: EquivalenceClassSet) -> list[Row]:
    return list(itertools.product(*(d.labels for d in classes.dimensions)))


def covering_rows(
    classes: EquivalenceClassSet, seed: int = 0,
    allowed: Callable[[Row], bool] | Sequence[bool] | None = None,
    seed_rows: Sequence[Row] = (),
) -> list[Row]:
    """Greedy pairwise covering array over the enumerated cartesian product.

    Each step takes the allowed row covering the most uncovered value pairs, with
    ties broken by a seeded generator. Only pairs reachable by some allowed row
    are targeted.
    """
    dims = classes.dimensions
    if len(dims) < 2:
        raise ValueError("pairwise generation needs at least two dimensions")
    sizes = [len(d.classes) for d in dims]
    if math.prod(sizes) > MAX_ENUMERATION:
        raise ValueError(f"cartesian product {math.prod(sizes)} too large to enumerate")
    rows = all_rows(classes)
    idx = np.array(list(itertools.product(*(range(s) for s in sizes))), dtype=np.int64)
    if allowed is None:
        mask = np.ones(len(rows), dtype=bool)
    elif callable(allowed):
        mask = np.array([bool(allowed(r)) for r in rows], dtype=bool)
    else:
        mask = np.asarray(allowed, dtype=bool)
    ids = _pair_ids(idx, sizes)[mask]
    cand = np.flatnonzero(mask)
    _, total = _pair_index(sizes)
    covered = np.ones(total, dtype=bool)
    covered[np.unique(ids)] = False  # only reachable pairs are targets
    rng = np.random.default_rng(seed)
    row_pos = {r: i for i, r in enumerate(rows)}
    chosen: list[int] = []
    for r in seed_rows:
        i = row_pos[tuple(r)]
        if not mask[i]:
            raise ValueError(f"seed row {r} is not allowed")
        chosen.append(i)
        covered[_pair_ids(idx[i:i + 1], sizes)[0]] = True
    while not covered.all():
        gain = (~covered[ids]).sum(axis=1)
        best = gain.max()
        if best == 0:
            break
        tied = np.flatnonzero(gain == best)
        pick = int(tied[rng.integers(len(tied))])
        chosen.append(int(cand[pick]))
        covered[ids[pick]] = True
    return [rows[i] for i in chosen]


def pair_coverage(classes: EquivalenceClassSet, rows: Sequence[Row],
                  universe: set | None = None) -> tuple[int, int, list]:
    """Exhaustive check of which cross-dimension value pairs the rows contain."""
    dims = classes.dimensions
    if universe is None:
        universe = {((i, a), (j, b)) for i, j in itertools.combinations(range(len(dims)), 2)
                    for a in dims[i].labels for b in dims[j].labels}
    seen = set()
    for row in rows:
        for i, j in itertools.combinations(range(len(dims)), 2):
            seen.add(((i, row[i]), (j, row[j])))
    missing = sorted(universe - seen)
    return len(universe) - len(missing), len(universe), missing


def pairs_of(classes: EquivalenceClassSet, rows: Sequence[Row]) -> set:
    out = set()
    for row in rows:
        for i, j in itertools.combinations(range(len(classes.dimensions)), 2):
            out.add(((i, row[i]), (j, row[j])))
    return out


# =============================================================================
# Collision-forcing concretization
# =============================================================================


@dataclass(frozen=True)
class Screening:
    collides: np.ndarray
    trigger_frame: np.ndarray  # -1 when never triggered before collision or timeout
    collision_frame: np.ndarray
    visible_at_trigger: np.ndarray

    @property
    def feasible(self) -> np.ndarray:
        return self.collides & (self.trigger_frame >= 0) & self.visible_at_trigger


def _scenario_arrays(scenarios: Sequence[Scenario]) -> dict[str, np.ndarray]:
    cols: dict[str, list] = {k: [] for k in ("ego", "d", "y", "vx", "vy", "r", "h", "w")}
    for s in scenarios:
        spec = ACTOR_SPECS[s.actor_class]
        a = Actor.create(s.actor_class, s.longitudinal_distance, s.lateral_start, s.heading, s.actor_speed)
        vx, vy = a.velocity()
        for k, v in zip(cols, (s.ego_speed, s.longitudinal_distance, s.lateral_start, vx, vy,
                               spec.base_width / 2.0, spec.height, spec.base_width)):
            cols[k].append(v)
    return {k: np.asarray(v, dtype=float) for k, v in cols.items()}


def screen_no_brake(scenarios: Sequence[Scenario], config: SimConfig = SimConfig(),
                    camera: CameraModel = CameraModel()) -> Screening:
    """Vectorized no-brake rollout mirroring step_world and radar_scan."""
    n = len(scenarios)
    a = _scenario_arrays(scenarios)
    ego_pos = np.zeros(n)
    ax, ay = a["d"].copy(), a["y"].copy()
    half_w = config.ego_width / 2.0
    corridor = half_w + a["r"] + config.corridor_margin
    trigger = np.full(n, -1, dtype=np.int64)
    collision = np.full(n, -1, dtype=np.int64)
    visible = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    steps = int(round(config.timeout / config.dt))
    spread = 1.4 * a["w"]  # widest gait pose
    for k in range(steps + 1):
        live = ~done
        dist = ax - ego_pos
        closing = a["ego"] - a["vx"]
        ok = live & (closing > 0) & (dist > 0) & (dist <= config.radar_range)
        with np.errstate(divide="ignore", invalid="ignore"):
            ttc = np.where(ok, dist / np.where(closing > 0, closing, 1.0), np.inf)
            pred = ay + a["vy"] * ttc
        fire = ok & (ttc < config.ttc_threshold) & (np.abs(pred) <= corridor) & (trigger < 0)
        if fire.any():
            trigger[fire] = k
            with np.errstate(divide="ignore", invalid="ignore"):
                u0 = camera.cx + camera.fx * (ay - spread / 2) / dist
                u1 = camera.cx + camera.fx * (ay + spread / 2) / dist
                v0 = camera.cy + camera.fy * (camera.mount_height - a["h"]) / dist
                v1 = camera.cy + camera.fy * camera.mount_height / dist
            inside = (u0 > 0) & (u1 < camera.image_width) & (v0 > 0) & (v1 < camera.image_height)
            visible[fire] = inside[fire]
        if k == steps:
            break
        ego_pos = ego_pos + a["ego"] * config.dt
        ax = ax + a["vx"] * config.dt
        ay = ay + a["vy"] * config.dt
        cx = np.clip(ax, ego_pos - config.ego_length, ego_pos)
        cy = np.clip(ay, -half_w, half_w)
        hit = live & (np.hypot(ax - cx, ay - cy) - a["r"] < 0.0)
        collision[hit] = k + 1
        done |= hit
    return Screening(collision >= 0, np.where(collision >= 0, trigger, -1), collision, visible)


def verify_no_brake(scenario: Scenario, config: SimConfig = SimConfig(),
                    camera: CameraModel = CameraModel()) -> tuple[bool, int | None, bool]:
    """Scalar rollout with the world and sensor models: (collides, trigger frame, visible)."""
    state = scenario.initial_state(config)
    trigger, visible = None, False
    steps = int(round(config.timeout / config.dt))
    for k in range(steps + 1):
        tracks = radar_scan(state, config.radar_range, corridor_margin=config.corridor_margin)
        if trigger is None and tracks and tracks[0].ttc is not None \
                and tracks[0].ttc < config.ttc_threshold and tracks[0].collision_course:
            trigger = k
            box = project_bbox(state.actor, camera, state.ego)
            visible = box is not None and not box.occluded
        if k == steps:
            break
        state = step_world(state, config.dt)
        if state.collided:
            return True, trigger, visible
    return False, None, False


def _labels_of(classes: EquivalenceClassSet, row: Row) -> tuple[tuple[str, str], ...]:
    return tuple(zip(classes.names, row))


def row_to_scenario(classes: EquivalenceClassSet, row: Row, distance: float, ego_speed: float,
                    case_id: str = "") -> Scenario:
    lab = dict(zip(classes.names, row))
    lateral = classes.dimension("lateral").get(lab["lateral"]).value
    speed = classes.dimension("speed").get(lab["speed"]).value
    if classes.kind == "pedestrian":
        toward = classes.dimension("angle").get(lab["angle"]).value
        crossing = 180.0 - toward
    else:
        crossing = 90.0
    rid = case_id or "OPS-" + "-".join(row)
    return Scenario(rid, lab["appearance"], "OPS", float(speed), float(crossing), float(distance),
                    float(lateral), float(ego_speed), "system-test", None, _labels_of(classes, row))


def candidate_pairs(row_labels: dict[str, str]) -> list[tuple[float, float]]:
    return [(v, d) for v in CONCRETE_EGO_SPEEDS[row_labels["ego_speed"]]
            for d in CONCRETE_DISTANCES[row_labels["distance"]]]


@dataclass
class FeasibilityTable:
    classes: EquivalenceClassSet
    rows: list[Row]
    feasible: np.ndarray  # per row
    choice: list[tuple[float, float] | None]  # smallest collision-forcing (ego_speed, distance)


def feasibility_table(classes: EquivalenceClassSet, config: SimConfig = SimConfig(),
                      camera: CameraModel = CameraModel()) -> FeasibilityTable:
    if classes.kind not in ("pedestrian", "object"):
        raise ValueError("concretization needs an operational class set")
    rows = all_rows(classes)
    flat, owner = [], []
    for r_i, row in enumerate(rows):
        for v, d in candidate_pairs(dict(zip(classes.names, row))):
            flat.append(row_to_scenario(classes, row, d, v))
            owner.append(r_i)
    ok = screen_no_brake(flat, config, camera).feasible
    choice: list[tuple[float, float] | None] = [None] * len(rows)
    for i, r_i in enumerate(owner):
        if ok[i] and choice[r_i] is None:
            choice[r_i] = (flat[i].ego_speed, flat[i].longitudinal_distance)
    return FeasibilityTable(classes, rows, np.array([c is not None for c in choice]), choice)


def concretize(classes: EquivalenceClassSet, row: Row, config: SimConfig = SimConfig(),
               camera: CameraModel = CameraModel(), case_id: str = "",
               table: FeasibilityTable | None = None) -> Scenario:
    """Smallest (ego speed, distance) candidate that collides without braking, triggers first, and is visible."""
    pairs = candidate_pairs(dict(zip(classes.names, row)))
    if table is not None:
        pick = table.choice[table.rows.index(tuple(row))]
        pairs = [pick] if pick is not None else []
    for v, d in pairs:
        s = row_to_scenario(classes, row, d, v, case_id)
        collides, trig, vis = verify_no_brake(s, config, camera)
        if collides and trig is not None and vis:
            return s
    raise ValueError(f"row {row} cannot be made collision-forcing")


# head-on rows kept in every pedestrian suite: one fast runner, one slow approach
ANCHOR_ROWS = (
    ("center", "close", "P5", "fast", "towards", "fast"),
    ("center", "close", "P1", "fast", "towards", "medium"),
)
ANCHOR_CONCRETE = {ANCHOR_ROWS[0]: (16.0, 20.0), ANCHOR_ROWS[1]: (11.0, 10.0)}


def generate_pairwise(classes: EquivalenceClassSet, seed: int = 0, config: SimConfig = SimConfig(),
                      camera: CameraModel = CameraModel(), id_prefix: str = "TC-OS",
                      first_index: int = 1, anchors: bool = True, complete: bool = True) -> list[Scenario]:
    """Pairwise suite for an operational class set.

    Collision-forcing rows come first and carry every pair some collision-forcing row can carry.
    With complete=True, rows for the remaining pairs follow under ids "<prefix>-NC<k>"; they are
    concretized at the smallest candidate (ego speed, distance) and cannot force a collision.
    """
    table = feasibility_table(classes, config, camera)
    seeds = [r for r in ANCHOR_ROWS] if anchors and classes.kind == "pedestrian" else []
    rows = covering_rows(classes, seed, allowed=table.feasible, seed_rows=seeds)
    out = []
    for n, row in enumerate(rows):
        cid = f"{id_prefix}-{first_index + n}"
        if row in ANCHOR_CONCRETE and anchors:
            v, d = ANCHOR_CONCRETE[row]
            out.append(row_to_scenario(classes, row, d, v, cid))
        else:
            out.append(concretize(classes, row, config, camera, cid, table))
    if complete:
        extra = covering_rows(classes, seed, seed_rows=rows)[len(rows):]
        for k, row in enumerate(extra, start=1):
            v, d = candidate_pairs(dict(zip(classes.names, row)))[0]
            out.append(row_to_scenario(classes, row, d, v, f"{id_prefix}-NC{k}"))
    return out


def apply_jitter(scenario: Scenario, seed: int, low: float = 0.9, high: float = 1.1) -> Scenario:
    rng = np.random.default_rng(seed)
    f = rng.uniform(low, high, size=5)
    angle = min(180.0, max(0.0, scenario.crossing_angle * f[1]))
    return replace(
        scenario,
        id=f"{scenario.id}~j{seed}",
        actor_speed=min(MAX_ACTOR_SPEED, scenario.actor_speed * f[0]),
        crossing_angle=angle,
        longitudinal_distance=max(MIN_DISTANCE, scenario.longitudinal_distance * f[2]),
        lateral_start=scenario.lateral_start * f[3],
        ego_speed=scenario.ego_speed * f[4],
    )
