"""Pinhole camera with a flat-road rasterizer, and an idealized forward radar.

Image coordinates are continuous with the origin at the top-left corner of
pixel (0, 0); pixel (row i, col j) covers [j, j+1) x [i, i+1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .world import Actor, EgoVehicle, WorldState, is_pedestrian

Frame = np.ndarray  # uint8, shape (height, width)

MIN_DEPTH = 0.5


@dataclass(frozen=True)
class CameraModel:
    image_width: int = 752
    image_height: int = 480
    sensor_width: float = 0.0313
    sensor_height: float = 0.0200
    focal_length: float = 0.0373
    mount_height: float = 1.2
    fps: int = 10

    @property
    def fx(self) -> float:
        return self.focal_length * self.image_width / self.sensor_width

    @property
    def fy(self) -> float:
        return self.focal_length * self.image_height / self.sensor_height

    @property
    def cx(self) -> float:
        return self.image_width / 2.0

    @property
    def cy(self) -> float:
        return self.image_height / 2.0

    @property
    def horizontal_fov_deg(self) -> float:
        return math.degrees(2.0 * math.atan(self.sensor_width / 2.0 / self.focal_length))

    @property
    def horizon_row(self) -> float:
        # optical axis is horizontal, so the vanishing line passes through cy
        return self.cy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)

    def project(self, lateral: float, height: float, depth: float) -> tuple[float, float]:
        return (self.cx + self.fx * lateral / depth,
                self.cy + self.fy * (self.mount_height - height) / depth)

    def ground_point(self, u: float, v: float) -> tuple[float, float]:
        """Flat-road inverse projection of image point (u, v) to (depth, lateral)."""
        dv = v - self.cy
        if dv <= 0:
            raise ValueError(f"row {v} is at or above the horizon")
        depth = self.fy * self.mount_height / dv
        return depth, (u - self.cx) * depth / self.fx


@dataclass(frozen=True)
class PixelBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    occluded: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def within(self, width: int, height: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def touches_edge(self, width: int, height: int) -> bool:
        return self.x_min <= 0 or self.y_min <= 0 or self.x_max >= width or self.y_max >= height

    def clamp(self, width: int, height: int) -> PixelBox | None:
        x0, y0 = max(0.0, self.x_min), max(0.0, self.y_min)
        x1, y1 = min(float(width), self.x_max), min(float(height), self.y_max)
        if x0 >= x1 or y0 >= y1:
            return None
        return PixelBox(x0, y0, x1, y1, occluded=self.occluded or (x0, y0, x1, y1) != self.as_tuple())

    def to_dict(self) -> dict:
        return {"box": list(self.as_tuple()), "occluded": self.occluded}

    @classmethod
    def from_dict(cls, data: dict) -> PixelBox:
        return cls(*data["box"], occluded=bool(data.get("occluded", False)))


# =============================================================================
# Actor silhouettes
# =============================================================================


@dataclass(frozen=True)
class Part:
    polygon: np.ndarray  # (n, 2) convex, columns (lateral offset m, height m)
    albedo: int


# (shirt, trousers, skin) gray levels; dark clothing keeps people distinct from sky and road
CLOTHING = {
    "P1": (70, 45, 165), "P2": (55, 40, 160), "P3": (65, 50, 170), "P4": (60, 35, 158),
    "P5": (50, 60, 168), "P6": (45, 30, 162), "P7": (75, 55, 172), "P8": (85, 50, 160),
}
SHAPE_ALBEDO = {"N1": 215, "N2": 200, "N3": 225, "N4": 210, "N5": 205}


def _quad(x0: float, x1: float, z0: float, z1: float) -> np.ndarray:
    return np.array([[x0, z0], [x1, z0], [x1, z1], [x0, z1]], dtype=float)


def _ngon(cx: float, cz: float, r: float, n: int) -> np.ndarray:
    a = 2.0 * np.pi * np.arange(n) / n
    return np.stack([cx + r * np.cos(a), cz + r * np.sin(a)], axis=1)


def limb_spread(actor: Actor) -> float:
    return actor.base_width * (1.0 + 0.4 * math.sin(actor.gait_phase))


def _pedestrian_parts(actor: Actor) -> list[Part]:
    shirt, trousers, skin = CLOTHING[actor.class_id]
    h = actor.height
    spread = limb_spread(actor)
    half = spread / 2.0
    torso = 0.36 * actor.base_width
    head_r = 0.065 * h
    leg_w = 0.11 * actor.base_width / 0.5
    arm_w = 0.07 * actor.base_width / 0.5
    hip, shoulder = 0.47 * h, 0.82 * h
    # legs swing from the hip to the full spread at the feet
    legs = [
        np.array([[-torso / 2, hip], [-torso / 2 + leg_w, hip], [-half + leg_w, 0.0], [-half, 0.0]]),
        np.array([[torso / 2 - leg_w, hip], [torso / 2, hip], [half, 0.0], [half - leg_w, 0.0]]),
    ]
    arm_reach = max(torso / 2 + arm_w, 0.8 * half)
    arms = [
        np.array([[-torso / 2 - arm_w, shoulder], [-torso / 2, shoulder],
                  [-arm_reach + arm_w, 0.5 * h], [-arm_reach, 0.5 * h]]),
        np.array([[torso / 2, shoulder], [torso / 2 + arm_w, shoulder],
                  [arm_reach, 0.5 * h], [arm_reach - arm_w, 0.5 * h]]),
    ]
    parts = [Part(p, trousers) for p in legs]
    parts.append(Part(_quad(-torso / 2, torso / 2, hip - 0.02 * h, shoulder + 0.02 * h), shirt))
    parts.extend(Part(p, shirt) for p in arms)
    parts.append(Part(_quad(-0.035 * h, 0.035 * h, shoulder, h - 2 * head_r + 0.01), skin))
    parts.append(Part(_ngon(0.0, h - head_r, head_r, 12), skin))
    return parts


def _shape_parts(actor: Actor) -> list[Part]:
    a = SHAPE_ALBEDO[actor.class_id]
    w, h = actor.base_width, actor.height
    if actor.class_id == "N1":
        return [Part(_ngon(0.0, h / 2, h / 2, 16), a)]
    if actor.class_id == "N2":
        return [Part(_quad(-w / 2, w / 2, 0.0, h), a)]
    if actor.class_id == "N3":
        return [Part(np.array([[-w / 2, 0.0], [w / 2, 0.0], [0.0, h]]), a)]
    if actor.class_id == "N4":
        return [Part(np.array([[-w / 2, 0.0], [0.1 * w, 0.0], [0.1 * w, h * 0.8], [0.0, h]]), a),
                Part(np.array([[0.1 * w, 0.0], [w / 2, 0.0], [0.1 * w, h * 0.8]]), a - 25)]
    return [Part(_quad(-w / 2, w / 2, 0.0, h), a)]


def actor_parts(actor: Actor) -> list[Part]:
    return _pedestrian_parts(actor) if is_pedestrian(actor.class_id) else _shape_parts(actor)


def _projected_parts(actor: Actor, camera: CameraModel, ego: EgoVehicle):
    depth = actor.x - ego.position
    if depth < MIN_DEPTH:
        return None
    out = []
    for part in actor_parts(actor):
        lat = actor.y + part.polygon[:, 0]
        u = camera.cx + camera.fx * lat / depth
        v = camera.cy + camera.fy * (camera.mount_height - part.polygon[:, 1]) / depth
        out.append((np.stack([u, v], axis=1), part.albedo))
    return out


def project_bbox(actor: Actor, camera: CameraModel, ego: EgoVehicle) -> PixelBox | None:
    parts = _projected_parts(actor, camera, ego)
    if parts is None:
        return None
    pts = np.concatenate([p for p, _ in parts])
    raw = PixelBox(float(pts[:, 0].min()), float(pts[:, 1].min()),
                   float(pts[:, 0].max()), float(pts[:, 1].max()))
    return raw.clamp(camera.image_width, camera.image_height)


# =============================================================================
# Rendering
# =============================================================================

SKY_TOP, SKY_HORIZON = 228, 200
ROAD, EDGE_LINE, SHOULDER, GRASS = 100, 230, 135, 120
EDGE_LINE_WIDTH = 0.15
SHOULDER_WIDTH = 5.0


@lru_cache(maxsize=8)
def _background(camera: CameraModel, road_half_width: float) -> np.ndarray:
    h, w = camera.shape
    rows = np.arange(h) + 0.5
    cols = np.arange(w) + 0.5
    img = np.empty((h, w), dtype=np.uint8)
    sky = rows < camera.horizon_row
    frac = rows[sky] / camera.horizon_row
    img[sky] = np.round(SKY_TOP + (SKY_HORIZON - SKY_TOP) * frac).astype(np.uint8)[:, None]
    ground_rows = rows[~sky]
    depth = camera.fy * camera.mount_height / (ground_rows - camera.cy)
    lateral = np.abs((cols[None, :] - camera.cx) * depth[:, None] / camera.fx)
    ground = np.full(lateral.shape, GRASS, dtype=np.uint8)
    ground[lateral <= road_half_width + SHOULDER_WIDTH] = SHOULDER
    ground[lateral <= road_half_width] = EDGE_LINE
    ground[lateral <= road_half_width - EDGE_LINE_WIDTH] = ROAD
    img[~sky] = ground
    img.setflags(write=False)
    return img


def background_frame(camera: CameraModel, road_half_width: float = 1.5) -> Frame:
    return _background(camera, float(road_half_width)).copy()


SUPERSAMPLE = 4


def raster_polygon(poly: np.ndarray, shape: tuple[int, int]):
    """Coverage of a convex polygon over the pixel grid.

    Returns (row slice, col slice, touched, coverage) where touched marks every
    pixel the polygon overlaps and coverage is the covered area fraction,
    estimated by supersampling only along the boundary.
    """
    h, w = shape
    u0 = max(0, int(math.floor(poly[:, 0].min())))
    u1 = min(w, int(math.ceil(poly[:, 0].max())))
    v0 = max(0, int(math.floor(poly[:, 1].min())))
    v1 = min(h, int(math.ceil(poly[:, 1].max())))
    if u0 >= u1 or v0 >= v1:
        return None
    uu = np.arange(u0, u1) + 0.5
    vv = np.arange(v0, v1) + 0.5
    touched = np.ones((v1 - v0, u1 - u0), dtype=bool)
    inside = np.ones_like(touched)
    centroid = poly.mean(axis=0)
    edges = []
    for p, q in zip(poly, np.roll(poly, -1, axis=0)):
        nx, ny = q[1] - p[1], p[0] - q[0]
        if nx == 0 and ny == 0:
            continue
        c = nx * p[0] + ny * p[1]
        if nx * centroid[0] + ny * centroid[1] > c:
            nx, ny, c = -nx, -ny, -c
        edges.append((nx, ny, c))
        # a unit pixel overlaps the half-plane if its nearest corner does
        slack = 0.5 * (abs(nx) + abs(ny))
        dist = nx * uu[None, :] + ny * vv[:, None]
        touched &= dist - slack <= c
        inside &= dist + slack <= c
    coverage = inside.astype(np.float64)
    bi, bj = np.nonzero(touched & ~inside)
    if len(bi):
        off = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
        ox, oy = [g.ravel() for g in np.meshgrid(off, off)]
        px = uu[bj][:, None] + ox[None, :]
        py = vv[bi][:, None] + oy[None, :]
        hit = np.ones(px.shape, dtype=bool)
        for nx, ny, c in edges:
            hit &= nx * px + ny * py <= c
        coverage[bi, bj] = hit.mean(axis=1)
    return slice(v0, v1), slice(u0, u1), touched, coverage


def render_frame(state: WorldState, camera: CameraModel) -> Frame:
    frame = background_frame(camera, state.road_half_width)
    if state.actor is None:
        return frame
    parts = _projected_parts(state.actor, camera, state.ego)
    if parts is None:
        return frame
    for poly, albedo in parts:
        hit = raster_polygon(poly, camera.shape)
        if hit is None:
            continue
        rs, cs, touched, coverage = hit
        old = frame[rs, cs].astype(np.float64)
        new = np.rint(old + (albedo - old) * coverage)
        # any touched pixel moves at least one gray level toward the actor
        stuck = touched & (new == old) & (old != albedo)
        new[stuck] += np.sign(albedo - old[stuck])
        frame[rs, cs] = np.where(touched, new, old).astype(np.uint8)
    return frame


def silhouette_box(frame: Frame, camera: CameraModel, road_half_width: float = 1.5) -> tuple[int, int, int, int] | None:
    """Tight (col_min, row_min, col_max+1, row_max+1) of pixels that differ from the background."""
    diff = frame != _background(camera, float(road_half_width))
    if not diff.any():
        return None
    rows = np.flatnonzero(diff.any(axis=1))
    cols = np.flatnonzero(diff.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def write_pgm(path: str | Path, frame: Frame) -> None:
    frame = np.ascontiguousarray(frame, dtype=np.uint8)
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(frame.tobytes())


def read_pgm_header(path: str | Path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        tokens = fh.read(64).split()
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ValueError(f"{path} is not a binary graymap")
    return int(tokens[1]), int(tokens[2])


def read_pgm(path: str | Path) -> Frame:
    data = Path(path).read_bytes()
    tokens = data.split(maxsplit=4)
    if len(tokens) < 5 or tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path} is not an 8-bit binary graymap")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = tokens[4]
    if len(pixels) != w * h:
        raise ValueError(f"{path} truncated: expected {w * h} bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()


# =============================================================================
# Radar
# =============================================================================


@dataclass(frozen=True)
class RadarTrack:
    longitudinal_distance: float
    lateral_offset: float
    relative_longitudinal_speed: float  # closing positive
    relative_lateral_speed: float
    ttc: float | None
    collision_course: bool

    def __post_init__(self) -> None:
        if (self.ttc is not None) != (self.relative_longitudinal_speed > 0 and self.longitudinal_distance > 0):
            raise ValueError("ttc must be present exactly when closing on an object ahead")


def compute_ttc(track: RadarTrack, corridor_half_width: float) -> tuple[float | None, bool]:
    closing = track.relative_longitudinal_speed
    if closing <= 0 or track.longitudinal_distance <= 0:
        return None, False
    ttc = track.longitudinal_distance / closing
    predicted = track.lateral_offset + track.relative_lateral_speed * ttc
    return ttc, abs(predicted) <= corridor_half_width


def corridor_half_width(ego: EgoVehicle, actor: Actor, margin: float = 0.2) -> float:
    return ego.width / 2.0 + actor.base_width / 2.0 + margin


def make_track(distance: float, lateral: float, closing: float, lateral_speed: float,
               corridor: float) -> RadarTrack:
    has_ttc = closing > 0 and distance > 0
    probe = RadarTrack(distance, lateral, closing, lateral_speed,
                       distance / closing if has_ttc else None, False)
    ttc, course = compute_ttc(probe, corridor)
    return RadarTrack(distance, lateral, closing, lateral_speed, ttc, course)


def radar_scan(state: WorldState, max_range: float = 200.0, noise_std: float = 0.0,
               rng: np.random.Generator | None = None, corridor_margin: float = 0.2) -> list[RadarTrack]:
    actor = state.actor
    if actor is None:
        return []
    distance = actor.x - state.ego.position
    if distance <= 0 or distance > max_range:
        return []
    vx, vy = actor.velocity()
    closing = state.ego.speed - vx
    lateral, lateral_speed = actor.y, vy
    if noise_std > 0:
        if rng is None:
            raise ValueError("radar noise requires a seeded generator")
        d, l, c, s = rng.normal(0.0, noise_std, size=4)
        distance, lateral = distance + d, lateral + l
        closing, lateral_speed = closing + c, lateral_speed + s
    return [make_track(distance, lateral, closing, lateral_speed,
                       corridor_half_width(state.ego, actor, corridor_margin))]
