"""Procedural obstacle worlds: generation, density measurement, serialization.

Three scene families are supported: square pillars, cylinders, and mixed 3-D
shapes (partial-height columns plus floating spheres). Obstacle density is the
fraction of the arena's ground plane covered by obstacle footprints. The
generator keeps footprints disjoint, so the placed footprint area is exact and
generation lands on the requested density by sizing the final obstacle.

Spawn and goal points are reserved before any obstacle is placed, which
guarantees that every map has collision-free start and target locations with
at least 1 m of clearance.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFile, DensityInfeasible, FormatVersionMismatch
from .geometry import ObstacleField, compile_field

FORMAT_VERSION = 1

# Required clearance (m) between spawn/goal points and obstacle surfaces.
POINT_CLEARANCE = 1.0
# Extra margin used while placing, so validation passes with strict inequality.
_BUILD_CLEARANCE = 1.05
# Minimum spacing between spawn points (and between goal points).
_POINT_SPACING = 1.1
# Gap kept between obstacle footprints and between obstacles and walls.
_FOOTPRINT_GAP = 1e-3
_WALL_MARGIN = 0.05

# Half-extent / radius sampling windows (m).
_SIZE_LO = 0.5
_SIZE_HI = 1.6
# Absolute floor the adaptive shrink may reach.
_SIZE_FLOOR = 0.25


class SceneType(enum.Enum):
    PILLAR = "pillar"
    CYLINDER = "cylinder"
    MIXED = "mixed"


class ShapeKind(enum.Enum):
    BOX = "box"
    CYLINDER = "cylinder"
    SPHERE = "sphere"


@dataclass(frozen=True)
class ScenarioSpec:
    scene_type: SceneType
    density: float
    arena_x: float = 40.0
    arena_y: float = 40.0
    altitude_max: float = 30.0
    seed: int = 0
    target_count: int = 8

    def validate(self) -> None:
        if not 0.0 <= self.density <= 0.8:
            raise ValueError(f"density must be in [0, 0.8], got {self.density}")
        if self.arena_x <= 0 or self.arena_y <= 0:
            raise ValueError("arena dimensions must be positive")
        if self.altitude_max <= 0:
            raise ValueError("altitude_max must be positive")
        if self.target_count < 1:
            raise ValueError("target_count must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class Obstacle:
    shape: ShapeKind
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float] | None = None  # BOX only
    radius: float | None = None  # CYLINDER / SPHERE
    height: float | None = None  # CYLINDER only (full height)

    def footprint_area(self) -> float:
        if self.shape is ShapeKind.BOX:
            return 4.0 * self.half_extents[0] * self.half_extents[1]
        return math.pi * self.radius**2


@dataclass(frozen=True)
class ScenarioMap:
    spec: ScenarioSpec
    obstacles: tuple[Obstacle, ...]
    spawn_points: tuple[tuple[float, float, float], ...]
    goal_points: tuple[tuple[float, float, float], ...]
    scenario_id: str

    def obstacle_field(self) -> ObstacleField:
        return compile_field(self.obstacles)

    def footprint_fraction(self) -> float:
        """Exact covered fraction (footprints are disjoint by construction)."""
        area = sum(ob.footprint_area() for ob in self.obstacles)
        return area / (self.spec.arena_x * self.spec.arena_y)


@dataclass(frozen=True)
class OccupancyEstimate:
    fraction: float
    std_error: float
    samples: int


class _PlacementJammed(Exception):
    pass


def _scenario_id(spec: ScenarioSpec, obstacles, spawn, goals) -> str:
    digest = hashlib.sha256(
        repr((spec, tuple(obstacles), tuple(spawn), tuple(goals))).encode()
    ).hexdigest()[:8]
    return f"{spec.scene_type.value}-d{int(round(spec.density * 100)):02d}-s{spec.seed:x}-{digest}"


def _sample_points(rng: np.random.Generator, spec: ScenarioSpec, count: int) -> list[np.ndarray]:
    points: list[np.ndarray] = []
    lo = np.array([POINT_CLEARANCE, POINT_CLEARANCE, 1.5])
    hi = np.array([spec.arena_x - POINT_CLEARANCE, spec.arena_y - POINT_CLEARANCE, spec.altitude_max - 1.5])
    for _ in range(count):
        for _attempt in range(10_000):
            p = rng.uniform(lo, hi)
            if all(np.linalg.norm(p - q) >= _POINT_SPACING for q in points):
                points.append(p)
                break
        else:
            raise _PlacementJammed("could not place spawn/goal points")
    return points


def _mixed_kind(rng: np.random.Generator, index: int) -> ShapeKind:
    # Guarantee shape variety even on tiny maps, then sample freely.
    cycle = (ShapeKind.BOX, ShapeKind.CYLINDER, ShapeKind.SPHERE)
    if index < 3:
        return cycle[index]
    return cycle[rng.integers(0, 3)]


def _make_obstacle(
    kind: ShapeKind,
    scene: SceneType,
    size: float,
    cx: float,
    cy: float,
    spec: ScenarioSpec,
    rng: np.random.Generator,
) -> Obstacle:
    alt = spec.altitude_max
    if kind is ShapeKind.BOX:
        if scene is SceneType.MIXED:
            h = float(rng.uniform(0.25, 0.9)) * alt
        else:
            h = alt
        return Obstacle(
            shape=ShapeKind.BOX,
            center=(cx, cy, h / 2.0),
            half_extents=(size, size, h / 2.0),
        )
    if kind is ShapeKind.CYLINDER:
        if scene is SceneType.MIXED:
            h = float(rng.uniform(0.25, 0.9)) * alt
        else:
            h = alt
        return Obstacle(shape=ShapeKind.CYLINDER, center=(cx, cy, h / 2.0), radius=size, height=h)
    cz = float(rng.uniform(size + 0.5, alt - size - 0.5))
    return Obstacle(shape=ShapeKind.SPHERE, center=(cx, cy, cz), radius=size)


def _size_for_area(kind: ShapeKind, area: float) -> float:
    if kind is ShapeKind.BOX:
        return math.sqrt(area) / 2.0
    return math.sqrt(area / math.pi)


def _footprint_area(kind: ShapeKind, size: float) -> float:
    if kind is ShapeKind.BOX:
        return 4.0 * size * size
    return math.pi * size * size


def _generate_once(spec: ScenarioSpec, rng: np.random.Generator, attempt_budget: int) -> ScenarioMap:
    spawn = _sample_points(rng, spec, spec.target_count)
    goals = _sample_points(rng, spec, spec.target_count)
    reserved = spawn + goals

    target_area = spec.density * spec.arena_x * spec.arena_y
    min_area = _footprint_area(ShapeKind.CYLINDER, _SIZE_FLOOR)

    obstacles: list[Obstacle] = []
    # Footprints of placed obstacles, split by outline for overlap tests.
    rects = np.empty((0, 4))  # cx, cy, hx, hy
    discs = np.empty((0, 3))  # cx, cy, r
    placed_area = 0.0
    size_hi = _SIZE_HI
    consecutive_fail = 0
    attempts = 0

    while target_area - placed_area > min_area:
        attempts += 1
        if attempts > attempt_budget:
            raise _PlacementJammed(f"placement stalled after {attempts} attempts")

        if spec.scene_type is SceneType.PILLAR:
            kind = ShapeKind.BOX
        elif spec.scene_type is SceneType.CYLINDER:
            kind = ShapeKind.CYLINDER
        else:
            kind = _mixed_kind(rng, len(obstacles))

        size = float(rng.uniform(_SIZE_LO if size_hi > _SIZE_LO else _SIZE_FLOOR, size_hi))
        needed = target_area - placed_area
        if _footprint_area(kind, size) > needed:
            size = _size_for_area(kind, needed)
            if size < _SIZE_FLOOR:
                break

        margin = _WALL_MARGIN + size
        if margin >= spec.arena_x / 2 or margin >= spec.arena_y / 2:
            consecutive_fail += 1
            continue
        cx = float(rng.uniform(margin, spec.arena_x - margin))
        cy = float(rng.uniform(margin, spec.arena_y - margin))

        gap = size + _FOOTPRINT_GAP
        if kind is ShapeKind.BOX:
            rect_hit = (np.abs(rects[:, 0] - cx) < rects[:, 2] + gap) & (
                np.abs(rects[:, 1] - cy) < rects[:, 3] + gap
            )
            ddx = np.abs(discs[:, 0] - cx).clip(min=size) - size
            ddy = np.abs(discs[:, 1] - cy).clip(min=size) - size
            disc_hit = ddx**2 + ddy**2 < (discs[:, 2] + _FOOTPRINT_GAP) ** 2
        else:
            ddx = np.abs(cx - rects[:, 0]).clip(min=rects[:, 2]) - rects[:, 2]
            ddy = np.abs(cy - rects[:, 1]).clip(min=rects[:, 3]) - rects[:, 3]
            rect_hit = ddx**2 + ddy**2 < gap**2
            disc_hit = (discs[:, 0] - cx) ** 2 + (discs[:, 1] - cy) ** 2 < (discs[:, 2] + gap) ** 2
        if rect_hit.any() or disc_hit.any():
            consecutive_fail += 1
            if consecutive_fail >= 150:
                size_hi = max(size_hi * 0.85, _SIZE_FLOOR)
                consecutive_fail = 0
            continue

        candidate = _make_obstacle(kind, spec.scene_type, size, cx, cy, spec, rng)
        single = compile_field([candidate])
        if any(single.signed_distance(p) <= _BUILD_CLEARANCE for p in reserved):
            consecutive_fail += 1
            if consecutive_fail >= 150:
                size_hi = max(size_hi * 0.85, _SIZE_FLOOR)
                consecutive_fail = 0
            continue

        obstacles.append(candidate)
        placed_area += candidate.footprint_area()
        consecutive_fail = 0
        if kind is ShapeKind.BOX:
            rects = np.vstack([rects, [cx, cy, size, size]])
        else:
            discs = np.vstack([discs, [cx, cy, size]])

    spawn_t = tuple(tuple(float(v) for v in p) for p in spawn)
    goals_t = tuple(tuple(float(v) for v in p) for p in goals)
    return ScenarioMap(
        spec=spec,
        obstacles=tuple(obstacles),
        spawn_points=spawn_t,
        goal_points=goals_t,
        scenario_id=_scenario_id(spec, obstacles, spawn_t, goals_t),
    )


def generate_scenario(spec: ScenarioSpec, *, max_regen: int = 8, attempt_budget: int = 150_000) -> ScenarioMap:
    """Generate a map whose footprint coverage matches ``spec.density``.

    Deterministic for a fixed spec. Raises DensityInfeasible when the
    rejection sampler cannot reach the requested coverage.
    """
    spec.validate()
    last_error = "no attempts made"
    for regen in range(max_regen):
        rng = np.random.default_rng([0x5CE4A210, spec.seed, regen])
        try:
            m = _generate_once(spec, rng, attempt_budget)
        except _PlacementJammed as exc:
            last_error = str(exc)
            continue
        if spec.density > 0.0:
            rel_err = abs(m.footprint_fraction() - spec.density) / spec.density
            if rel_err > 0.05:
                last_error = f"coverage off target by {rel_err:.1%}"
                continue
        return m
    raise DensityInfeasible(
        f"could not generate {spec.scene_type.value} map at density {spec.density}: {last_error}"
    )


def occupancy_fraction(scenario: ScenarioMap, samples: int, seed: int = 0) -> OccupancyEstimate:
    """Monte-Carlo estimate of ground-plane footprint coverage.

    Unbiased uniform sampling over the arena floor; the reported standard
    error is the binomial one.
    """
    if samples < 10_000:
        raise ValueError(f"samples must be at least 10^4, got {samples}")
    rng = np.random.default_rng([0x0CCFBA11, seed])
    f = scenario.obstacle_field()
    hits = 0
    remaining = samples
    while remaining > 0:
        chunk = min(remaining, 200_000)
        xy = rng.uniform(
            [0.0, 0.0], [scenario.spec.arena_x, scenario.spec.arena_y], size=(chunk, 2)
        )
        hits += int(f.footprint_covered(xy).sum())
        remaining -= chunk
    p = hits / samples
    se = math.sqrt(max(p * (1.0 - p), 0.0) / samples)
    return OccupancyEstimate(fraction=p, std_error=se, samples=samples)


def validate_scenario_map(m: ScenarioMap) -> None:
    """Assert geometric invariants; raises ValueError on the first violation."""
    spec = m.spec
    f = m.obstacle_field()
    for ob in m.obstacles:
        if ob.shape is ShapeKind.BOX:
            lo = np.array(ob.center) - np.array(ob.half_extents)
            hi = np.array(ob.center) + np.array(ob.half_extents)
        elif ob.shape is ShapeKind.CYLINDER:
            lo = np.array(ob.center) - [ob.radius, ob.radius, ob.height / 2]
            hi = np.array(ob.center) + [ob.radius, ob.radius, ob.height / 2]
        else:
            lo = np.array(ob.center) - ob.radius
            hi = np.array(ob.center) + ob.radius
        if lo[0] < 0 or lo[1] < 0 or lo[2] < -1e-9:
            raise ValueError(f"obstacle outside arena: {ob}")
        if hi[0] > spec.arena_x or hi[1] > spec.arena_y or hi[2] > spec.altitude_max + 1e-9:
            raise ValueError(f"obstacle outside arena: {ob}")
        if spec.scene_type in (SceneType.PILLAR, SceneType.CYLINDER):
            if not (abs(lo[2]) < 1e-9 and abs(hi[2] - spec.altitude_max) < 1e-9):
                raise ValueError(f"pillar does not span the full altitude range: {ob}")
    if len(m.spawn_points) != spec.target_count or len(m.goal_points) != spec.target_count:
        raise ValueError("spawn/goal count does not match target_count")
    for p in m.spawn_points + m.goal_points:
        if f.signed_distance(p) <= POINT_CLEARANCE:
            raise ValueError(f"point {p} closer than {POINT_CLEARANCE} m to an obstacle")
    for i, a in enumerate(m.spawn_points):
        for b in m.spawn_points[i + 1 :]:
            if np.linalg.norm(np.array(a) - b) < POINT_CLEARANCE:
                raise ValueError("spawn points closer than 1 m")


def _obstacle_to_json(ob: Obstacle) -> dict:
    rec: dict = {"shape": ob.shape.value, "center": list(ob.center)}
    if ob.shape is ShapeKind.BOX:
        rec["half_extents"] = list(ob.half_extents)
    elif ob.shape is ShapeKind.CYLINDER:
        rec["radius"] = ob.radius
        rec["height"] = ob.height
    else:
        rec["radius"] = ob.radius
    return rec


def _obstacle_from_json(rec: dict) -> Obstacle:
    kind = ShapeKind(rec["shape"])
    center = tuple(float(v) for v in rec["center"])
    if kind is ShapeKind.BOX:
        return Obstacle(shape=kind, center=center, half_extents=tuple(float(v) for v in rec["half_extents"]))
    if kind is ShapeKind.CYLINDER:
        return Obstacle(shape=kind, center=center, radius=float(rec["radius"]), height=float(rec["height"]))
    return Obstacle(shape=kind, center=center, radius=float(rec["radius"]))


def save_scenario(m: ScenarioMap, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "scenario_id": m.scenario_id,
        "spec": {
            "scene_type": m.spec.scene_type.value,
            "density": m.spec.density,
            "arena_x": m.spec.arena_x,
            "arena_y": m.spec.arena_y,
            "altitude_max": m.spec.altitude_max,
            "seed": m.spec.seed,
            "target_count": m.spec.target_count,
        },
        "obstacles": [_obstacle_to_json(ob) for ob in m.obstacles],
        "spawn_points": [list(p) for p in m.spawn_points],
        "goal_points": [list(p) for p in m.goal_points],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_scenario(path) -> ScenarioMap:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise CorruptFile(f"{path}: top-level document is not an object", offset=0)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        s = doc["spec"]
        spec = ScenarioSpec(
            scene_type=SceneType(s["scene_type"]),
            density=float(s["density"]),
            arena_x=float(s["arena_x"]),
            arena_y=float(s["arena_y"]),
            altitude_max=float(s["altitude_max"]),
            seed=int(s["seed"]),
            target_count=int(s["target_count"]),
        )
        return ScenarioMap(
            spec=spec,
            obstacles=tuple(_obstacle_from_json(rec) for rec in doc["obstacles"]),
            spawn_points=tuple(tuple(float(v) for v in p) for p in doc["spawn_points"]),
            goal_points=tuple(tuple(float(v) for v in p) for p in doc["goal_points"]),
            scenario_id=str(doc["scenario_id"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: malformed scenario document ({exc})") from exc
