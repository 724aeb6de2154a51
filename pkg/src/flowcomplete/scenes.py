"""Synthetic desk-scale scenes and simulated range scans.

A scene is a ground rectangle plus boxes, cylinders, and thin walls with
arbitrary yaw. Ground truth clouds are area-uniform surface samples; the
scan is an analytic ray cast over an azimuth/elevation grid from a sensor
origin, so occlusion shadows and range limits are exact rather than
sampled. Everything is seeded and replayable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import as_cloud, farthest_point_sample

_EPS = 1e-9


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Box:
    """Axis-aligned cuboid rotated by yaw about its center."""
    center: tuple
    size: tuple
    yaw: float = 0.0

    def __post_init__(self):
        if any(s <= 0 for s in self.size):
            raise ValueError(f"degenerate box size {self.size}")

    def surface_area(self) -> float:
        sx, sy, sz = self.size
        return 2.0 * (sx * sy + sy * sz + sx * sz)

    def sample_surface(self, count: int, rng) -> np.ndarray:
        sx, sy, sz = self.size
        # (fixed axis, sign, spans): the six faces with their areas
        faces = [
            (0, +1, sy * sz), (0, -1, sy * sz),
            (1, +1, sx * sz), (1, -1, sx * sz),
            (2, +1, sx * sy), (2, -1, sx * sy),
        ]
        areas = np.array([f[2] for f in faces])
        half = np.array(self.size) / 2.0
        picks = rng.choice(len(faces), size=count, p=areas / areas.sum())
        local = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
        for i, (axis, sign, _) in enumerate(faces):
            mask = picks == i
            local[mask, axis] = sign * half[axis]
        return np.asarray(self.center) + local @ _yaw_matrix(self.yaw).T

    def ray_hit(self, origin: np.ndarray, direction: np.ndarray) -> float:
        # slab method in the box's local frame
        rot = _yaw_matrix(self.yaw)
        o = rot.T @ (origin - np.asarray(self.center))
        d = rot.T @ direction
        half = np.array(self.size) / 2.0
        t_near, t_far = -math.inf, math.inf
        for axis in range(3):
            if abs(d[axis]) < _EPS:
                if abs(o[axis]) > half[axis]:
                    return math.inf
                continue
            lo = (-half[axis] - o[axis]) / d[axis]
            hi = (half[axis] - o[axis]) / d[axis]
            if lo > hi:
                lo, hi = hi, lo
            t_near = max(t_near, lo)
            t_far = min(t_far, hi)
        if t_near > t_far or t_far < _EPS:
            return math.inf
        return t_near if t_near > _EPS else math.inf


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder: base center, radius, height."""
    center: tuple  # base center (on the ground when z = 0)
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("degenerate cylinder")

    def surface_area(self) -> float:
        lateral = 2.0 * math.pi * self.radius * self.height
        caps = 2.0 * math.pi * self.radius ** 2
        return lateral + caps

    def sample_surface(self, count: int, rng) -> np.ndarray:
        cx, cy, cz = self.center
        lateral = 2.0 * math.pi * self.radius * self.height
        cap = math.pi * self.radius ** 2
        areas = np.array([lateral, cap, cap])
        picks = rng.choice(3, size=count, p=areas / areas.sum())
        theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
        out = np.empty((count, 3))
        lat = picks == 0
        out[lat, 0] = cx + self.radius * np.cos(theta[lat])
        out[lat, 1] = cy + self.radius * np.sin(theta[lat])
        out[lat, 2] = cz + rng.uniform(0.0, self.height, size=int(lat.sum()))
        for pick, z in ((1, cz + self.height), (2, cz)):
            mask = picks == pick
            r = self.radius * np.sqrt(rng.uniform(size=int(mask.sum())))
            out[mask, 0] = cx + r * np.cos(theta[mask])
            out[mask, 1] = cy + r * np.sin(theta[mask])
            out[mask, 2] = z
        return out

    def ray_hit(self, origin: np.ndarray, direction: np.ndarray) -> float:
        cx, cy, cz = self.center
        z_lo, z_hi = cz, cz + self.height
        best = math.inf
        ox, oy = origin[0] - cx, origin[1] - cy
        dx, dy = direction[0], direction[1]
        a = dx * dx + dy * dy
        if a > _EPS:
            b = 2.0 * (ox * dx + oy * dy)
            c = ox * ox + oy * oy - self.radius ** 2
            disc = b * b - 4.0 * a * c
            if disc >= 0.0:
                root = math.sqrt(disc)
                for t in ((-b - root) / (2 * a), (-b + root) / (2 * a)):
                    if t > _EPS:
                        z = origin[2] + t * direction[2]
                        if z_lo - _EPS <= z <= z_hi + _EPS:
                            best = min(best, t)
        if abs(direction[2]) > _EPS:
            for z_cap in (z_lo, z_hi):
                t = (z_cap - origin[2]) / direction[2]
                if _EPS < t < best:
                    px = origin[0] + t * direction[0] - cx
                    py = origin[1] + t * direction[1] - cy
                    if px * px + py * py <= self.radius ** 2:
                        best = t
        return best


@dataclass(frozen=True)
class Wall:
    """Thin vertical rectangle: base-center, width along local y, height."""
    center: tuple  # midpoint of the bottom edge
    width: float
    height: float
    yaw: float = 0.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("degenerate wall")

    def surface_area(self) -> float:
        return self.width * self.height

    def sample_surface(self, count: int, rng) -> np.ndarray:
        local = np.zeros((count, 3))
        local[:, 1] = rng.uniform(-self.width / 2.0, self.width / 2.0, size=count)
        local[:, 2] = rng.uniform(0.0, self.height, size=count)
        return np.asarray(self.center) + local @ _yaw_matrix(self.yaw).T

    def ray_hit(self, origin: np.ndarray, direction: np.ndarray) -> float:
        rot = _yaw_matrix(self.yaw)
        o = rot.T @ (origin - np.asarray(self.center))
        d = rot.T @ direction
        if abs(d[0]) < _EPS:
            return math.inf
        t = -o[0] / d[0]
        if t <= _EPS:
            return math.inf
        y = o[1] + t * d[1]
        z = o[2] + t * d[2]
        if abs(y) <= self.width / 2.0 and 0.0 <= z <= self.height:
            return t
        return math.inf


@dataclass(frozen=True)
class SceneSpec:
    """Ground rectangle, primitives, sampling density, and seed."""
    ground_half_extent: float = 4.0
    primitives: tuple = ()
    density: float = 60.0  # surface points per square meter
    seed: int = 0

    def __post_init__(self):
        if self.ground_half_extent <= 0:
            raise ValueError("ground extent must be positive")
        if self.density <= 0:
            raise ValueError("density must be positive")
        for prim in self.primitives:
            cx, cy = prim.center[0], prim.center[1]
            if abs(cx) > self.ground_half_extent or abs(cy) > self.ground_half_extent:
                raise ValueError(f"primitive at ({cx}, {cy}) outside ground extent")


@dataclass(frozen=True)
class ScanSpec:
    """Sensor pose and ray grid for the simulated scan."""
    origin: tuple = (0.0, 0.0, 0.6)
    azimuth_count: int = 180
    elevation_count: int = 12
    elevation_range: tuple = (-0.5, 0.15)  # radians
    max_range: float = 10.0
    dropout: float = 0.0
    budget: int | None = None  # farthest-point subsample target
    seed: int = 0

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError("max range must be positive")
        if self.azimuth_count < 1 or self.elevation_count < 1:
            raise ValueError("channel counts must be >= 1")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be in [0, 1]")


@dataclass(frozen=True)
class SceneCase:
    """A complete cloud, its partial scan, and how they were made."""
    case_id: str
    scene: np.ndarray
    scan: np.ndarray
    scene_spec: SceneSpec
    scan_spec: ScanSpec


class _Ground:
    """Internal: the ground rectangle as a fourth primitive kind."""

    def __init__(self, half_extent: float):
        self.half_extent = half_extent

    def surface_area(self) -> float:
        return (2.0 * self.half_extent) ** 2

    def sample_surface(self, count: int, rng) -> np.ndarray:
        out = np.zeros((count, 3))
        out[:, :2] = rng.uniform(-self.half_extent, self.half_extent, size=(count, 2))
        return out

    def ray_hit(self, origin: np.ndarray, direction: np.ndarray) -> float:
        if abs(direction[2]) < _EPS:
            return math.inf
        t = -origin[2] / direction[2]
        if t <= _EPS:
            return math.inf
        x = origin[0] + t * direction[0]
        y = origin[1] + t * direction[1]
        if abs(x) <= self.half_extent and abs(y) <= self.half_extent:
            return t
        return math.inf


def _all_surfaces(spec: SceneSpec):
    return [_Ground(spec.ground_half_extent), *spec.primitives]


def generate_scene(spec: SceneSpec) -> np.ndarray:
    """Area-uniform surface samples of ground plus all primitives.

    Each surface receives a Poisson(area * density) number of points;
    deterministic for a fixed spec.
    """
    rng = np.random.default_rng(spec.seed)
    clouds = []
    for surface in _all_surfaces(spec):
        count = int(rng.poisson(surface.surface_area() * spec.density))
        if count > 0:
            clouds.append(surface.sample_surface(count, rng))
    return as_cloud(np.vstack(clouds) if clouds else np.empty((0, 3)))


def simulate_scan(spec: SceneSpec, scan: ScanSpec) -> np.ndarray:
    """First-hit ray cast of the scan grid against the scene surfaces.

    Rays march from scan.origin over an azimuth x elevation grid; each
    keeps the nearest primitive intersection within max_range. Points in
    the shadow of a nearer surface are therefore absent by construction.
    Dropout then removes each return independently.
    """
    surfaces = _all_surfaces(spec)
    origin = np.asarray(scan.origin, dtype=np.float64)
    azimuths = np.arange(scan.azimuth_count) * (2.0 * math.pi / scan.azimuth_count)
    elevations = np.linspace(scan.elevation_range[0], scan.elevation_range[1],
                             scan.elevation_count)
    hits = []
    for el in elevations:
        cos_el, sin_el = math.cos(el), math.sin(el)
        for az in azimuths:
            direction = np.array([cos_el * math.cos(az), cos_el * math.sin(az), sin_el])
            best = min(s.ray_hit(origin, direction) for s in surfaces)
            if best <= scan.max_range:
                hits.append(origin + best * direction)
    cloud = as_cloud(np.array(hits) if hits else np.empty((0, 3)))
    rng = np.random.default_rng(scan.seed)
    if scan.dropout > 0.0 and len(cloud):
        cloud = cloud[rng.uniform(size=len(cloud)) >= scan.dropout]
    if scan.budget is not None and len(cloud) > scan.budget:
        cloud = farthest_point_sample(cloud, scan.budget,
                                      seed=int(rng.integers(2 ** 32)))
    return cloud


def build_case(case_id: str, scene_spec: SceneSpec, scan_spec: ScanSpec) -> SceneCase:
    """Generate the (complete, scan) pair for one case.

    Raises:
        ValueError: if the simulated scan ends up empty (a scene the
            sensor cannot see is untrainable).
    """
    scene = generate_scene(scene_spec)
    scan = simulate_scan(scene_spec, scan_spec)
    if len(scan) == 0:
        raise ValueError(f"case {case_id}: simulated scan is empty")
    return SceneCase(case_id, scene, scan, scene_spec, scan_spec)


def random_scene_spec(seed: int, ground_half_extent: float = 4.0,
                      density: float = 60.0) -> SceneSpec:
    """A randomized office-junk scene: a few boxes, cylinders, and walls.

    Primitive counts, poses, and sizes derive from the seed alone. The
    area near the sensor origin is kept clear.
    """
    rng = np.random.default_rng([seed, 0x5CE2E])
    prims = []

    def clear_of_sensor(x, y, margin=0.8):
        return math.hypot(x, y) > margin

    def random_xy(margin):
        while True:
            x, y = rng.uniform(-ground_half_extent + margin,
                               ground_half_extent - margin, size=2)
            if clear_of_sensor(x, y):
                return x, y

    for _ in range(int(rng.integers(1, 4))):
        sx, sy, sz = rng.uniform(0.4, 1.4, size=3)
        x, y = random_xy(margin=1.0)
        prims.append(Box(center=(x, y, sz / 2.0), size=(sx, sy, sz),
                         yaw=float(rng.uniform(0, 2 * math.pi))))
    for _ in range(int(rng.integers(1, 3))):
        radius = float(rng.uniform(0.15, 0.45))
        height = float(rng.uniform(0.5, 1.8))
        x, y = random_xy(margin=0.6)
        prims.append(Cylinder(center=(x, y, 0.0), radius=radius, height=height))
    for _ in range(int(rng.integers(0, 3))):
        width = float(rng.uniform(1.0, 3.0))
        height = float(rng.uniform(0.6, 1.8))
        x, y = random_xy(margin=1.6)
        prims.append(Wall(center=(x, y, 0.0), width=width, height=height,
                          yaw=float(rng.uniform(0, 2 * math.pi))))
    return SceneSpec(ground_half_extent=ground_half_extent,
                     primitives=tuple(prims), density=density, seed=seed)
