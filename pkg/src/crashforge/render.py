"""Software ray-cast renderer for the ego's forward grayscale dash-cam view.

The scene is deliberately minimal: a flat ground plane with painted lane
markings, the other vehicle as an extruded box, a sky, and exponential
distance fog. Every pixel is an analytic ray intersection, so projected
extents can be checked in closed form and output is bit-exact across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import FootprintOBB
from .scenarios import HighwayGeometry, IntersectionGeometry, RoadGeometry
from .sim import VehicleState

IMAGE_WIDTH = 200
IMAGE_HEIGHT = 66
VEHICLE_BOX_HEIGHT_M = 1.5
LANE_MARK_WIDTH_M = 0.15
DASH_ON_M = 3.0
DASH_PERIOD_M = 9.0  # 3 m painted, 6 m gap

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


class PgmError(Exception):
    pass


@dataclass(frozen=True)
class CameraModel:
    mount_height: float = 1.2
    pitch: float = math.radians(1.5)  # below horizon
    horizontal_fov: float = math.radians(90.0)
    image_width: int = IMAGE_WIDTH
    image_height: int = IMAGE_HEIGHT

    def __post_init__(self):
        if not 0.0 < self.horizontal_fov < math.pi:
            raise ValueError("horizontal_fov must be in (0, pi)")

    def focal_px(self) -> float:
        return (self.image_width / 2.0) / math.tan(self.horizontal_fov / 2.0)


@dataclass(frozen=True)
class RenderProfile:
    road: float
    lane_marking: float
    sky: float
    ground: float
    vehicle_body: float
    fog_color: float
    noise_std: float
    geometry_jitter: float

    def __post_init__(self):
        for name in ("road", "lane_marking", "sky", "ground", "vehicle_body", "fog_color"):
            v = getattr(self, name)
            if not 0.0 <= v <= 255.0:
                raise ValueError(f"{name} intensity out of [0, 255]: {v}")
        if self.noise_std < 0 or self.geometry_jitter < 0:
            raise ValueError("noise_std and geometry_jitter must be >= 0")

    @staticmethod
    def default() -> "RenderProfile":
        return RenderProfile(
            road=90.0, lane_marking=220.0, sky=170.0, ground=60.0,
            vehicle_body=30.0, fog_color=200.0, noise_std=2.0, geometry_jitter=0.0,
        )

    @staticmethod
    def domain_shifted() -> "RenderProfile":
        """Stage-2 proxy for the unavailable real-world imagery: shifted
        intensities, heavier pixel noise, jittered camera geometry."""
        return RenderProfile(
            road=115.0, lane_marking=240.0, sky=205.0, ground=85.0,
            vehicle_body=55.0, fog_color=225.0, noise_std=8.0, geometry_jitter=0.3,
        )


PROFILES = {"default": RenderProfile.default, "shifted": RenderProfile.domain_shifted}


@dataclass(frozen=True)
class Image:
    """8-bit grayscale image; pixels row-major, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 2:
            raise ValueError("pixels must be a 2-D uint8 array")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_pgm_bytes(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.pixels.tobytes()

    @staticmethod
    def from_pgm_bytes(data: bytes) -> "Image":
        parts = data.split(b"\n", 3)
        if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
            raise PgmError("not a raw 8-bit PGM")
        try:
            width, height = (int(x) for x in parts[1].split())
        except ValueError as exc:
            raise PgmError("bad PGM dimensions") from exc
        raw = parts[3]
        if len(raw) != width * height:
            raise PgmError(f"expected {width * height} pixel bytes, got {len(raw)}")
        return Image(np.frombuffer(raw, dtype=np.uint8).reshape(height, width))

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_pgm_bytes())

    @staticmethod
    def read(path: str | Path) -> "Image":
        return Image.from_pgm_bytes(Path(path).read_bytes())


def apply_fog(intensity: float, depth: float, density: float, fog_color: float) -> int:
    """Exponential fog blend: e^(-density*depth) of the surface remains."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if density == 0.0:
        return int(np.rint(intensity))
    f = math.exp(-density * depth)
    return int(np.rint(intensity * f + fog_color * (1.0 - f)))


# Cached per-camera ray directions in the ego frame (x fwd, y left, z up).
_RAY_CACHE: dict[CameraModel, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _ray_dirs(camera: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cached = _RAY_CACHE.get(camera)
    if cached is not None:
        return cached
    f = camera.focal_px()
    u = np.arange(camera.image_width) + 0.5 - camera.image_width / 2.0
    v = np.arange(camera.image_height) + 0.5 - camera.image_height / 2.0
    dy = -(u / f)[None, :] * np.ones((camera.image_height, 1))
    dz = -(v / f)[:, None] * np.ones((1, camera.image_width))
    dx = np.ones_like(dy)
    # Pitch the camera down around its left axis.
    cp, sp = math.cos(camera.pitch), math.sin(camera.pitch)
    x_e = dx * cp + dz * sp
    z_e = -dx * sp + dz * cp
    norm = np.sqrt(x_e**2 + dy**2 + z_e**2)
    result = (x_e / norm, dy / norm, z_e / norm)
    _RAY_CACHE[camera] = result
    return result


def _splitmix_finalize(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _pixel_noise(key: int, n: int) -> np.ndarray:
    """Unit-variance gaussian per pixel from a counter-based generator.

    Each pixel's draw depends only on (key, pixel index), so rendering order
    (or row-parallel rendering) cannot change the output.
    """
    golden2 = np.uint64((2 * int(_GOLDEN)) & 0xFFFFFFFFFFFFFFFF)
    idx = np.arange(n, dtype=np.uint64)
    seed = np.uint64(key) ^ (idx * _GOLDEN)
    u1 = ((_splitmix_finalize(seed + _GOLDEN) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (_splitmix_finalize(seed + golden2) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _shade_ground(gx: np.ndarray, gy: np.ndarray, geometry: RoadGeometry, profile: RenderProfile) -> np.ndarray:
    """Intensity of the ground plane at world points (gx, gy)."""
    half_mark = LANE_MARK_WIDTH_M / 2.0
    shade = np.full(gx.shape, profile.ground)
    if isinstance(geometry, HighwayGeometry):
        lane = geometry.lane_width_m
        on_road = (np.abs(gy) <= lane) & (gx >= 0.0) & (gx <= geometry.road_length_m)
        shade[on_road] = profile.road
        edges = (np.abs(np.abs(gy) - lane) <= half_mark)
        center = np.abs(gy) <= half_mark
        if geometry.same_direction:
            center &= (gx % DASH_PERIOD_M) < DASH_ON_M
        shade[on_road & (edges | center)] = profile.lane_marking
    elif isinstance(geometry, IntersectionGeometry):
        lane = geometry.lane_width_m
        arm = geometry.arm_length_m
        road_ew = (np.abs(gy) <= lane) & (np.abs(gx) <= arm)
        road_ns = (np.abs(gx) <= lane) & (np.abs(gy) <= arm)
        on_road = road_ew | road_ns
        shade[on_road] = profile.road
        outside_box_ew = np.abs(gx) > lane
        outside_box_ns = np.abs(gy) > lane
        marks_ew = road_ew & outside_box_ew & (
            (np.abs(np.abs(gy) - lane) <= half_mark) | (np.abs(gy) <= half_mark)
        )
        marks_ns = road_ns & outside_box_ns & (
            (np.abs(np.abs(gx) - lane) <= half_mark) | (np.abs(gx) <= half_mark)
        )
        shade[marks_ew | marks_ns] = profile.lane_marking
    else:
        raise TypeError(f"unknown road geometry {geometry!r}")
    return shade


def _box_hit(
    cam: np.ndarray,
    dx: np.ndarray,
    dy: np.ndarray,
    dz: np.ndarray,
    other: FootprintOBB,
) -> tuple[np.ndarray, np.ndarray]:
    """Slab-method ray intersection with the other vehicle's extruded box."""
    c, s = math.cos(other.heading), math.sin(other.heading)
    ox = cam[0] - other.cx
    oy = cam[1] - other.cy
    # into box frame
    px = ox * c + oy * s
    py = -ox * s + oy * c
    bdx = dx * c + dy * s
    bdy = -dx * s + dy * c

    t_near = np.full(dx.shape, -np.inf)
    t_far = np.full(dx.shape, np.inf)
    for origin, direction, lo, hi in (
        (px, bdx, -other.half_length, other.half_length),
        (py, bdy, -other.half_width, other.half_width),
        (cam[2], dz, 0.0, VEHICLE_BOX_HEIGHT_M),
    ):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / direction
            t2 = (hi - origin) / direction
        t_lo = np.fmin(t1, t2)
        t_hi = np.fmax(t1, t2)
        parallel = direction == 0.0
        inside = (origin >= lo) & (origin <= hi)
        t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
        t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)
        t_near = np.maximum(t_near, t_lo)
        t_far = np.minimum(t_far, t_hi)

    hit = (t_near <= t_far) & (t_far > 0.0) & (t_near > 0.0)
    return hit, np.where(hit, t_near, np.inf)


def render_frame(
    ego: VehicleState,
    other: FootprintOBB | None,
    geometry: RoadGeometry,
    camera: CameraModel,
    profile: RenderProfile,
    fog_density: float,
    rng,
) -> Image:
    """Render one forward dash-cam frame.

    Consumes from `rng`: one raw output (the pixel-noise key), plus two
    gaussians when the profile has geometry jitter. Output is a pure function
    of the arguments including the stream state.
    """
    if not 0.0 <= fog_density <= 0.05:
        raise ValueError(f"fog_density out of [0, 0.05]: {fog_density}")
    noise_key = rng.next_raw()
    heading = ego.heading
    lateral_off = 0.0
    if profile.geometry_jitter > 0.0:
        lateral_off = rng.gaussian(0.0, profile.geometry_jitter)
        heading += rng.gaussian(0.0, profile.geometry_jitter * 0.02)

    ex, ey, ez = _ray_dirs(camera)
    ch, sh = math.cos(heading), math.sin(heading)
    dx = ex * ch - ey * sh
    dy = ex * sh + ey * ch
    dz = ez
    cam = np.array(
        [
            ego.x - lateral_off * math.sin(heading),
            ego.y + lateral_off * math.cos(heading),
            camera.mount_height,
        ]
    )

    ground_mask = dz < 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(ground_mask, cam[2] / np.where(ground_mask, -dz, 1.0), np.inf)
    gx = cam[0] + t_ground * dx
    gy = cam[1] + t_ground * dy

    value = np.full(dx.shape, profile.sky)
    depth = np.full(dx.shape, np.inf)
    shade = _shade_ground(
        np.where(ground_mask, gx, 0.0), np.where(ground_mask, gy, 0.0), geometry, profile
    )
    value[ground_mask] = shade[ground_mask]
    depth[ground_mask] = t_ground[ground_mask]

    if other is not None:
        hit, t_box = _box_hit(cam, dx, dy, dz, other)
        nearer = hit & (t_box < depth)
        value[nearer] = profile.vehicle_body
        depth[nearer] = t_box[nearer]

    if fog_density > 0.0:
        f = np.exp(-fog_density * depth)
        value = value * f + profile.fog_color * (1.0 - f)

    value = np.rint(value)
    if profile.noise_std > 0.0:
        noise = _pixel_noise(noise_key, value.size).reshape(value.shape)
        value = np.rint(value + profile.noise_std * noise)

    return Image(np.clip(value, 0.0, 255.0).astype(np.uint8))
