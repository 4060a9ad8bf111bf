"""Ray-cast rasterizer producing log-intensity frames.

Deterministic CPU replacement for a full rendering stack: one primary ray
per pixel center, flat per-object intensities, no shading. The world is
right-handed with z up; units are meters. The background is a two-band
horizon (uniform sky above, uniform ground plane below), so the only
intensity changes between frames come from object silhouettes moving in
the image. Frames store L = log(I) with I in (0, 1], i.e. all values
are <= 0.

Pixel conventions: column x grows rightward, row y grows downward, pixel
(x, y) covers the unit square [x, x+1) x [y, y+1) and its primary ray
passes through the square's center. The horizontal field of view spans
the full sensor width; pixels are square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

SKY_INTENSITY = 0.8
GROUND_INTENSITY = 0.4
DEFAULT_OBJECT_INTENSITY = 0.1

# Log-intensity frame: float32 array of shape (H, W), all values <= 0.
IntensityFrame = np.ndarray

_RAY_EPS = 1e-9


def vec3(x: float, y: float, z: float) -> np.ndarray:
    """3-vector in the world frame (meters, z up)."""
    v = np.array([x, y, z], dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError(f"non-finite vector components: {v}")
    return v


@dataclass
class CameraModel:
    """Pinhole camera rigidly mounted on the agent.

    `position` is the agent's ground-plane reference point; the optical
    center sits `mount_height` above it. Yaw rotates about z; pitch is
    fixed at zero, so the optical axis is horizontal.
    """

    width: int = 240
    height: int = 180
    horizontal_fov: float = math.radians(70.0)
    position: np.ndarray = field(default_factory=lambda: vec3(0.0, 0.0, 0.0))
    yaw: float = 0.0
    mount_height: float = 0.15

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad sensor size {self.width}x{self.height}")
        if not 0.0 < self.horizontal_fov < math.pi:
            raise ValueError(f"horizontal_fov must be in (0, pi), got {self.horizontal_fov}")
        self.position = np.asarray(self.position, dtype=np.float64)

    @property
    def focal_px(self) -> float:
        """Focal length in pixels; fov/2 rays hit the sensor's side edges."""
        return (self.width / 2.0) / math.tan(self.horizontal_fov / 2.0)

    @property
    def eye(self) -> np.ndarray:
        return self.position + np.array([0.0, 0.0, self.mount_height])

    def basis(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(forward, right, up) unit vectors in world coordinates."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        forward = np.array([c, s, 0.0])
        right = np.array([s, -c, 0.0])  # forward x up
        up = np.array([0.0, 0.0, 1.0])
        return forward, right, up


@dataclass
class SceneObject:
    """Flat-intensity primitive: a sphere or an axis-aligned cube."""

    shape: str  # "sphere" | "box"
    center: np.ndarray
    radius_or_half_extent: float
    intensity: float = DEFAULT_OBJECT_INTENSITY

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not self.radius_or_half_extent > 0:
            raise ValueError(f"radius/half-extent must be > 0, got {self.radius_or_half_extent}")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError(f"intensity must be in (0, 1], got {self.intensity}")
        self.center = np.asarray(self.center, dtype=np.float64)


def project(point: np.ndarray, camera: CameraModel) -> Optional[Tuple[int, int]]:
    """Pixel containing the perspective projection of a world point.

    Returns None when the point is at or behind the camera plane or
    outside the view frustum. The frustum is closed: a point exactly on
    the boundary lands in the nearest edge pixel.
    """
    forward, right, up = camera.basis()
    rel = np.asarray(point, dtype=np.float64) - camera.eye
    zc = float(rel @ forward)
    if zc <= 0.0:
        return None
    f = camera.focal_px
    u = camera.width / 2.0 + f * float(rel @ right) / zc
    v = camera.height / 2.0 - f * float(rel @ up) / zc
    # closed frustum with room for roundoff at the exact boundary
    tol = 1e-9
    if u < -tol or u > camera.width + tol or v < -tol or v > camera.height + tol:
        return None
    px = min(max(int(math.floor(u)), 0), camera.width - 1)
    py = min(max(int(math.floor(v)), 0), camera.height - 1)
    return px, py


# Per-(width, height, fov) grids of camera-frame ray components, so repeated
# renders with the same sensor reuse them. dir = forward + a*right + b*up.
_GRID_CACHE: dict = {}


def _camera_grid(width: int, height: int, fov: float):
    key = (width, height, fov)
    grid = _GRID_CACHE.get(key)
    if grid is None:
        f = (width / 2.0) / math.tan(fov / 2.0)
        a = (np.arange(width, dtype=np.float64) + 0.5 - width / 2.0) / f
        b = (height / 2.0 - (np.arange(height, dtype=np.float64) + 0.5)) / f
        grid = (np.broadcast_to(a, (height, width)), np.broadcast_to(b[:, None], (height, width)))
        _GRID_CACHE[key] = grid
    return grid


def _intersect_sphere(eye, dx, dy, dz, center, radius):
    """Smallest positive ray parameter per pixel, inf where missed."""
    ox, oy, oz = eye - center
    a = dx * dx + dy * dy + dz * dz
    b = 2.0 * (ox * dx + oy * dy + oz * dz)
    c = ox * ox + oy * oy + oz * oz - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sq) / (2.0 * a)
    t_far = (-b + sq) / (2.0 * a)
    t = np.where(t_near > _RAY_EPS, t_near, t_far)
    return np.where(hit & (t > _RAY_EPS), t, np.inf)


def _intersect_box(eye, dx, dy, dz, center, half):
    """Axis-aligned cube via the slab method, vectorized per pixel."""
    t_lo = np.full(dx.shape, -np.inf)
    t_hi = np.full(dx.shape, np.inf)
    outside_parallel = np.zeros(dx.shape, dtype=bool)
    for d, o in ((dx, eye[0] - center[0]), (dy, eye[1] - center[1]), (dz, eye[2] - center[2])):
        parallel = d == 0.0
        with np.errstate(divide="ignore"):
            inv = np.where(parallel, np.inf, 1.0 / np.where(parallel, 1.0, d))
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
        t_lo = np.maximum(t_lo, np.where(parallel, -np.inf, np.minimum(t1, t2)))
        t_hi = np.minimum(t_hi, np.where(parallel, np.inf, np.maximum(t1, t2)))
        outside_parallel |= parallel & ((o < -half) | (o > half))
    hit = (t_hi >= np.maximum(t_lo, _RAY_EPS)) & ~outside_parallel
    t = np.where(t_lo > _RAY_EPS, t_lo, t_hi)
    return np.where(hit & (t > _RAY_EPS), t, np.inf)


def render(scene: Sequence[SceneObject], camera: CameraModel) -> IntensityFrame:
    """Log-intensity frame of the scene from the camera's pose.

    Nearest hit wins per pixel; rays that miss everything fall to the
    ground plane (z = 0) when pointing down, else to the sky band.
    Pure function of its inputs: identical calls give identical buffers.
    """
    a, b = _camera_grid(camera.width, camera.height, camera.horizontal_fov)
    c, s = math.cos(camera.yaw), math.sin(camera.yaw)
    # dir = forward + a*right + b*up with the pitch-0 basis written out.
    dx = c + a * s
    dy = s - a * c
    dz = b
    eye = camera.eye

    below = dz < 0.0
    t_ground = np.where(below, -eye[2] / np.where(below, dz, -1.0), np.inf)
    grounded = below & (t_ground > _RAY_EPS)
    t_best = np.where(grounded, t_ground, np.inf)
    intensity = np.where(grounded, GROUND_INTENSITY, SKY_INTENSITY)

    for obj in scene:
        if obj.shape == "sphere":
            t = _intersect_sphere(eye, dx, dy, dz, obj.center, obj.radius_or_half_extent)
        else:
            t = _intersect_box(eye, dx, dy, dz, obj.center, obj.radius_or_half_extent)
        closer = t < t_best
        intensity = np.where(closer, obj.intensity, intensity)
        t_best = np.where(closer, t, t_best)

    return np.log(intensity).astype(np.float32)
