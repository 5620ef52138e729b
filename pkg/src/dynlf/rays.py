"""Ray construction, depth sampling, pinhole cameras, and Fourier features."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn


class InvalidRange(ValueError):
    pass


class OutOfFrame(IndexError):
    pass


class EmptyInput(ValueError):
    pass


class DegenerateDirection(RuntimeError):
    pass


UNIT_TOL = 1e-6


def normalize(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateDirection("zero-length direction")
    return v / n


@dataclass
class Ray:
    """Oriented ray: origin `o` and unit direction `d`, both world-space 3-vectors."""

    o: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.o = np.asarray(self.o, dtype=np.float64).reshape(3)
        self.d = normalize(np.asarray(self.d, dtype=np.float64).reshape(3))


def check_time(t):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"timestamp {t} outside [0, 1]")
    return t


@dataclass
class RayBounds:
    """Componentwise closed intervals for (x_o, y_o, z_o, x_d, y_d, z_d)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(6)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(6)
        if np.any(self.lo > self.hi):
            raise InvalidRange("bounds require min <= max per component")

    def to_json(self):
        return {
            "origin_min": self.lo[:3].tolist(),
            "origin_max": self.hi[:3].tolist(),
            "dir_min": self.lo[3:].tolist(),
            "dir_max": self.hi[3:].tolist(),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(np.concatenate([doc["origin_min"], doc["dir_min"]]),
                   np.concatenate([doc["origin_max"], doc["dir_max"]]))


@dataclass
class RayEncoding:
    """K points sampled along a ray at strictly increasing depths in [near, far]."""

    points: np.ndarray  # (K, 3)
    depths: np.ndarray  # (K,)
    near: float
    far: float


@dataclass
class Camera:
    """Pinhole camera; pixel centers at (px+0.5, py+0.5), y-down image plane."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_y: float
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.look_at = np.asarray(self.look_at, dtype=np.float64).reshape(3)
        self.up = np.asarray(self.up, dtype=np.float64).reshape(3)
        if np.allclose(self.position, self.look_at):
            raise ValueError("camera position equals look_at")
        if not 0.0 < self.fov_y < np.pi:
            raise ValueError("fov_y must lie in (0, pi)")
        self.width = int(self.width)
        self.height = int(self.height)
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1")

    def basis(self):
        forward = normalize(self.look_at - self.position)
        right = normalize(np.cross(forward, self.up))
        down = np.cross(forward, right)  # y-down image axis, right-handed world
        return forward, right, down

    def to_json(self):
        return {
            "position": self.position.tolist(),
            "look_at": self.look_at.tolist(),
            "up": self.up.tolist(),
            "fov_y": self.fov_y,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(doc["position"], doc["look_at"], doc["up"],
                   float(doc["fov_y"]), int(doc["width"]), int(doc["height"]))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_depths(k, near, far, mode="evenly", rng=None, n_rays=None):
    """Depth values along rays; shape (k,) or (n_rays, k) when n_rays given.

    "evenly": s_i = near + i/(k-1) * (far-near), deterministic.
    "stratified": one uniform draw inside each of k equal sub-intervals.
    """
    near = float(near)
    far = float(far)
    if near >= far:
        raise InvalidRange(f"need near < far, got [{near}, {far}]")
    if k < 2:
        raise ValueError("need at least 2 points per ray")
    if mode == "evenly":
        s = near + (far - near) * np.arange(k) / (k - 1)
        return s if n_rays is None else np.broadcast_to(s, (n_rays, k)).copy()
    if mode == "stratified":
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        shape = (k,) if n_rays is None else (n_rays, k)
        u = rng.uniform(size=shape)
        edges = near + (far - near) * np.arange(k) / k
        width = (far - near) / k
        return edges + u * width
    raise ValueError(f"unknown sampling mode {mode!r}")


def sample_points(r: Ray, k, near, far, mode="evenly", rng=None):
    """K points x_i = o + s_i d along the ray, with the depths that made them."""
    s = sample_depths(k, near, far, mode=mode, rng=rng)
    pts = r.o[None, :] + s[:, None] * r.d[None, :]
    return RayEncoding(points=pts, depths=s, near=float(near), far=float(far))


def sample_training_ray(bounds: RayBounds, rng):
    """One ray with uniform components inside `bounds` plus t ~ U(0,1)."""
    o, d, t = sample_training_rays(bounds, 1, rng)
    return Ray(o[0], d[0]), float(t[0])


def sample_training_rays(bounds: RayBounds, n, rng):
    """Vectorized draw of n rays: per-component uniform, direction renormalized."""
    o = rng.uniform(bounds.lo[:3], bounds.hi[:3], size=(n, 3))
    d = rng.uniform(bounds.lo[3:], bounds.hi[3:], size=(n, 3))
    norms = np.linalg.norm(d, axis=1)
    bad = norms < 1e-9
    guard = 0
    while np.any(bad):
        d[bad] = rng.uniform(bounds.lo[3:], bounds.hi[3:], size=(int(bad.sum()), 3))
        norms = np.linalg.norm(d, axis=1)
        bad = norms < 1e-9
        guard += 1
        if guard > 64:
            raise DegenerateDirection("direction bounds only contain ~zero vectors")
    d /= norms[:, None]
    t = rng.uniform(0.0, 1.0, size=n)
    return o, d, t


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------


def camera_rays(cam: Camera):
    """All per-pixel rays of `cam`, row-major: returns (origins (HW,3), dirs (HW,3))."""
    forward, right, down = cam.basis()
    tan_y = np.tan(cam.fov_y / 2.0)
    tan_x = tan_y * cam.width / cam.height
    px = (np.arange(cam.width) + 0.5) / cam.width * 2.0 - 1.0
    py = (np.arange(cam.height) + 0.5) / cam.height * 2.0 - 1.0
    gx, gy = np.meshgrid(px, py)  # row-major: gy varies along rows
    dirs = (forward[None, :]
            + gx.reshape(-1, 1) * tan_x * right[None, :]
            + gy.reshape(-1, 1) * tan_y * down[None, :])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.position, dirs.shape).copy()
    return origins, dirs


def pixel_ray(cam: Camera, px, py):
    """Ray through the center of pixel (px, py)."""
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise OutOfFrame(f"pixel ({px}, {py}) outside {cam.width}x{cam.height}")
    forward, right, down = cam.basis()
    tan_y = np.tan(cam.fov_y / 2.0)
    tan_x = tan_y * cam.width / cam.height
    x = (px + 0.5) / cam.width * 2.0 - 1.0
    y = (py + 0.5) / cam.height * 2.0 - 1.0
    d = forward + x * tan_x * right + y * tan_y * down
    return Ray(cam.position.copy(), d)


def infer_bounds(cameras):
    """Componentwise min/max over every pixel ray of every camera."""
    if not cameras:
        raise EmptyInput("need at least one camera")
    lo = np.full(6, np.inf)
    hi = np.full(6, -np.inf)
    for cam in cameras:
        o, d = camera_rays(cam)
        stacked = np.concatenate([o, d], axis=1)
        lo = np.minimum(lo, stacked.min(axis=0))
        hi = np.maximum(hi, stacked.max(axis=0))
    return RayBounds(lo, hi)


def orbit_camera(center, radius, degrees, height=0.35, fov_y=0.7, size=(64, 64)):
    """Camera on a horizontal orbit around `center`, looking inward."""
    a = np.deg2rad(degrees)
    pos = np.asarray(center, dtype=np.float64) + radius * np.array(
        [np.sin(a), height, np.cos(a)])
    return Camera(pos, center, np.array([0.0, 1.0, 0.0]), fov_y, size[0], size[1])


# ---------------------------------------------------------------------------
# Fourier features
# ---------------------------------------------------------------------------


def positional_encode(v, n_freq):
    """Concatenate v with [sin(2^j pi v), cos(2^j pi v)] for j = 0..n_freq-1.

    Works on arrays of any shape (feature axis last) and on graph Vars, so
    encodings of network-produced coordinates stay differentiable.
    """
    if n_freq < 0:
        raise ValueError("n_freq must be non-negative")
    if n_freq == 0:
        return v
    return nn.fourier_features(v, n_freq)


def encoded_dim(d, n_freq):
    return d * (1 + 2 * n_freq)


# ---------------------------------------------------------------------------
# depth range helper
# ---------------------------------------------------------------------------


def depth_range(center, radius, origins, min_near=0.05):
    """near/far covering a bounding sphere from any of the given origins."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dist = np.linalg.norm(origins - np.asarray(center)[None, :], axis=1)
    near = max(min_near, float(dist.min() - radius))
    far = float(dist.max() + radius)
    if far <= near:
        far = near + 2.0 * radius + 1e-3
    return near, far
