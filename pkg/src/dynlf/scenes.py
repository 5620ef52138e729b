"""Analytic time-varying scenes with exact per-ray colors and per-attribute masks.

These stand in for captured video: every training target is computable in
closed form (ray/primitive intersection plus Lambertian shading), so tests
own their ground truth and the distillation pipeline is fully reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rays as rg

AMBIENT = 0.1
DIFFUSE = 0.9


# ---------------------------------------------------------------------------
# trajectories and schedules
# ---------------------------------------------------------------------------


class PolyTraj:
    """3D polynomial in t: p(t) = sum_j coeffs[j] * t^j."""

    kind = "poly"

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1, 3)

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        powers = t[:, None] ** np.arange(len(self.coeffs))[None, :]
        return powers @ self.coeffs

    def to_json(self):
        return {"kind": "poly", "coeffs": self.coeffs.tolist()}


class OrbitTraj:
    """Circle around `center` in the plane normal to `axis`; `cycles` turns per unit t."""

    kind = "orbit"

    def __init__(self, center, radius, axis=(0.0, 1.0, 0.0), phase=0.0, cycles=1.0):
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.radius = float(radius)
        self.axis = rg.normalize(np.asarray(axis, dtype=np.float64))
        self.phase = float(phase)
        self.cycles = float(cycles)
        ref = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(ref, self.axis)) > 0.9:
            ref = np.array([0.0, 0.0, 1.0])
        self.u = rg.normalize(np.cross(self.axis, ref))
        self.v = np.cross(self.axis, self.u)

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        a = 2.0 * np.pi * self.cycles * t + self.phase
        return (self.center[None, :]
                + self.radius * (np.cos(a)[:, None] * self.u[None, :]
                                 + np.sin(a)[:, None] * self.v[None, :]))

    def to_json(self):
        return {"kind": "orbit", "center": self.center.tolist(),
                "radius": self.radius, "axis": self.axis.tolist(),
                "phase": self.phase, "cycles": self.cycles}


class SumTraj:
    """Sum of component trajectories (drift plus oscillation, and so on)."""

    kind = "sum"

    def __init__(self, parts):
        self.parts = list(parts)

    def __call__(self, t):
        out = self.parts[0](t)
        for part in self.parts[1:]:
            out = out + part(t)
        return out

    def to_json(self):
        return {"kind": "sum", "parts": [p.to_json() for p in self.parts]}


def trajectory_from_json(doc):
    if doc["kind"] == "poly":
        return PolyTraj(doc["coeffs"])
    if doc["kind"] == "orbit":
        return OrbitTraj(doc["center"], doc["radius"],
                         doc.get("axis", (0.0, 1.0, 0.0)), doc.get("phase", 0.0),
                         doc.get("cycles", 1.0))
    if doc["kind"] == "sum":
        return SumTraj([trajectory_from_json(p) for p in doc["parts"]])
    raise ValueError(f"unknown trajectory kind {doc['kind']!r}")


class PolySchedule:
    """Scalar polynomial in t."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        powers = t[:, None] ** np.arange(len(self.coeffs))[None, :]
        return powers @ self.coeffs

    def to_json(self):
        return {"coeffs": self.coeffs.tolist()}


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


@dataclass
class AttributeBinding:
    """Response of one primitive to a scalar control in [-1, 1].

    index is 1-based (slot 0 is the unaffected remainder). The control
    displaces the center by alpha*displacement and scales the size by
    (1 + alpha*scale).
    """

    index: int
    displacement: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 0.0

    def __post_init__(self):
        self.index = int(self.index)
        if self.index < 1:
            raise ValueError("attribute index is 1-based")
        self.displacement = np.asarray(self.displacement, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)

    def to_json(self):
        return {"index": self.index, "displacement": self.displacement.tolist(),
                "scale": self.scale}


class Sphere:
    kind = "sphere"

    def __init__(self, center, radius, albedo, attribute=None, stripes=None):
        self.center = center
        self.radius = radius if isinstance(radius, PolySchedule) else PolySchedule([radius])
        self.albedo = np.asarray(albedo, dtype=np.float64).reshape(3)
        self.attribute = attribute
        # object-space stripe texture {"axis", "freq", "amp"}: the pattern
        # rides along with the sphere, so canonical alignment pays off
        self.stripes = None
        if stripes is not None:
            self.stripes = {
                "axis": rg.normalize(np.asarray(stripes["axis"], dtype=np.float64)),
                "freq": float(stripes["freq"]),
                "amp": float(stripes["amp"]),
            }

    def surface_albedo(self, normals):
        if self.stripes is None:
            return np.broadcast_to(self.albedo, (normals.shape[0], 3))
        u = normals @ self.stripes["axis"]
        amp = self.stripes["amp"]
        factor = (1.0 + amp * np.sin(self.stripes["freq"] * u)) / (1.0 + amp)
        return factor[:, None] * self.albedo[None, :]

    def state(self, t, alpha):
        """Per-ray center (B,3) and radius (B,) after the attribute response."""
        c = self.center(t)
        r = self.radius(t)
        if self.attribute is not None and alpha is not None:
            a = alpha[:, self.attribute.index - 1]
            c = c + a[:, None] * self.attribute.displacement[None, :]
            r = r * (1.0 + a * self.attribute.scale)
        return c, r

    def intersect(self, o, d, t, alpha):
        """Nearest positive hit distance per ray (inf when missing) and normals."""
        c, r = self.state(t, alpha)
        oc = o - c
        b = np.einsum("ij,ij->i", oc, d)
        disc = b * b - (np.einsum("ij,ij->i", oc, oc) - r * r)
        hit = disc >= 0.0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        dist = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
        dist = np.where(hit, dist, np.inf)
        safe = np.where(np.isfinite(dist), dist, 0.0)
        p = o + safe[:, None] * d
        n = (p - c) / np.maximum(r, 1e-12)[:, None]
        return dist, n

    def to_json(self):
        doc = {"kind": "sphere", "center": self.center.to_json(),
               "radius": self.radius.to_json(), "albedo": self.albedo.tolist()}
        if self.attribute is not None:
            doc["attribute"] = self.attribute.to_json()
        if self.stripes is not None:
            doc["stripes"] = {"axis": self.stripes["axis"].tolist(),
                              "freq": self.stripes["freq"],
                              "amp": self.stripes["amp"]}
        return doc


class Box:
    kind = "box"

    def __init__(self, center, half_extent, albedo, attribute=None):
        self.center = center
        self.half_extent = np.asarray(half_extent, dtype=np.float64).reshape(3)
        self.albedo = np.asarray(albedo, dtype=np.float64).reshape(3)
        self.attribute = attribute

    def surface_albedo(self, normals):
        return np.broadcast_to(self.albedo, (normals.shape[0], 3))

    def state(self, t, alpha):
        c = self.center(t)
        h = np.broadcast_to(self.half_extent, (c.shape[0], 3)).copy()
        if self.attribute is not None and alpha is not None:
            a = alpha[:, self.attribute.index - 1]
            c = c + a[:, None] * self.attribute.displacement[None, :]
            h = h * (1.0 + a * self.attribute.scale)[:, None]
        return c, h

    def intersect(self, o, d, t, alpha):
        c, h = self.state(t, alpha)
        oc = o - c
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-h - oc) * inv
            t2 = (h - oc) * inv
        # axis-parallel rays: interval is (-inf, inf) when inside the slab, empty outside
        lo = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        hi = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
        par = np.abs(d) < 1e-15
        inside = np.abs(oc) <= h
        lo = np.where(par & inside, -np.inf, lo)
        hi = np.where(par & inside, np.inf, hi)
        lo = np.where(par & ~inside, np.inf, lo)
        hi = np.where(par & ~inside, -np.inf, hi)
        t_near = lo.max(axis=1)
        t_far = hi.min(axis=1)
        hit = (t_near <= t_far) & (t_far > 1e-9)
        dist = np.where(hit, np.where(t_near > 1e-9, t_near, t_far), np.inf)
        safe = np.where(np.isfinite(dist), dist, 0.0)
        p = o + safe[:, None] * d
        rel = (p - c) / np.maximum(h, 1e-12)
        axis = np.abs(rel).argmax(axis=1)
        n = np.zeros_like(p)
        n[np.arange(len(p)), axis] = np.sign(rel[np.arange(len(p)), axis])
        return dist, n

    def to_json(self):
        doc = {"kind": "box", "center": self.center.to_json(),
               "half_extent": self.half_extent.tolist(),
               "albedo": self.albedo.tolist()}
        if self.attribute is not None:
            doc["attribute"] = self.attribute.to_json()
        return doc


def primitive_from_json(doc):
    attr = None
    if "attribute" in doc:
        a = doc["attribute"]
        attr = AttributeBinding(a["index"], a.get("displacement", (0, 0, 0)),
                                a.get("scale", 0.0))
    center = trajectory_from_json(doc["center"])
    if doc["kind"] == "sphere":
        return Sphere(center, PolySchedule(doc["radius"]["coeffs"]),
                      doc["albedo"], attr, stripes=doc.get("stripes"))
    if doc["kind"] == "box":
        return Box(center, doc["half_extent"], doc["albedo"], attr)
    raise ValueError(f"unknown primitive kind {doc['kind']!r}")


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------


class OracleScene:
    def __init__(self, primitives, background=(0.12, 0.13, 0.16),
                 light_dir=(-0.3, 0.8, -0.5), name="custom"):
        self.primitives = list(primitives)
        self.background = np.asarray(background, dtype=np.float64).reshape(3)
        self.light_dir = rg.normalize(np.asarray(light_dir, dtype=np.float64))
        self.name = name

    @property
    def n_attr(self):
        idx = [p.attribute.index for p in self.primitives if p.attribute is not None]
        return max(idx) if idx else 0

    # -- geometry --------------------------------------------------------

    def nearest_hit(self, o, d, t, alpha=None):
        """Vectorized nearest-hit query.

        o, d: (B, 3); t: scalar or (B,); alpha: None, (n,), or (B, n).
        Returns (primitive index (B,), -1 for miss; distance; normal).
        """
        o = np.atleast_2d(np.asarray(o, dtype=np.float64))
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        n_rays = o.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n_rays,))
        if alpha is not None:
            alpha = np.asarray(alpha, dtype=np.float64)
            if alpha.ndim == 1:
                alpha = np.broadcast_to(alpha, (n_rays, alpha.shape[0]))
            if np.any(np.abs(alpha) > 1.0 + 1e-12):
                raise ValueError("attribute values must lie in [-1, 1]")
        best = np.full(n_rays, np.inf)
        idx = np.full(n_rays, -1, dtype=np.int64)
        normals = np.zeros((n_rays, 3))
        for i, prim in enumerate(self.primitives):
            dist, nrm = prim.intersect(o, d, t, alpha)
            closer = dist < best
            best = np.where(closer, dist, best)
            idx = np.where(closer, i, idx)
            normals = np.where(closer[:, None], nrm, normals)
        return idx, best, normals

    def color(self, o, d, t, alpha=None):
        """Exact ray colors (B, 3): Lambertian shading or background."""
        idx, _, normals = self.nearest_hit(o, d, t, alpha)
        n_rays = idx.shape[0]
        out = np.broadcast_to(self.background, (n_rays, 3)).copy()
        lam = np.maximum(normals @ self.light_dir, 0.0)
        shade = DIFFUSE * lam + AMBIENT
        for i, prim in enumerate(self.primitives):
            sel = idx == i
            if not np.any(sel):
                continue
            albedo = prim.surface_albedo(normals[sel])
            out[sel] = shade[sel, None] * albedo
        return np.clip(out, 0.0, 1.0)

    def hit_attribute_slot(self, o, d, t, alpha=None):
        """Per-ray mask slot: 0 for background/unbound, i for attribute i."""
        idx, _, _ = self.nearest_hit(o, d, t, alpha)
        slots = np.zeros(idx.shape[0], dtype=np.int64)
        for i, prim in enumerate(self.primitives):
            if prim.attribute is not None:
                slots[idx == i] = prim.attribute.index
        return slots

    def mask_values(self, o, d, t, alpha=None, n_attr=None):
        """Per-ray hard mask vectors (B, n+1) on the simplex."""
        n = self.n_attr if n_attr is None else n_attr
        slots = self.hit_attribute_slot(o, d, t, alpha)
        out = np.zeros((slots.shape[0], n + 1))
        out[np.arange(slots.shape[0]), slots] = 1.0
        return out

    # -- camera-space ground truth ----------------------------------------

    def render(self, cam, t, alpha=None):
        o, d = rg.camera_rays(cam)
        return self.color(o, d, t, alpha).reshape(cam.height, cam.width, 3)

    def mask_images(self, cam, t, alpha=None, n_attr=None):
        """Per-pixel hard attribute masks, shape (H, W, n+1); slot 0 complement."""
        o, d = rg.camera_rays(cam)
        m = self.mask_values(o, d, t, alpha, n_attr=n_attr)
        return m.reshape(cam.height, cam.width, -1)

    # -- extents -----------------------------------------------------------

    def bounding_sphere(self, n_t=33):
        """Conservative (center, radius) over t in [0,1] and alpha in {-1,0,1}."""
        ts = np.linspace(0.0, 1.0, n_t)
        alphas = [None]
        if self.n_attr:
            eye = np.eye(self.n_attr)
            alphas = [np.zeros(self.n_attr)]
            for i in range(self.n_attr):
                alphas.extend([eye[i], -eye[i]])
        far = 0.0
        for prim in self.primitives:
            for a in alphas:
                ab = None if a is None else np.broadcast_to(a, (n_t, self.n_attr))
                if isinstance(prim, Sphere):
                    c, r = prim.state(ts, ab)
                    far = max(far, float((np.linalg.norm(c, axis=1) + r).max()))
                else:
                    c, h = prim.state(ts, ab)
                    far = max(far, float((np.linalg.norm(c, axis=1)
                                          + np.linalg.norm(h, axis=1)).max()))
        return np.zeros(3), far + 1e-6

    def to_json(self):
        return {"name": self.name,
                "background": self.background.tolist(),
                "light_dir": self.light_dir.tolist(),
                "primitives": [p.to_json() for p in self.primitives]}

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls([primitive_from_json(p) for p in doc["primitives"]],
                   background=doc.get("background", (0.12, 0.13, 0.16)),
                   light_dir=doc.get("light_dir", (-0.3, 0.8, -0.5)),
                   name=doc.get("name", "custom"))


def load_scene_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return OracleScene.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


def make_scene(name):
    """Built-in scenes: 'orbiter', 'split', 'attrib-face'."""
    if name == "orbiter":
        sphere = Sphere(OrbitTraj(np.zeros(3), 0.55, axis=(0, 1, 0)),
                        PolySchedule([0.35]), albedo=(0.82, 0.28, 0.2))
        return OracleScene([sphere], name=name)
    if name == "split":
        # one body at t=0 that separates into two: a genuine topology change
        # once the drift exceeds the diameters. Each body also loops on its
        # own vertical circle at a different rate, so the motion is strongly
        # ray-dependent, and the stripe textures ride along with each body:
        # both are what canonical-space alignment is for.
        shared = dict(radius=0.3, axis=(1.0, 0.0, 0.0), phase=np.pi / 2)
        left = Sphere(SumTraj([PolyTraj([[0, 0, 0], [-0.8, 0.0, 0.0]]),
                               OrbitTraj((0, 0, 0), cycles=2.0, **shared)]),
                      PolySchedule([0.45]), albedo=(0.25, 0.55, 0.85),
                      stripes={"axis": (0.2, 1.0, 0.1), "freq": 9.0, "amp": 0.85})
        right = Sphere(SumTraj([PolyTraj([[0, 0, 0], [0.8, 0.15, 0.0]]),
                                OrbitTraj((0, 0, 0), cycles=3.0, **shared)]),
                       PolySchedule([0.45]), albedo=(0.85, 0.55, 0.2),
                       stripes={"axis": (1.0, 0.15, 0.3), "freq": 7.0, "amp": 0.85})
        return OracleScene([left, right], name=name)
    if name == "attrib-face":
        head = Sphere(PolyTraj([[0, 0, 0], [0.12, 0, 0]]), PolySchedule([0.52]),
                      albedo=(0.75, 0.62, 0.48))
        eye1 = Sphere(PolyTraj([[-0.26, 0.2, 0.4], [0.12, 0, 0]]),
                      PolySchedule([0.18]), albedo=(0.2, 0.75, 0.3),
                      attribute=AttributeBinding(1, displacement=(0.0, 0.15, 0.0),
                                                 scale=0.35))
        eye2 = Sphere(PolyTraj([[0.26, 0.2, 0.4], [0.12, 0, 0]]),
                      PolySchedule([0.18]), albedo=(0.3, 0.35, 0.85),
                      attribute=AttributeBinding(2, displacement=(0.0, 0.15, 0.0),
                                                 scale=0.35))
        return OracleScene([head, eye1, eye2], name=name)
    raise ValueError(f"unknown scene {name!r}; try orbiter, split, attrib-face")


def oracle_color(scene, ray, t, alpha=None):
    """Single-ray color; alpha is an optional attribute vector."""
    a = None if alpha is None or len(np.atleast_1d(alpha)) == 0 else np.atleast_1d(alpha)
    return scene.color(ray.o[None, :], ray.d[None, :], rg.check_time(t), a)[0]


def oracle_mask(scene, cam, t, alpha=None, n_attr=None):
    return scene.mask_images(cam, rg.check_time(t), alpha, n_attr=n_attr)
