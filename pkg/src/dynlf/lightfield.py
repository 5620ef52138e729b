"""Fast per-ray color model: one forward pass maps (ray, time) straight to RGB.

Three variants share the same deep residual color regressor:

* "full"      — a small MLP deforms the input ray into a canonical ray
                (offsets on origin and direction, direction renormalized, so
                rays stay rays and never bend), and a second small MLP lifts
                (ray, time) to a hyperspace code appended to the point
                features. Handles motion plus topology changes.
* "no_mlps"   — neither helper net; the raw time step is concatenated to the
                sampled-point features instead (repeated to the code width so
                the color regressor is size-identical across variants).
* "pointwise" — a single MLP jointly offsets the K sampled points (this one
                may bend rays); no hyperspace code, time enters the offset
                net only.

Both helper heads start at zero, so an untrained "full" model is exactly the
identity deformation with a zero code; distillation starts from a stable
point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from . import rays as rg


class VariantMismatch(RuntimeError):
    pass


class MalformedFile(ValueError):
    pass


VARIANTS = ("full", "no_mlps", "pointwise")

CHECKPOINT_MAGIC = b"DYLIN\0v1"


@dataclass
class LightFieldConfig:
    variant: str = "full"
    k_points: int = 16
    near: float = 0.5
    far: float = 5.0
    deform_layers: int = 4
    deform_width: int = 64
    hyper_layers: int = 3
    hyper_width: int = 32
    hyper_dim: int = 8
    lfn_layers: int = 16
    lfn_width: int = 128
    skip_every: int = 2
    pd_layers: int = 4
    pd_width: int = 128
    freq_points: int = 6
    freq_t: int = 4
    freq_ray: int = 4
    repeat_code: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.k_points < 2:
            raise ValueError("k_points must be >= 2")
        if self.hyper_dim < 1:
            raise ValueError("hyper_dim must be positive")
        for name in ("deform_layers", "deform_width", "hyper_layers", "hyper_width",
                     "lfn_layers", "lfn_width", "pd_layers", "pd_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.near >= self.far:
            raise ValueError("need near < far")

    # derived dims ---------------------------------------------------------

    @property
    def point_feat_dim(self):
        return rg.encoded_dim(3, self.freq_points)

    @property
    def ray_feat_dim(self):
        return 2 * rg.encoded_dim(3, self.freq_ray) + rg.encoded_dim(1, self.freq_t)

    def color_in_dim(self, n_codes=1):
        pts = self.k_points * self.point_feat_dim
        if self.variant == "pointwise":
            return pts
        if self.repeat_code:
            return self.k_points * (self.point_feat_dim + n_codes * self.hyper_dim)
        return pts + n_codes * self.hyper_dim

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


def paper_scale_config(variant="full", **overrides):
    """The published model sizes: 7x128 deformation, 6x64 hyperspace (code
    width 8), 88x256 color regressor, 5x256 pointwise ablation, K=16."""
    base = dict(variant=variant, k_points=16,
                deform_layers=7, deform_width=128,
                hyper_layers=6, hyper_width=64, hyper_dim=8,
                lfn_layers=88, lfn_width=256, skip_every=2,
                pd_layers=5, pd_width=256)
    base.update(overrides)
    return LightFieldConfig(**base)


class DynamicLightField:
    """Ray-to-color regressor; parameters live in one flat vector."""

    def __init__(self, config: LightFieldConfig, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        cfg = config
        named = []
        self.t_net = self.h_net = self.pd_net = None
        if cfg.variant == "full":
            # deformation starts as the exact identity (stable distillation);
            # the hyperspace head starts small but alive so time information
            # reaches the color regressor from the first iteration
            self.t_net = nn.make_mlp(
                [cfg.ray_feat_dim] + [cfg.deform_width] * (cfg.deform_layers - 1) + [6],
                rng, dtype=dtype, zero_last=True)
            self.h_net = nn.make_mlp(
                [cfg.ray_feat_dim] + [cfg.hyper_width] * (cfg.hyper_layers - 1)
                + [cfg.hyper_dim], rng, dtype=dtype, last_scale=0.1)
            named += [("deform", self.t_net), ("hyper", self.h_net)]
        elif cfg.variant == "pointwise":
            pd_in = cfg.k_points * cfg.point_feat_dim + rg.encoded_dim(1, cfg.freq_t)
            self.pd_net = nn.make_mlp(
                [pd_in] + [cfg.pd_width] * (cfg.pd_layers - 1) + [3 * cfg.k_points],
                rng, dtype=dtype, zero_last=True)
            named += [("pointwise", self.pd_net)]
        self.color_net = nn.make_mlp(
            [cfg.color_in_dim()] + [cfg.lfn_width] * (cfg.lfn_layers - 1) + [3],
            rng, skip_every=cfg.skip_every, dtype=dtype, last_scale=0.1)
        named += [("color", self.color_net)]
        self.flat = nn.FlatParams(named, dtype=dtype)
        self.meta = {}

    @property
    def n_attr(self):
        return 0

    def param_count(self):
        return self.flat.size

    # -- pieces -------------------------------------------------------------

    def _ray_features(self, o, d, t):
        cfg = self.config
        return nn.concat([
            rg.positional_encode(o, cfg.freq_ray),
            rg.positional_encode(d, cfg.freq_ray),
            rg.positional_encode(nn.reshape(t, (-1, 1)), cfg.freq_t),
        ], axis=1)

    def deform_batch(self, o, d, t, params=None):
        """Canonical-space rays (o', d') for a batch; 'full' variant only."""
        if self.config.variant != "full":
            raise VariantMismatch("only the full variant deforms rays")
        feats = self._ray_features(o, d, t)
        delta = self.t_net.forward(feats, params=None if params is None else params["deform"])
        o2 = nn.add(o, nn.slice_cols(delta, 0, 3))
        d2 = nn.normalize_rows(nn.add(d, nn.slice_cols(delta, 3, 6)))
        return o2, d2

    def hyper_batch(self, o, d, t, params=None):
        if self.config.variant != "full":
            raise VariantMismatch("only the full variant computes hyperspace codes")
        feats = self._ray_features(o, d, t)
        return self.h_net.forward(feats, params=None if params is None else params["hyper"])

    def deform_ray(self, r: rg.Ray, t):
        """One ray in, one canonical ray out; no bending by construction."""
        o, d = self.deform_batch(self._row(r.o), self._row(r.d),
                                 np.asarray([rg.check_time(t)], dtype=self.dtype))
        return rg.Ray(np.asarray(o[0], dtype=np.float64),
                      np.asarray(d[0], dtype=np.float64))

    def hyper_code(self, r: rg.Ray, t):
        w = self.hyper_batch(self._row(r.o), self._row(r.d),
                             np.asarray([rg.check_time(t)], dtype=self.dtype))
        return np.asarray(w[0])

    def _row(self, v):
        return np.asarray(v, dtype=self.dtype).reshape(1, 3)

    # -- forward ------------------------------------------------------------

    def _point_features(self, o, d, depths):
        """Encoded sample points for constant (non-deformed) rays."""
        pts = o[:, None, :] + depths[:, :, None] * d[:, None, :]
        feats = rg.positional_encode(pts, self.config.freq_points)
        return feats.reshape(o.shape[0], -1)

    def _forward_core(self, o, d, t, depths, params=None):
        cfg = self.config
        b = o.shape[0]
        k = cfg.k_points
        if cfg.variant == "full":
            o2, d2 = self.deform_batch(o, d, t, params=params)
            w = self.hyper_batch(o, d, t, params=params)
            pts = nn.add(nn.reshape(o2, (b, 1, 3)),
                         nn.mul(nn.reshape(depths, (b, k, 1)),
                                nn.reshape(d2, (b, 1, 3))))
            pfeat = rg.positional_encode(pts, cfg.freq_points)
            if cfg.repeat_code:
                wk = nn.add(nn.reshape(w, (b, 1, cfg.hyper_dim)),
                            np.zeros((b, k, cfg.hyper_dim), dtype=self.dtype))
                x = nn.reshape(nn.concat([pfeat, wk], axis=2), (b, -1))
            else:
                x = nn.concat([nn.reshape(pfeat, (b, -1)), w], axis=1)
        elif cfg.variant == "no_mlps":
            feats = self._point_features(o, d, depths)
            tfeat = np.repeat(t.reshape(-1, 1), cfg.hyper_dim, axis=1)
            x = np.concatenate([feats, tfeat], axis=1)
        else:  # pointwise
            pts = o[:, None, :] + depths[:, :, None] * d[:, None, :]
            feats = rg.positional_encode(pts, cfg.freq_points).reshape(b, -1)
            tfeat = rg.positional_encode(t.reshape(-1, 1), cfg.freq_t)
            pd_in = np.concatenate([feats, tfeat], axis=1)
            offsets = self.pd_net.forward(
                pd_in, params=None if params is None else params["pointwise"])
            pts2 = nn.add(pts, nn.reshape(offsets, (b, k, 3)))
            x = nn.reshape(rg.positional_encode(pts2, cfg.freq_points), (b, -1))
        out = self.color_net.forward(
            x, params=None if params is None else params["color"])
        return nn.sigmoid(out)

    def forward_batch(self, o, d, t, mode="evenly", rng=None, params=None):
        """Colors (B, 3) in [0,1] for rays (o, d) at times t.

        mode "evenly" is the deterministic inference path; "stratified"
        jitters sample depths (training only) and needs an rng.
        """
        o = np.atleast_2d(np.asarray(o)).astype(self.dtype)
        d = np.atleast_2d(np.asarray(d)).astype(self.dtype)
        t = np.broadcast_to(np.asarray(t, dtype=self.dtype), (o.shape[0],)).copy()
        cfg = self.config
        depths = rg.sample_depths(cfg.k_points, cfg.near, cfg.far, mode=mode,
                                  rng=rng, n_rays=o.shape[0]).astype(self.dtype)
        return self._forward_core(o, d, t, depths, params=params)

    def forward(self, r: rg.Ray, t):
        return np.asarray(self.forward_batch(self._row(r.o), self._row(r.d),
                                             rg.check_time(t))[0])

    def render_frame(self, cam: rg.Camera, t, chunk=4096):
        o, d = rg.camera_rays(cam)
        out = np.empty((o.shape[0], 3), dtype=self.dtype)
        for s in range(0, o.shape[0], chunk):
            sl = slice(s, s + chunk)
            out[sl] = nn.value_of(self.forward_batch(o[sl], d[sl], t))
        return out.reshape(cam.height, cam.width, 3).astype(np.float64)

    # -- checkpoints ----------------------------------------------------------

    def save(self, path):
        save_checkpoint(path, CHECKPOINT_MAGIC, self.config.to_json(), self.meta,
                        self.flat.vector)

    @classmethod
    def load(cls, path):
        doc, params = load_checkpoint(path, CHECKPOINT_MAGIC)
        model = cls(LightFieldConfig.from_json(doc["config"]))
        if params.size != model.flat.size:
            raise MalformedFile(
                f"checkpoint has {params.size} parameters, model needs {model.flat.size}")
        model.flat.set_vector(params)
        model.meta = doc.get("meta", {})
        return model


# ---------------------------------------------------------------------------
# checkpoint container (shared with the controllable extension)
# ---------------------------------------------------------------------------


def save_checkpoint(path, magic, config_doc, meta, vector):
    blob = json.dumps({"config": config_doc, "meta": meta}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(np.array([len(blob)], dtype="<u4").tobytes())
        fh.write(blob)
        fh.write(np.asarray(vector).astype("<f4").tobytes())


def load_checkpoint(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:8] != magic:
        raise MalformedFile(f"bad checkpoint magic in {path}")
    n = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if len(raw) < 12 + n:
        raise MalformedFile(f"truncated checkpoint {path}")
    try:
        doc = json.loads(raw[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFile(f"unreadable checkpoint header: {exc}") from exc
    params = np.frombuffer(raw[12 + n:], dtype="<f4").copy()
    return doc, params


def load_any_checkpoint(path):
    """Dispatch on magic: returns a DynamicLightField or ControllableLightField."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == CHECKPOINT_MAGIC:
        return DynamicLightField.load(path)
    from .controllable import CONTROLLABLE_MAGIC, ControllableLightField
    if head == CONTROLLABLE_MAGIC:
        return ControllableLightField.load(path)
    raise MalformedFile(f"unknown checkpoint magic in {path}")


def config_for_scene(scene, bounds: rg.RayBounds, **overrides):
    """Desk-scale config with near/far covering the scene from any origin in bounds."""
    center, radius = scene.bounding_sphere()
    corners = np.stack(np.meshgrid(*[(bounds.lo[i], bounds.hi[i]) for i in range(3)],
                                   indexing="ij"), axis=-1).reshape(-1, 3)
    near, far = rg.depth_range(center, radius, corners)
    base = dict(near=near, far=far)
    base.update(overrides)
    return LightFieldConfig(**base)
