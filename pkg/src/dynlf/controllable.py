"""Controllable extension: scalar attribute inputs with per-attribute codes and masks.

Each attribute strength alpha_i in [-1, 1] is lifted by its own small MLP to
a code w_i; a mask regressor turns (w_i, w, o, d) into a scalar attention
value m_i in [0, 1] that gates the code before the shared color regressor.
Slot 0 is the remainder 1 - sum(m_i), the part of the scene no attribute
touches. Raw mask sums above 1 are projected back onto the simplex, so the
mask vector is always a valid partition of unity.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import nn
from . import rays as rg
from .lightfield import (DynamicLightField, LightFieldConfig, MalformedFile,
                         VariantMismatch, load_checkpoint, save_checkpoint)

CONTROLLABLE_MAGIC = b"CODYL\0v1"


class AttributeOutOfRange(ValueError):
    pass


@dataclass
class ControllableConfig(LightFieldConfig):
    n_attr: int = 1
    attr_layers: int = 3
    attr_width: int = 32
    mask_layers: int = 4
    mask_width: int = 64

    def __post_init__(self):
        super().__post_init__()
        if self.variant != "full":
            raise ValueError("the controllable model builds on the full variant")
        if self.n_attr < 0:
            raise ValueError("n_attr must be >= 0")
        if self.repeat_code:
            raise ValueError("per-point code repetition is a base-model experiment flag")

    @property
    def attr_in_dim(self):
        return self.ray_feat_dim + 1  # encoded (o, d, t) plus the raw strength

    @property
    def mask_in_dim(self):
        return 2 * self.hyper_dim + 2 * rg.encoded_dim(3, self.freq_ray)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


def paper_scale_controllable(n_attr, **overrides):
    """Published sizes: attribute nets of 5 layers x 128 units, codes of width 8."""
    base = dict(n_attr=n_attr, attr_layers=5, attr_width=128,
                deform_layers=7, deform_width=128,
                hyper_layers=6, hyper_width=64, hyper_dim=8,
                lfn_layers=88, lfn_width=256, skip_every=2)
    base.update(overrides)
    return ControllableConfig(**base)


@dataclass
class MaskSet:
    """Attention masks m_0..m_n on the probability simplex (sum exactly 1)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if np.any(self.values < -1e-12) or np.any(self.values > 1 + 1e-12):
            raise ValueError("mask values must lie in [0, 1]")
        if abs(self.values.sum() - 1.0) > 1e-9:
            raise ValueError("mask values must sum to 1")

    def __getitem__(self, i):
        return float(self.values[i])

    def __len__(self):
        return len(self.values)


def mask_simplex(raw):
    """Project raw per-attribute masks (B, n) in [0,1] onto the simplex.

    When the row sum stays <= 1 the values pass through and slot 0 absorbs
    the remainder; otherwise the row is rescaled to sum 1 and slot 0 is 0.
    Differentiable almost everywhere; accepts Vars or arrays. Returns (B, n+1)
    with slot 0 first.
    """
    s = nn.sum_(raw, axis=1, keepdims=True)
    scale = nn.div(1.0, nn.add(1.0, nn.relu(nn.sub(s, 1.0))))
    scaled = nn.mul(raw, scale)
    rest = nn.sub(1.0, nn.mul(s, scale))
    return nn.concat([rest, scaled], axis=1)


class ControllableLightField(DynamicLightField):
    """Full-variant ray regressor plus per-attribute code and mask networks."""

    def __init__(self, config: ControllableConfig, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        cfg = config
        self.t_net = nn.make_mlp(
            [cfg.ray_feat_dim] + [cfg.deform_width] * (cfg.deform_layers - 1) + [6],
            rng, dtype=dtype, zero_last=True)
        self.h_net = nn.make_mlp(
            [cfg.ray_feat_dim] + [cfg.hyper_width] * (cfg.hyper_layers - 1)
            + [cfg.hyper_dim], rng, dtype=dtype, last_scale=0.1)
        self.pd_net = None
        self.attr_nets = [
            nn.make_mlp([cfg.attr_in_dim] + [cfg.attr_width] * (cfg.attr_layers - 1)
                        + [cfg.hyper_dim], rng, dtype=dtype, last_scale=0.1)
            for _ in range(cfg.n_attr)]
        self.mask_nets = [
            nn.make_mlp([cfg.mask_in_dim] + [cfg.mask_width] * (cfg.mask_layers - 1)
                        + [1], rng, dtype=dtype)
            for _ in range(cfg.n_attr)]
        self.color_net = nn.make_mlp(
            [cfg.color_in_dim(n_codes=cfg.n_attr + 1)]
            + [cfg.lfn_width] * (cfg.lfn_layers - 1) + [3],
            rng, skip_every=cfg.skip_every, dtype=dtype, last_scale=0.1)
        named = [("deform", self.t_net), ("hyper", self.h_net)]
        named += [(f"attr{i + 1}", net) for i, net in enumerate(self.attr_nets)]
        named += [(f"mask{i + 1}", net) for i, net in enumerate(self.mask_nets)]
        named += [("color", self.color_net)]
        self.flat = nn.FlatParams(named, dtype=dtype)
        self.meta = {}

    @property
    def n_attr(self):
        return self.config.n_attr

    # -- attribute plumbing ---------------------------------------------------

    def _check_alpha(self, alpha, b):
        alpha = np.asarray(alpha, dtype=self.dtype)
        if alpha.ndim == 1:
            if alpha.shape[0] != self.n_attr:
                raise AttributeOutOfRange(
                    f"expected {self.n_attr} attribute values, got {alpha.shape[0]}")
            alpha = np.broadcast_to(alpha, (b, self.n_attr)).copy()
        if alpha.shape != (b, self.n_attr):
            raise AttributeOutOfRange(
                f"expected {self.n_attr} attribute values, got shape {alpha.shape}")
        if alpha.size and np.abs(alpha).max() > 1 + 1e-9:
            raise AttributeOutOfRange("attribute strengths must lie in [-1, 1]")
        return alpha

    def attr_codes_batch(self, o, d, t, alpha, params=None):
        """Per-attribute codes [w_1..w_n], each (B, hyper_dim); w_i ignores alpha_j."""
        feats = self._ray_features(o, d, t)
        codes = []
        for i, net in enumerate(self.attr_nets):
            x = nn.concat([feats, nn.slice_cols(alpha, i, i + 1)], axis=1)
            codes.append(net.forward(
                x, params=None if params is None else params[f"attr{i + 1}"]))
        return codes

    def masks_batch(self, codes, w, o, d, params=None):
        """Simplex mask rows (B, n+1) from codes, the base code, and the ray."""
        if not self.attr_nets:
            ones = np.ones((nn.value_of(w).shape[0], 1), dtype=self.dtype)
            return ones
        ray_feat = nn.concat([rg.positional_encode(o, self.config.freq_ray),
                              rg.positional_encode(d, self.config.freq_ray)], axis=1)
        raws = []
        for i, net in enumerate(self.mask_nets):
            x = nn.concat([codes[i], w, ray_feat], axis=1)
            logit = net.forward(
                x, params=None if params is None else params[f"mask{i + 1}"])
            raws.append(nn.sigmoid(logit))
        return mask_simplex(nn.concat(raws, axis=1))

    def attr_codes(self, r: rg.Ray, t, alpha):
        alpha = self._check_alpha(alpha, 1)
        codes = self.attr_codes_batch(self._row(r.o), self._row(r.d),
                                      np.asarray([rg.check_time(t)], dtype=self.dtype),
                                      alpha)
        return [np.asarray(c[0]) for c in codes]

    def masks(self, r: rg.Ray, t, alpha):
        """MaskSet for one ray (computed in double precision)."""
        o, d = self._row(r.o), self._row(r.d)
        t_arr = np.asarray([rg.check_time(t)], dtype=self.dtype)
        alpha = self._check_alpha(alpha, 1)
        codes = self.attr_codes_batch(o, d, t_arr, alpha)
        w = self.hyper_batch(o, d, t_arr)
        m = self.masks_batch(codes, w, o, d)
        return MaskSet(_simplex_f64(np.asarray(m[0], dtype=np.float64)))

    # -- forward ---------------------------------------------------------------

    def _forward_core(self, o, d, t, depths, params=None, alpha=None,
                      want_masks=False):
        cfg = self.config
        b = o.shape[0]
        k = cfg.k_points
        alpha = self._check_alpha(np.zeros((b, self.n_attr), dtype=self.dtype)
                                  if alpha is None else alpha, b)
        o2, d2 = self.deform_batch(o, d, t, params=params)
        w = self.hyper_batch(o, d, t, params=params)
        codes = self.attr_codes_batch(o, d, t, alpha, params=params)
        m = self.masks_batch(codes, w, o, d, params=params)
        gated = [nn.mul(nn.slice_cols(m, 0, 1), w)]
        for i, wi in enumerate(codes):
            gated.append(nn.mul(nn.slice_cols(m, i + 1, i + 2), wi))
        pts = nn.add(nn.reshape(o2, (b, 1, 3)),
                     nn.mul(nn.reshape(depths, (b, k, 1)), nn.reshape(d2, (b, 1, 3))))
        pfeat = rg.positional_encode(pts, cfg.freq_points)
        x = nn.concat([nn.reshape(pfeat, (b, -1))] + gated, axis=1)
        rgb = nn.sigmoid(self.color_net.forward(
            x, params=None if params is None else params["color"]))
        if want_masks:
            return rgb, m
        return rgb

    def forward_batch(self, o, d, t, alpha=None, mode="evenly", rng=None,
                      params=None, want_masks=False):
        o = np.atleast_2d(np.asarray(o)).astype(self.dtype)
        d = np.atleast_2d(np.asarray(d)).astype(self.dtype)
        t = np.broadcast_to(np.asarray(t, dtype=self.dtype), (o.shape[0],)).copy()
        cfg = self.config
        depths = rg.sample_depths(cfg.k_points, cfg.near, cfg.far, mode=mode,
                                  rng=rng, n_rays=o.shape[0]).astype(self.dtype)
        return self._forward_core(o, d, t, depths, params=params, alpha=alpha,
                                  want_masks=want_masks)

    def forward(self, r: rg.Ray, t, alpha=None):
        return np.asarray(self.forward_batch(self._row(r.o), self._row(r.d),
                                             rg.check_time(t), alpha=alpha)[0])

    def render_frame(self, cam: rg.Camera, t, alpha=None, chunk=4096):
        img, _ = self.render_with_masks(cam, t, alpha=alpha, chunk=chunk)
        return img

    def render_with_masks(self, cam: rg.Camera, t, alpha=None, chunk=4096):
        """(H, W, 3) image plus (H, W, n+1) mask images satisfying the simplex."""
        o, d = rg.camera_rays(cam)
        img = np.empty((o.shape[0], 3), dtype=self.dtype)
        masks = np.empty((o.shape[0], self.n_attr + 1), dtype=np.float64)
        for s in range(0, o.shape[0], chunk):
            sl = slice(s, s + chunk)
            rgb, m = self.forward_batch(o[sl], d[sl], t, alpha=alpha,
                                        want_masks=True)
            img[sl] = nn.value_of(rgb)
            masks[sl] = _simplex_f64(np.asarray(nn.value_of(m), dtype=np.float64))
        h, wd = cam.height, cam.width
        return (img.reshape(h, wd, 3).astype(np.float64),
                masks.reshape(h, wd, self.n_attr + 1))

    # -- checkpoints -------------------------------------------------------------

    def save(self, path):
        save_checkpoint(path, CONTROLLABLE_MAGIC, self.config.to_json(), self.meta,
                        self.flat.vector)

    @classmethod
    def load(cls, path):
        doc, params = load_checkpoint(path, CONTROLLABLE_MAGIC)
        model = cls(ControllableConfig.from_json(doc["config"]))
        if params.size != model.flat.size:
            raise MalformedFile(
                f"checkpoint has {params.size} parameters, model needs {model.flat.size}")
        model.flat.set_vector(params)
        model.meta = doc.get("meta", {})
        return model


def _simplex_f64(rows):
    """Re-derive the simplex in float64 from per-attribute slots (clean sums)."""
    attrs = rows[..., 1:]
    s = attrs.sum(axis=-1, keepdims=True)
    scale = 1.0 / np.maximum(s, 1.0)
    attrs = attrs * scale
    rest = np.maximum(0.0, 1.0 - attrs.sum(axis=-1, keepdims=True))
    return np.concatenate([rest, attrs], axis=-1)
