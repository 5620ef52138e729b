"""Slow integration-based teacher: a pointwise radiance field rendered by quadrature.

The field maps an encoded (point, time) to RGB and a non-negative density;
ray colors come from emission-absorption compositing over n_quad evenly
spaced samples. Rendering cost is linear in n_quad, which is exactly what
the fast per-ray student removes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import rays as rg


class Diverged(RuntimeError):
    pass


def composite_quadrature(rgb, sigma, delta):
    """Emission-absorption compositing.

    rgb: (B, K, 3); sigma: (B, K) non-negative; delta: scalar, (K,), or (B, K)
    depth gaps. Returns (B, 3):
        C = sum_k T_k (1 - exp(-sigma_k delta_k)) c_k,
        T_k = exp(-sum_{j<k} sigma_j delta_j).
    Accepts Vars or arrays.
    """
    od = nn.mul(sigma, delta)
    trans = nn.exp(nn.neg(nn.cumsum_exclusive(od, axis=1)))
    alpha = nn.sub(1.0, nn.exp(nn.neg(od)))
    weights = nn.mul(trans, alpha)
    wv = nn.reshape(weights, (*nn.value_of(weights).shape, 1))
    return nn.sum_(nn.mul(wv, rgb), axis=1)


@dataclass
class TeacherConfig:
    layers: int = 6
    width: int = 128
    n_quad: int = 128
    near: float = 0.5
    far: float = 5.0
    freq_x: int = 6
    freq_t: int = 4

    def to_json(self):
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


class IntegrationTeacher:
    """Radiance field + quadrature renderer. Pure function of its parameters."""

    def __init__(self, config: TeacherConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        in_dim = rg.encoded_dim(3, config.freq_x) + rg.encoded_dim(1, config.freq_t)
        dims = [in_dim] + [config.width] * (config.layers - 1) + [4]
        self.field_net = nn.make_mlp(dims, rng, skip_every=2)
        self.flat = nn.FlatParams([("field", self.field_net)])
        self.meta = {}

    def param_count(self):
        return self.flat.size

    def field(self, x, t, params=None):
        """rgb (N,3) in [0,1] and density (N,) >= 0 at points x (N,3), times t (N,)."""
        feat = nn.concat([
            rg.positional_encode(x, self.config.freq_x),
            rg.positional_encode(nn.reshape(t, (-1, 1)), self.config.freq_t),
        ], axis=1)
        out = self.field_net.forward(feat, params=params)
        rgb = nn.sigmoid(nn.slice_cols(out, 0, 3))
        sigma = nn.softplus(nn.slice_cols(out, 3, 4, squeeze=True))
        return rgb, sigma

    def render_rays(self, o, d, t, n_quad=None, params=None):
        """Composited colors (B, 3) for rays (o, d) at times t."""
        cfg = self.config
        k = cfg.n_quad if n_quad is None else int(n_quad)
        o = np.atleast_2d(np.asarray(o, dtype=np.float32))
        d = np.atleast_2d(np.asarray(d, dtype=np.float32))
        b = o.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float32), (b,))
        delta = (cfg.far - cfg.near) / k
        s = (cfg.near + (np.arange(k, dtype=np.float32) + 0.5) * delta)
        pts = (o[:, None, :] + s[None, :, None] * d[:, None, :]).reshape(b * k, 3)
        tt = np.repeat(t, k)
        rgb, sigma = self.field(pts.astype(np.float32), tt, params=params)
        rgb = nn.reshape(rgb, (b, k, 3))
        sigma = nn.reshape(sigma, (b, k))
        return composite_quadrature(rgb, sigma, np.float32(delta))

    def render_frame(self, cam, t, n_quad=None, chunk=2048):
        o, d = rg.camera_rays(cam)
        out = np.empty((o.shape[0], 3), dtype=np.float32)
        for s in range(0, o.shape[0], chunk):
            sl = slice(s, s + chunk)
            out[sl] = nn.value_of(self.render_rays(o[sl], d[sl], t, n_quad=n_quad))
        return out.reshape(cam.height, cam.width, 3).astype(np.float64)

    # -- checkpoint ---------------------------------------------------------

    MAGIC = b"TEACH\0v1"

    def save(self, path):
        doc = {"config": self.config.to_json(), "meta": self.meta}
        blob = json.dumps(doc).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(np.array([len(blob)], dtype="<u4").tobytes())
            fh.write(blob)
            fh.write(self.flat.vector.astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:8] != cls.MAGIC:
            raise ValueError("not a teacher checkpoint (bad magic)")
        n = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
        doc = json.loads(raw[12:12 + n].decode("utf-8"))
        params = np.frombuffer(raw[12 + n:], dtype="<f4")
        teacher = cls(TeacherConfig.from_json(doc["config"]))
        if params.size != teacher.flat.size:
            raise ValueError("parameter count mismatch in teacher checkpoint")
        teacher.flat.set_vector(params)
        teacher.meta = doc.get("meta", {})
        return teacher


def render_integrated(teacher: IntegrationTeacher, ray, t, n_quad=None):
    """Single-ray quadrature render; pure function of the teacher parameters."""
    return nn.value_of(teacher.render_rays(ray.o, ray.d, rg.check_time(t),
                                           n_quad=n_quad))[0]


@dataclass
class TeacherTrainConfig:
    iters: int = 2000
    batch: int = 256
    lr: float = 5e-4
    n_quad_train: int = 32
    seed: int = 0
    log_every: int = 100


def train_integration_teacher(scene, bounds, cfg: TeacherConfig = None,
                              train_cfg: TeacherTrainConfig = None):
    """Fit the field by Adam on randomly sampled (ray, t) pairs against exact colors."""
    cfg = cfg or TeacherConfig()
    train_cfg = train_cfg or TeacherTrainConfig()
    teacher = IntegrationTeacher(cfg, seed=train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    state = nn.adam_init(teacher.flat.size, lr=train_cfg.lr)
    history = []
    for it in range(train_cfg.iters):
        o, d, t = rg.sample_training_rays(bounds, train_cfg.batch, rng)
        target = scene.color(o, d, t).astype(np.float32)
        leaves, collect = teacher.flat.leaves()
        params = teacher.flat.net_params(leaves)["field"]
        pred = teacher.render_rays(o, d, t, n_quad=train_cfg.n_quad_train,
                                   params=params)
        loss = nn.mse_loss(pred, target)
        loss_val = float(nn.value_of(loss))
        if not np.isfinite(loss_val):
            raise Diverged(f"teacher loss became {loss_val} at iter {it}")
        nn.backward(loss)
        nn.adam_step(teacher.flat.vector, collect(), state)
        teacher.flat.mark_updated()
        history.append((it, loss_val))
    teacher.meta = {"scene": scene.name, "final_loss": history[-1][1] if history else None,
                    "iters": train_cfg.iters, "seed": train_cfg.seed,
                    "bounds": bounds.to_json()}
    return teacher, history
