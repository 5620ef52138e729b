"""Three-phase training: KD dataset generation, distillation, fine-tuning.

Phase 1 pretrains a teacher (see `teacher`); phase 2 distills the fast
per-ray student on S teacher-labeled random rays; phase 3 fine-tunes the
student on per-pixel rays of real frames (here: exact oracle renders).
Targets for the controllable student additionally carry per-ray mask rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import rays as rg
from .controllable import ControllableLightField
from .scenes import OracleScene
from .teacher import IntegrationTeacher


class Diverged(RuntimeError):
    pass


class ArityMismatch(ValueError):
    pass


class EmptyLosses(ValueError):
    pass


DATASET_MAGIC = b"DLKD\0v1"


@dataclass
class DistillDataset:
    """S teacher-labeled samples, stored column-wise."""

    o: np.ndarray       # (S, 3)
    d: np.ndarray       # (S, 3)
    t: np.ndarray       # (S,)
    alpha: np.ndarray   # (S, n)
    rgb: np.ndarray     # (S, 3)
    masks: np.ndarray   # (S, n+1)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = self.o.shape[0]
        for name in ("d", "t", "alpha", "rgb", "masks"):
            if getattr(self, name).shape[0] != s:
                raise ValueError(f"column {name} has wrong length")
        if self.rgb.min() < 0 or self.rgb.max() > 1:
            raise ValueError("target colors must lie in [0, 1]")

    def __len__(self):
        return self.o.shape[0]

    @property
    def n_attr(self):
        return self.alpha.shape[1]


def generate_kd_dataset(teacher, bounds: rg.RayBounds, s, seed, scene=None,
                        n_attr=0, chunk=4096):
    """Draw s (ray, t[, alpha]) samples and label them with the teacher.

    `teacher` is either an OracleScene (exact colors, the fast path) or an
    IntegrationTeacher (quadrature renders, faithful to the slow phase-1
    model). Mask targets always come from the analytic scene, so `scene` is
    required when n_attr > 0.
    """
    if s < 1:
        raise ValueError("dataset size must be >= 1")
    rng = np.random.default_rng(seed)
    o, d, t = rg.sample_training_rays(bounds, s, rng)
    alpha = rng.uniform(-1.0, 1.0, size=(s, n_attr))
    if isinstance(teacher, OracleScene):
        rgb = teacher.color(o, d, t, alpha if n_attr else None)
        teacher_id = f"oracle:{teacher.name}"
        mask_scene = scene or teacher
    elif isinstance(teacher, IntegrationTeacher):
        rgb = np.empty((s, 3), dtype=np.float64)
        for lo in range(0, s, chunk):
            sl = slice(lo, lo + chunk)
            rgb[sl] = np.clip(nn.value_of(teacher.render_rays(o[sl], d[sl], t[sl])), 0, 1)
        teacher_id = f"integration:{teacher.meta.get('scene', 'unknown')}"
        mask_scene = scene
    else:
        raise TypeError("teacher must be an OracleScene or IntegrationTeacher")
    if n_attr:
        if mask_scene is None:
            raise ValueError("mask targets need the analytic scene")
        masks = mask_scene.mask_values(o, d, t, alpha, n_attr=n_attr)
    else:
        masks = np.ones((s, 1))
    meta = {
        "s": int(s),
        "n_attr": int(n_attr),
        "teacher": teacher_id,
        "scene": getattr(mask_scene, "name", None),
        "seed": int(seed),
        "bounds": bounds.to_json(),
    }
    f32 = np.float32
    return DistillDataset(o.astype(f32), d.astype(f32), t.astype(f32),
                          alpha.astype(f32), rgb.astype(f32), masks.astype(f32),
                          meta)


def save_dataset(path, data: DistillDataset):
    header = json.dumps(data.meta).encode("utf-8")
    table = np.concatenate([data.o, data.d, data.t[:, None], data.alpha,
                            data.rgb, data.masks], axis=1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(np.array([len(header)], dtype="<u4").tobytes())
        fh.write(header)
        fh.write(table.tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    m = len(DATASET_MAGIC)
    if raw[:m] != DATASET_MAGIC:
        raise ValueError(f"bad dataset magic in {path}")
    n = int(np.frombuffer(raw[m:m + 4], dtype="<u4")[0])
    meta = json.loads(raw[m + 4:m + 4 + n].decode("utf-8"))
    s, n_attr = meta["s"], meta["n_attr"]
    width = 6 + 1 + n_attr + 3 + (n_attr + 1)
    table = np.frombuffer(raw[m + 4 + n:], dtype="<f4")
    if table.size != s * width:
        raise ValueError(f"dataset payload has {table.size} floats, "
                         f"expected {s * width}")
    table = table.reshape(s, width)
    c = np.cumsum([3, 3, 1, n_attr, 3])
    return DistillDataset(table[:, :c[0]].copy(), table[:, c[0]:c[1]].copy(),
                          table[:, c[1]:c[2]].ravel().copy(),
                          table[:, c[2]:c[3]].copy(), table[:, c[3]:c[4]].copy(),
                          table[:, c[4]:].copy(), meta)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch: int = 512
    iters: int = 2000
    lambda_mask: float = 0.1
    hard_q: float = 0.05
    hard_rho: float = 0.25
    mining: bool = False
    seed: int = 0
    point_mode: str = "stratified"

    def __post_init__(self):
        if not 0.0 <= self.hard_q <= 1.0:
            raise ValueError("hard_q must lie in [0, 1]")
        if not 0.0 <= self.hard_rho < 1.0:
            raise ValueError("hard_rho must lie in [0, 1)")
        if self.lambda_mask < 0:
            raise ValueError("lambda_mask must be >= 0")

    def to_json(self):
        return dict(self.__dict__)


def mine_hard_examples(per_sample_losses, q, rho, rng):
    """Index multiset for the next epoch: a rho fraction drawn (with
    replacement) from the top-q loss quantile, the rest uniform."""
    losses = np.asarray(per_sample_losses, dtype=np.float64)
    if losses.size == 0:
        raise EmptyLosses("no per-sample losses to mine")
    if not (0.0 <= q <= 1.0 and 0.0 <= rho <= 1.0):
        raise ValueError("q and rho must lie in [0, 1]")
    n = losses.size
    k = max(1, int(np.ceil(q * n)))
    top = np.argsort(losses)[::-1][:k]
    out = np.empty(n, dtype=np.int64)
    hard = rng.uniform(size=n) < rho
    out[hard] = rng.choice(top, size=int(hard.sum()), replace=True)
    out[~hard] = rng.integers(0, n, size=int((~hard).sum()))
    return out


def _loss_and_grads(model, o, d, t, alpha, rgb_target, mask_target, cfg, rng):
    """One recorded forward/backward; returns (flat grads, loss, mask_loss)."""
    leaves, collect = model.flat.leaves()
    params = model.flat.net_params(leaves)
    controllable = isinstance(model, ControllableLightField)
    if controllable:
        pred, m = model.forward_batch(o, d, t, alpha=alpha, mode=cfg.point_mode,
                                      rng=rng, params=params, want_masks=True)
    else:
        pred = model.forward_batch(o, d, t, mode=cfg.point_mode, rng=rng,
                                   params=params)
    loss = nn.mse_loss(pred, rgb_target)
    mask_loss = None
    total = loss
    if controllable and cfg.lambda_mask > 0.0 and model.n_attr > 0:
        mask_loss = nn.mse_loss(m, mask_target)
        total = nn.add(loss, nn.mul(np.float32(cfg.lambda_mask), mask_loss))
    nn.backward(total)
    return (collect(), float(nn.value_of(loss)),
            None if mask_loss is None else float(nn.value_of(mask_loss)))


def _per_sample_losses(model, data, chunk=4096):
    """Per-sample color error (and mask error for controllable students),
    computed on the deterministic inference path."""
    color = np.empty(len(data), dtype=np.float64)
    controllable = isinstance(model, ControllableLightField)
    mask = np.empty(len(data), dtype=np.float64) if controllable else None
    for lo in range(0, len(data), chunk):
        sl = slice(lo, lo + chunk)
        if controllable:
            pred, m = model.forward_batch(data.o[sl], data.d[sl], data.t[sl],
                                          alpha=data.alpha[sl], want_masks=True)
            color[sl] = np.mean((nn.value_of(pred) - data.rgb[sl]) ** 2, axis=1)
            mask[sl] = np.mean((np.asarray(nn.value_of(m)) - data.masks[sl]) ** 2,
                               axis=1)
        else:
            pred = nn.value_of(model.forward_batch(data.o[sl], data.d[sl], data.t[sl]))
            color[sl] = np.mean((pred - data.rgb[sl]) ** 2, axis=1)
    return color, mask


def distill(student, data: DistillDataset, cfg: TrainConfig):
    """Minibatch Adam on the color MSE (plus weighted mask MSE when the
    student is controllable). Returns (student, history) where history rows
    are (iter, loss) or (iter, loss, mask_loss)."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if student.n_attr != data.n_attr:
        raise ArityMismatch(
            f"student has {student.n_attr} attributes, dataset {data.n_attr}")
    rng = np.random.default_rng(cfg.seed)
    state = nn.adam_init(student.flat.size, lr=cfg.lr)
    history = []
    epoch_len = max(1, len(data) // cfg.batch)
    pool = None
    for it in range(cfg.iters):
        if cfg.mining and it % epoch_len == 0 and it > 0:
            color_err, mask_err = _per_sample_losses(student, data)
            pool = mine_hard_examples(color_err, cfg.hard_q, cfg.hard_rho, rng)
            if mask_err is not None and cfg.lambda_mask > 0.0:
                # confused-attention rays get their own half of the hard pool
                mask_pool = mine_hard_examples(mask_err, cfg.hard_q, cfg.hard_rho,
                                               rng)
                half = len(pool) // 2
                pool = np.concatenate([pool[:half], mask_pool[:len(pool) - half]])
        if pool is not None:
            idx = pool[rng.integers(0, len(pool), size=cfg.batch)]
        else:
            idx = rng.integers(0, len(data), size=cfg.batch)
        grads, loss, mask_loss = _loss_and_grads(
            student, data.o[idx], data.d[idx], data.t[idx], data.alpha[idx],
            data.rgb[idx], data.masks[idx], cfg, rng)
        if not np.isfinite(loss) or (mask_loss is not None and not np.isfinite(mask_loss)):
            raise Diverged(f"loss became non-finite at iter {it}")
        nn.adam_step(student.flat.vector, grads, state)
        student.flat.mark_updated()
        history.append((it, loss) if mask_loss is None else (it, loss, mask_loss))
    student.meta.setdefault("phases", []).append({
        "phase": "distill", "iters": cfg.iters, "seed": cfg.seed,
        "teacher": data.meta.get("teacher"), "scene": data.meta.get("scene"),
        "s": len(data)})
    return student, history


def pixel_ray_table(scene, cams, frames_t, alpha=None):
    """Per-pixel training rows (o, d, t, rgb) over cameras x timestamps."""
    os_, ds_, ts_, cs_ = [], [], [], []
    for cam in cams:
        o, d = rg.camera_rays(cam)
        for t in frames_t:
            os_.append(o)
            ds_.append(d)
            ts_.append(np.full(o.shape[0], rg.check_time(t)))
            cs_.append(scene.color(o, d, float(t), alpha))
    return (np.concatenate(os_).astype(np.float32),
            np.concatenate(ds_).astype(np.float32),
            np.concatenate(ts_).astype(np.float32),
            np.concatenate(cs_).astype(np.float32))


def finetune(student, scene, cams, frames_t, cfg: TrainConfig):
    """Fine-tune on the per-pixel rays of the given cameras and timestamps.

    Only those rays are ever trained on; the camera set is recorded in the
    checkpoint metadata so held-out views can be audited.
    """
    o, d, t, rgb = pixel_ray_table(
        scene, cams, frames_t,
        np.zeros(student.n_attr) if student.n_attr else None)
    rng = np.random.default_rng(cfg.seed)
    state = nn.adam_init(student.flat.size, lr=cfg.lr)
    history = []
    controllable = isinstance(student, ControllableLightField)
    for it in range(cfg.iters):
        idx = rng.integers(0, o.shape[0], size=cfg.batch)
        leaves, collect = student.flat.leaves()
        params = student.flat.net_params(leaves)
        if controllable:
            pred = student.forward_batch(o[idx], d[idx], t[idx],
                                         alpha=np.zeros((len(idx), student.n_attr)),
                                         mode=cfg.point_mode, rng=rng, params=params)
        else:
            pred = student.forward_batch(o[idx], d[idx], t[idx],
                                         mode=cfg.point_mode, rng=rng, params=params)
        loss = nn.mse_loss(pred, rgb[idx])
        loss_val = float(nn.value_of(loss))
        if not np.isfinite(loss_val):
            raise Diverged(f"fine-tune loss became non-finite at iter {it}")
        nn.backward(loss)
        nn.adam_step(student.flat.vector, collect(), state)
        student.flat.mark_updated()
        history.append((it, loss_val))
    student.meta.setdefault("phases", []).append({
        "phase": "finetune", "iters": cfg.iters, "seed": cfg.seed,
        "scene": scene.name, "frames_t": [float(x) for x in frames_t],
        "cams": [cam.to_json() for cam in cams]})
    return student, history


def save_loss_curve(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        has_mask = any(len(row) > 2 for row in history)
        fh.write("iter,loss,mask_loss\n" if has_mask else "iter,loss\n")
        for row in history:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x)
                              for x in row) + "\n")
