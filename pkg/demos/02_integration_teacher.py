# %% [markdown]
# # The slow teacher: a radiance field rendered by quadrature
#
# The teacher maps encoded (point, time) to color and density and composites
# n_quad samples per ray. Its cost is linear in n_quad, which is the whole
# reason a per-ray student is worth distilling. Here we train a small teacher
# on the orbiter scene and look at both its fit and its cost curve.

# %%
import os
import time

import numpy as np

from dynlf import distill, metrics, rays, scenes, teacher

OUT = os.path.join(os.path.dirname(__file__), "out", "02_teacher")
os.makedirs(OUT, exist_ok=True)

scene = scenes.make_scene("orbiter")
center, radius = scene.bounding_sphere()
cams = [rays.orbit_camera(center, 2.2 * radius, a, size=(48, 48))
        for a in np.linspace(0, 300, 6)]
bounds = rays.infer_bounds(cams)

# %% [markdown]
# ## Training against exact colors
#
# The field is fit with Adam on random (ray, t) pairs; the target colors are
# analytic, so there is no data loading and no label noise.

# %%
corners = np.stack(np.meshgrid(*[(bounds.lo[i], bounds.hi[i]) for i in range(3)],
                               indexing="ij"), axis=-1).reshape(-1, 3)
near, far = rays.depth_range(center, radius, corners)
cfg = teacher.TeacherConfig(layers=4, width=64, n_quad=64, near=near, far=far)
tcfg = teacher.TeacherTrainConfig(iters=600, batch=192, n_quad_train=24, seed=0)
t0 = time.time()
model, history = teacher.train_integration_teacher(scene, bounds, cfg, tcfg)
print(f"trained {model.param_count()} params in {time.time() - t0:.0f}s; "
      f"loss {history[0][1]:.4f} -> {history[-1][1]:.4f}")
distill.save_loss_curve(os.path.join(OUT, "teacher_loss.csv"), history)

# %%
cam = rays.orbit_camera(center, 2.2 * radius, 45.0, size=(64, 64))
for t in (0.0, 0.5):
    img = model.render_frame(cam, t)
    truth = scene.render(cam, t)
    print(f"t={t}: teacher PSNR {metrics.psnr(img, truth):.1f} dB")
    metrics.write_image(os.path.join(OUT, f"teacher_t{t:.1f}.png"), img)
    metrics.write_image(os.path.join(OUT, f"truth_t{t:.1f}.png"), truth)

# %% [markdown]
# ## Cost is linear in the number of quadrature samples
#
# Doubling n_quad doubles the work: this is the structural bottleneck the
# per-ray student removes entirely.

# %%
rng = np.random.default_rng(0)
o = rng.normal(size=(1024, 3))
d = rng.normal(size=(1024, 3))
d /= np.linalg.norm(d, axis=1, keepdims=True)
model.render_rays(o, d, 0.5, n_quad=16)  # warm-up
for n_quad in (16, 32, 64, 128, 256):
    t0 = time.time()
    model.render_rays(o, d, 0.5, n_quad=n_quad)
    print(f"n_quad={n_quad:4d}: {(time.time() - t0) * 1e3:7.1f} ms per 1024 rays")
