# %% [markdown]
# # Distilling the fast per-ray student
#
# The student never integrates: it deforms the input ray into a canonical
# ray, samples K=16 points along it, appends a learned per-ray code, and
# regresses RGB in one pass. Training data is S random rays labeled by a
# teacher; here we use the analytic oracle as the (exact) teacher, which is
# the fast path for experiments.

# %%
import os
import time

import numpy as np

from dynlf import distill, lightfield, metrics, rays, scenes

OUT = os.path.join(os.path.dirname(__file__), "out", "03_student")
os.makedirs(OUT, exist_ok=True)

scene = scenes.make_scene("orbiter")
center, radius = scene.bounding_sphere()
cams = [rays.orbit_camera(center, 2.2 * radius, a, size=(64, 64))
        for a in np.linspace(0, 300, 6)]
bounds = rays.infer_bounds(cams)

# %% [markdown]
# ## KD dataset: S labeled rays
#
# Rays are drawn componentwise-uniform inside bounds inferred from the
# training rig (directions renormalized), t uniform in [0, 1]. Hard example
# mining later oversamples the rays the student gets most wrong, which is
# how the few object-hitting rays get their share of gradient.

# %%
data = distill.generate_kd_dataset(scene, bounds, s=12000, seed=0)
print(f"{len(data)} samples, teacher = {data.meta['teacher']}")

# %%
cfg = lightfield.config_for_scene(scene, bounds)
student = lightfield.DynamicLightField(cfg, seed=0)
print(f"student: {student.param_count()} params, "
      f"color regressor {cfg.lfn_layers}x{cfg.lfn_width}")
t0 = time.time()
student, history = distill.distill(
    student, data, distill.TrainConfig(iters=1200, batch=512, lr=2e-3,
                                       mining=True, seed=0))
print(f"distilled in {time.time() - t0:.0f}s; "
      f"loss {history[0][1]:.4f} -> {history[-1][1]:.5f}")
distill.save_loss_curve(os.path.join(OUT, "distill_loss.csv"), history)

# %% [markdown]
# ## Held-out views
#
# The evaluation cameras sit at orbit angles the training rig never used.

# %%
held = [rays.orbit_camera(center, 2.2 * radius, a, size=(64, 64))
        for a in (37.0, 215.0)]
for t in (0.0, 0.5, 1.0):
    img = student.render_frame(held[0], t)
    truth = scene.render(held[0], t)
    print(f"t={t:.1f}: held-out PSNR {metrics.psnr(img, truth):5.2f} dB, "
          f"SSIM {metrics.ssim(img, truth):.3f}")
    metrics.write_image(os.path.join(OUT, f"student_t{t:.1f}.png"), img)
    metrics.write_image(os.path.join(OUT, f"truth_t{t:.1f}.png"), truth)

# %% [markdown]
# ## Fine-tuning on pixel rays
#
# Distillation followed by fine-tuning on the original frames is the full
# recipe: the student initializes from the distilled weights and trains
# against per-pixel colors of the training views.

# %%
student, ft_hist = distill.finetune(
    student, scene, cams, [0.0, 0.25, 0.5, 0.75, 1.0],
    distill.TrainConfig(iters=400, batch=512, lr=1e-3, seed=0))
img = student.render_frame(held[0], 0.5)
truth = scene.render(held[0], 0.5)
print(f"after fine-tune: held-out PSNR {metrics.psnr(img, truth):.2f} dB")
student.meta.update({"scene": scene.name})
student.save(os.path.join(OUT, "student_orbiter.dylin"))
print("checkpoint ->", os.path.join(OUT, "student_orbiter.dylin"))
