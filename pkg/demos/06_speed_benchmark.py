# %% [markdown]
# # Why distill at all: one forward pass vs numerical integration
#
# A teacher frame evaluates the field at n_quad points per ray; the student
# evaluates one stack per ray. At n_quad=128 that is a large constant-factor
# gap in raw work, and it shows directly in the wall clock regardless of
# training state (timing only depends on architecture).

# %%
import time

import numpy as np

from dynlf import lightfield, rays, scenes, teacher

scene = scenes.make_scene("orbiter")
center, radius = scene.bounding_sphere()
cams = [rays.orbit_camera(center, 2.2 * radius, a, size=(128, 128))
        for a in np.linspace(0, 300, 6)]
bounds = rays.infer_bounds(cams)
cam = cams[0]
corners = np.stack(np.meshgrid(*[(bounds.lo[i], bounds.hi[i]) for i in range(3)],
                               indexing="ij"), axis=-1).reshape(-1, 3)
near, far = rays.depth_range(center, radius, corners)

student = lightfield.DynamicLightField(
    lightfield.config_for_scene(scene, bounds), seed=0)
slow = teacher.IntegrationTeacher(
    teacher.TeacherConfig(near=near, far=far, n_quad=128), seed=0)

# %%
student.render_frame(cam, 0.5)  # warm-up


def best_of(fn, reps=3):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


student_s = best_of(lambda: student.render_frame(cam, 0.5))
teacher_s = best_of(lambda: slow.render_frame(cam, 0.5), reps=1)
print(f"student: {student_s * 1e3:8.1f} ms per 128x128 frame "
      f"({student.param_count()} params)")
print(f"teacher: {teacher_s * 1e3:8.1f} ms per 128x128 frame "
      f"(n_quad=128, {slow.param_count()} params)")
print(f"speedup: {teacher_s / student_s:.1f}x")

# %% [markdown]
# The same comparison is available as `dynlf bench --quad 128 --size 128x128`.
