"""Command-line pipeline: teach, gen, distill, finetune, render, eval, ablate, bench, serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import distill as dst
from . import metrics
from . import rays as rg
from . import scenes
from . import service as svc
from . import teacher as tch
from .controllable import ControllableConfig, ControllableLightField
from .lightfield import DynamicLightField, LightFieldConfig, config_for_scene, \
    load_any_checkpoint


def parse_size(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from exc


def load_config_doc(text):
    if not text:
        return {}
    if text.strip().startswith("{"):
        return json.loads(text)
    with open(text, "r", encoding="utf-8") as fh:
        return json.load(fh)


def get_scene(args):
    if args.scene is None:
        raise SystemExit2("--scene is required for this command")
    if os.path.exists(args.scene):
        return scenes.load_scene_file(args.scene)
    return scenes.make_scene(args.scene)


class SystemExit2(Exception):
    """Usage error surfaced with exit code 2."""


def scene_rig(scene, n_views=6, size=(64, 64), distance_factor=2.6):
    center, radius = scene.bounding_sphere()
    dist = distance_factor * radius
    cams = [rg.orbit_camera(center, dist, a, size=size)
            for a in np.linspace(0.0, 300.0, n_views)]
    return cams, center, radius, dist


def default_frames(n):
    return list(np.round(np.linspace(0.0, 1.0, n), 6))


def student_for(scene, bounds, variant, n_attr, overrides):
    center, radius = scene.bounding_sphere()
    if n_attr:
        cfg_kw = dict(overrides)
        cfg_kw.setdefault("n_attr", n_attr)
        corners = np.stack(np.meshgrid(*[(bounds.lo[i], bounds.hi[i]) for i in range(3)],
                                       indexing="ij"), axis=-1).reshape(-1, 3)
        near, far = rg.depth_range(center, radius, corners)
        cfg_kw.setdefault("near", near)
        cfg_kw.setdefault("far", far)
        return ControllableConfig(**cfg_kw)
    return config_for_scene(scene, bounds, variant=variant, **overrides)


def attach_scene_meta(model, scene, bounds, seed):
    center, radius = scene.bounding_sphere()
    model.meta.update({
        "scene": scene.name,
        "scene_center": [float(x) for x in center],
        "scene_radius": float(radius),
        "cam_distance": float(2.6 * radius),
        "bounds": bounds.to_json(),
        "seed": int(seed),
    })


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_teach(args):
    scene = get_scene(args)
    doc = load_config_doc(args.config)
    cams, center, radius, dist = scene_rig(scene, size=parse_size(args.size))
    bounds = rg.infer_bounds(cams)
    corners = np.stack(np.meshgrid(*[(bounds.lo[i], bounds.hi[i]) for i in range(3)],
                                   indexing="ij"), axis=-1).reshape(-1, 3)
    near, far = rg.depth_range(center, radius, corners)
    cfg_kw = dict(near=near, far=far, n_quad=args.quad)
    cfg_kw.update(doc.get("teacher", {}))
    cfg = tch.TeacherConfig(**cfg_kw)
    train_kw = dict(iters=args.iters, seed=args.seed)
    train_kw.update(doc.get("teacher_train", {}))
    tcfg = tch.TeacherTrainConfig(**train_kw)
    model, history = tch.train_integration_teacher(scene, bounds, cfg, tcfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"teacher_{scene.name}.teach")
    model.save(path)
    dst.save_loss_curve(os.path.join(args.out, f"teacher_{scene.name}_loss.csv"),
                        history)
    print(f"teacher trained on {scene.name}: final loss "
          f"{history[-1][1] if history else float('nan'):.3e} -> {path}")
    return 0


def cmd_gen(args):
    scene = get_scene(args)
    cams, *_ = scene_rig(scene, size=parse_size(args.size))
    bounds = rg.infer_bounds(cams)
    if args.teacher == "oracle":
        teacher_model = scene
    else:
        teacher_model = tch.IntegrationTeacher.load(args.teacher)
    n_attr = scene.n_attr if args.attrs is None else args.attrs
    data = dst.generate_kd_dataset(teacher_model, bounds, args.s, args.seed,
                                   scene=scene, n_attr=n_attr)
    out = args.out
    if os.path.isdir(out) or out.endswith(os.sep):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, f"kd_{scene.name}_s{args.s}_seed{args.seed}.dlkd")
    dst.save_dataset(out, data)
    print(f"wrote {len(data)} samples ({data.n_attr} attrs, "
          f"teacher {data.meta['teacher']}) -> {out}")
    return 0


def cmd_distill(args):
    data = dst.load_dataset(args.data)
    scene = scenes.make_scene(data.meta["scene"])
    bounds = rg.RayBounds.from_json(data.meta["bounds"])
    doc = load_config_doc(args.config)
    cfg = student_for(scene, bounds, args.variant, data.n_attr,
                      doc.get("model", {}))
    if data.n_attr:
        student = ControllableLightField(cfg, seed=args.seed)
    else:
        student = DynamicLightField(cfg, seed=args.seed)
    train_kw = dict(iters=args.iters, batch=args.batch, lr=args.lr, seed=args.seed)
    train_kw.update(doc.get("train", {}))
    tcfg = dst.TrainConfig(**train_kw)
    student, history = dst.distill(student, data, tcfg)
    attach_scene_meta(student, scene, bounds, args.seed)
    student.save(args.out)
    if args.loss_csv:
        dst.save_loss_curve(args.loss_csv, history)
    print(f"distilled {cfg.variant if not data.n_attr else 'controllable'} "
          f"student: loss {history[0][1]:.4f} -> {history[-1][1]:.4f}, "
          f"{student.param_count()} params -> {args.out}")
    return 0


def cmd_finetune(args):
    student = load_any_checkpoint(args.ckpt)
    scene = scenes.make_scene(args.scene or student.meta.get("scene"))
    cams, *_ = scene_rig(scene, n_views=args.views, size=parse_size(args.size))
    frames = default_frames(args.frames)
    tcfg = dst.TrainConfig(iters=args.iters, batch=args.batch, lr=args.lr,
                           seed=args.seed)
    student, history = dst.finetune(student, scene, cams, frames, tcfg)
    student.save(args.out)
    print(f"fine-tuned on {len(cams)} views x {len(frames)} frames: "
          f"loss {history[0][1]:.4f} -> {history[-1][1]:.4f} -> {args.out}")
    return 0


def cmd_render(args):
    model = load_any_checkpoint(args.ckpt)
    w, h = parse_size(args.size)
    cam = svc.camera_for(model, args.cam, w, h)
    t = min(1.0, max(0.0, args.t))
    alpha = None
    if args.alpha:
        alpha = np.array([float(x) for x in args.alpha.split(",")])
    if isinstance(model, ControllableLightField):
        img = model.render_frame(cam, t, alpha=alpha)
    else:
        img = model.render_frame(cam, t)
    metrics.write_image(args.out, img)
    print(f"rendered {w}x{h} frame at t={t} -> {args.out}")
    return 0


def eval_rows(model, scene, cams, frames, alpha=None):
    rows = []
    for vi, cam in enumerate(cams):
        for t in frames:
            if isinstance(model, ControllableLightField):
                img = model.render_frame(cam, t, alpha=alpha)
                truth = scene.render(cam, t, alpha)
            else:
                img = model.render_frame(cam, t)
                truth = scene.render(cam, t)
            rows.append({
                "view": vi, "t": float(t),
                "psnr": metrics.psnr(img, truth),
                "ssim": metrics.ssim(img, truth),
                "ms_ssim": metrics.ms_ssim(img, truth),
                "ms_ssim_scales": metrics.ms_ssim_scales(img.shape),
            })
    return rows


def write_eval_csv(path, rows, scene_name, variant, seed):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("scene,variant,seed,view,t,psnr,ssim,ms_ssim,ms_ssim_scales,lpips\n")
        for r in rows:
            fh.write(f"{scene_name},{variant},{seed},{r['view']},{r['t']},"
                     f"{r['psnr']:.6f},{r['ssim']:.6f},{r['ms_ssim']:.6f},"
                     f"{r['ms_ssim_scales']},\n")


def cmd_eval(args):
    model = load_any_checkpoint(args.ckpt)
    scene = scenes.make_scene(args.scene or model.meta.get("scene"))
    center, radius = scene.bounding_sphere()
    center = np.asarray(model.meta.get("scene_center", center))
    dist = float(model.meta.get("cam_distance", 2.6 * radius))
    # held-out style: orbit angles offset from the training rig
    cams = [rg.orbit_camera(center, dist, a, size=parse_size(args.size))
            for a in np.linspace(17.0, 317.0, args.views)]
    frames = default_frames(args.frames)
    rows = eval_rows(model, scene, cams, frames)
    variant = getattr(model.config, "variant", "full")
    write_eval_csv(args.out, rows, scene.name, variant, args.seed)
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    print(f"eval {scene.name}: mean PSNR {mean_psnr:.2f} dB over "
          f"{len(rows)} frames -> {args.out}")
    return 0


def cmd_ablate(args):
    scene = get_scene(args)
    doc = load_config_doc(args.config)
    cams, *_ = scene_rig(scene, size=parse_size(args.size))
    bounds = rg.infer_bounds(cams)
    data = dst.generate_kd_dataset(scene, bounds, args.s, args.seed, scene=scene)
    os.makedirs(args.out, exist_ok=True)
    center, radius = scene.bounding_sphere()
    eval_cams = [rg.orbit_camera(center, 2.6 * radius, a, size=parse_size(args.size))
                 for a in (45.0, 200.0)]
    frames = default_frames(3)
    out_csv = os.path.join(args.out, f"ablate_{scene.name}.csv")
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("scene,variant,seed,view,t,psnr,ssim,ms_ssim,ms_ssim_scales,lpips\n")
        for variant in ("full", "no_mlps", "pointwise"):
            cfg = student_for(scene, bounds, variant, 0, doc.get("model", {}))
            student = DynamicLightField(cfg, seed=args.seed)
            student, _ = dst.distill(student, data,
                                     dst.TrainConfig(iters=args.iters,
                                                     batch=args.batch,
                                                     seed=args.seed))
            attach_scene_meta(student, scene, bounds, args.seed)
            student.save(os.path.join(args.out, f"{scene.name}_{variant}.dylin"))
            for r in eval_rows(student, scene, eval_cams, frames):
                fh.write(f"{scene.name},{variant},{args.seed},{r['view']},{r['t']},"
                         f"{r['psnr']:.6f},{r['ssim']:.6f},{r['ms_ssim']:.6f},"
                         f"{r['ms_ssim_scales']},\n")
            print(f"ablate: finished {variant}")
    print(f"comparison -> {out_csv}")
    return 0


def cmd_bench(args):
    scene = get_scene(args) if args.scene else scenes.make_scene("orbiter")
    w, h = parse_size(args.size)
    cams, center, radius, dist = scene_rig(scene, size=(w, h))
    bounds = rg.infer_bounds(cams)
    cam = cams[0]
    corners = np.stack(np.meshgrid(*[(bounds.lo[i], bounds.hi[i]) for i in range(3)],
                                   indexing="ij"), axis=-1).reshape(-1, 3)
    near, far = rg.depth_range(center, radius, corners)
    if args.ckpt:
        student = load_any_checkpoint(args.ckpt)
    else:
        student = DynamicLightField(config_for_scene(scene, bounds), seed=args.seed)
    teacher_model = tch.IntegrationTeacher(
        tch.TeacherConfig(near=near, far=far, n_quad=args.quad), seed=args.seed)

    def clock(fn, reps):
        best = float("inf")
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    clock(lambda: student.render_frame(cam, 0.5), 1)  # warm-up
    student_s = clock(lambda: student.render_frame(cam, 0.5), args.reps)
    teacher_s = clock(lambda: teacher_model.render_frame(cam, 0.5), 1)
    ratio = teacher_s / student_s
    print(f"bench {w}x{h}: teacher(n_quad={args.quad}) {teacher_s * 1e3:.0f} ms/frame, "
          f"student {student_s * 1e3:.0f} ms/frame, speedup {ratio:.1f}x")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("model,n_quad,width,height,millis_per_frame\n")
            fh.write(f"teacher,{args.quad},{w},{h},{teacher_s * 1e3:.3f}\n")
            fh.write(f"student,,{w},{h},{student_s * 1e3:.3f}\n")
    return 0


def cmd_serve(args):
    return svc.serve(args.ckpt, args.port, workers=args.workers)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="dynlf",
        description="dynamic light-field pipeline: teach, distill, fine-tune, "
                    "render, evaluate, benchmark, serve")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scene=True):
        if scene:
            sp.add_argument("--scene", help="catalog name or scene JSON path")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="JSON file or inline JSON with overrides")

    sp = sub.add_parser("teach", help="train the integration teacher")
    common(sp)
    sp.add_argument("--iters", type=int, default=2000)
    sp.add_argument("--quad", type=int, default=32)
    sp.add_argument("--size", default="64x64")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=cmd_teach)

    sp = sub.add_parser("gen", help="generate a KD dataset")
    common(sp)
    sp.add_argument("--teacher", default="oracle",
                    help="'oracle' or a teacher checkpoint path")
    sp.add_argument("--s", type=int, default=10000, help="number of samples")
    sp.add_argument("--attrs", type=int, default=None,
                    help="attribute count (default: what the scene defines)")
    sp.add_argument("--size", default="64x64")
    sp.add_argument("--out", required=True, help="output file or directory")
    sp.set_defaults(fn=cmd_gen)

    sp = sub.add_parser("distill", help="distill a student from a KD dataset")
    common(sp, scene=False)
    sp.add_argument("--data", required=True, help="dataset file from gen")
    sp.add_argument("--variant", default="full",
                    choices=("full", "no_mlps", "pointwise"))
    sp.add_argument("--iters", type=int, default=2000)
    sp.add_argument("--batch", type=int, default=512)
    sp.add_argument("--lr", type=float, default=5e-4)
    sp.add_argument("--loss-csv", default=None)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.set_defaults(fn=cmd_distill)

    sp = sub.add_parser("finetune", help="fine-tune a student on pixel rays")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--batch", type=int, default=512)
    sp.add_argument("--lr", type=float, default=5e-4)
    sp.add_argument("--views", type=int, default=6)
    sp.add_argument("--frames", type=int, default=5)
    sp.add_argument("--size", default="64x64")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_finetune)

    sp = sub.add_parser("render", help="render one frame to a PNG")
    common(sp, scene=False)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--t", type=float, default=0.0)
    sp.add_argument("--cam", default="front",
                    help="'front', 'orbit:<deg>', camera JSON, or base64 JSON")
    sp.add_argument("--alpha", default=None, help="comma-separated strengths")
    sp.add_argument("--size", default="64x64")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("eval", help="metric CSV against the oracle")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--views", type=int, default=3)
    sp.add_argument("--frames", type=int, default=3)
    sp.add_argument("--size", default="64x64")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="distill all variants and compare")
    common(sp)
    sp.add_argument("--s", type=int, default=8000)
    sp.add_argument("--iters", type=int, default=1500)
    sp.add_argument("--batch", type=int, default=512)
    sp.add_argument("--size", default="64x64")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("bench", help="teacher vs student frame time")
    common(sp)
    sp.add_argument("--ckpt", default=None)
    sp.add_argument("--quad", type=int, default=128)
    sp.add_argument("--size", default="128x128")
    sp.add_argument("--reps", type=int, default=3)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("serve", help="HTTP render service")
    common(sp, scene=False)
    sp.add_argument("--ckpt", action="append", required=True,
                    help="checkpoint path (repeatable)")
    sp.add_argument("--port", type=int, default=8080)
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(fn=cmd_serve)
    return p


def cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KeyboardInterrupt,):
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())
