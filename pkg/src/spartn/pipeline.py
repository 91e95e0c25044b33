"""Corrective augmentation of demonstrations through per-demo radiance fields.

For each demonstration: train a field on the frames recorded before the
gripper first closes (gripper pixels masked out), then for every step in the
augmentation window draw ``n_aug`` perturbations ``eps`` of the end-effector
pose, relabel the action as ``eps^-1 @ a``, render the perturbed wrist view
and splice the original gripper pixels back in.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import alignment as al
from .dataset import (
    AugmentedTransition, Demonstration, read_demo, write_transitions,
)
from .field import (
    DimensionMismatch, FieldTrainConfig, InsufficientViews, PosedImage,
    RadianceField, RenderConfig, psnr, render, save_field, train_field,
)
from .se3 import (
    NoiseParams, Transform, camera_from_ee, compose, corrective_action,
    perturb_pose, random_rotation, sample_perturbation,
)
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

PRE_GRASP = "pre-grasp"


class WindowOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    n_aug: int = 16
    noise: NoiseParams = NoiseParams(0.2, 0.003)
    window: object = PRE_GRASP  # "pre-grasp" or inclusive (first, last) step range
    seed: int = 0

    def __post_init__(self):
        if self.n_aug < 1:
            raise ValueError("n_aug must be >= 1")

    def echo(self) -> dict:
        d = asdict(self)
        d["window"] = self.window if isinstance(self.window, str) else list(self.window)
        return d


def sim_preset(seed: int = 0) -> AugmentConfig:
    """Simulation settings: 100 samples per step, steps 5..13 only."""
    return AugmentConfig(100, NoiseParams(0.2, 0.003), (5, 13), seed)


def pre_grasp_segment(demo: Demonstration) -> range:
    for k, s in enumerate(demo.steps):
        if s.gripper:
            return range(0, k)
    return range(0, len(demo.steps))


def window_steps(demo: Demonstration, window) -> range:
    seg = pre_grasp_segment(demo)
    if isinstance(window, str):
        if window != PRE_GRASP:
            raise ValueError(f"unknown window {window!r}")
        return seg
    first, last = int(window[0]), int(window[1])
    if first < seg.start or last >= seg.stop or first > last:
        raise WindowOutOfRange(
            f"window [{first}, {last}] not inside pre-grasp segment [0, {seg.stop})"
        )
    return range(first, last + 1)


def splice_gripper(rendered: np.ndarray, original: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``~M * rendered + M * original``, as an exact per-pixel select."""
    if rendered.shape != original.shape or rendered.shape[:2] != np.shape(mask):
        raise DimensionMismatch(f"{rendered.shape} / {original.shape} / {np.shape(mask)}")
    return np.where(np.asarray(mask, bool)[..., None], original, rendered)


@dataclass
class DemoField:
    field: RadianceField
    alignment: Optional[al.AlignmentSolution] = None
    render_cfg: RenderConfig = RenderConfig()
    train_steps: range = range(0)
    held_out: tuple = ()


def synthetic_sfm(world_poses: Transform, rng: np.random.Generator,
                  scale: float | None = None, noise: float = 0.0):
    """SfM-convention poses ``V_H_C`` from world camera poses.

    Returns the poses and the ground-truth ``(beta, V_T_W)``.
    """
    beta = float(rng.uniform(0.5, 3.0)) if scale is None else scale
    v_T_w = Transform(random_rotation(rng), rng.uniform(-1.0, 1.0, 3))
    v_T_c = compose(v_T_w, world_poses)
    t = v_T_c.translation * beta
    if noise > 0:
        t = t + rng.normal(0.0, noise, t.shape)
    return Transform(v_T_c.rotation, t), beta, v_T_w


def _field_views(demo: Demonstration, steps: Sequence[int]):
    poses = [camera_from_ee(demo.steps[k].w_T_e, demo.e_T_c) for k in steps]
    images = [demo.steps[k].image for k in steps]
    for img, w_T_e in demo.preroll:
        poses.append(camera_from_ee(w_T_e, demo.e_T_c))
        images.append(img)
    return images, poses


def train_demo_field(demo: Demonstration, use_alignment: bool = False,
                     config: FieldTrainConfig = FieldTrainConfig(), seed: int = 0,
                     workspace: tuple | None = None, sfm_poses: Transform | None = None,
                     held_out: Sequence[int] = (), backend=None) -> DemoField:
    """Train the demo's field on its pre-grasp frames (plus any pre-roll views).

    With ``use_alignment`` the field lives in the SfM frame: poses are
    ``sfm_poses`` (synthesized from the calibrated poses when omitted) and the
    world-to-SfM solution is estimated from the matched pairs.
    """
    seg = [k for k in pre_grasp_segment(demo) if k not in set(held_out)]
    if len(seg) + len(demo.preroll) < 3:
        raise InsufficientViews(f"only {len(seg)} pre-grasp frames")
    images, poses = _field_views(demo, seg)
    world = Transform(np.stack([p.rotation for p in poses]),
                      np.stack([p.translation for p in poses]))
    cfg = config.render
    frame = None
    bounds = workspace
    sol = None
    if use_alignment:
        if sfm_poses is None:
            sfm_poses, _, _ = synthetic_sfm(world, rng_for(seed, "sfm"))
        pairs = [al.PosePair(world[j], sfm_poses[j]) for j in range(len(poses))]
        beta = al.estimate_scale(pairs)
        sol = al.estimate_frame(pairs, beta)
        # grid frame: world workspace carried into SfM units
        mean = al.mean_frame(sol)
        frame = Transform(mean.rotation, mean.translation * beta)
        if workspace is not None:
            bounds = (np.asarray(workspace[0]) * beta, np.asarray(workspace[1]) * beta)
        cfg = cfg.scaled(beta)
        config = FieldTrainConfig(**{**config.__dict__, "render": cfg})
        poses = [sfm_poses[j] for j in range(len(poses))]
        # per-step solution indexed by demo step
        frames = [None] * len(demo.steps)
        for j, k in enumerate(seg):
            frames[k] = sol.v_T_w[j]
        fill = al.mean_frame(sol)
        sol = al.AlignmentSolution(beta, [f if f is not None else fill for f in frames])
    views = [PosedImage(img, p, demo.intrinsics) for img, p in zip(images, poses)]
    fld = train_field(views, demo.mask, seed=seed, config=config, bounds=bounds,
                      frame=frame, backend=backend)
    return DemoField(fld, sol, cfg, range(len(seg)), tuple(held_out))


def render_pose(df: DemoField, demo: Demonstration, w_T_e: Transform, k: int,
                backend=None) -> np.ndarray:
    """Field render for an end-effector pose at step ``k`` (mapped to SfM if aligned)."""
    cam = camera_from_ee(w_T_e, demo.e_T_c)
    if df.alignment is not None:
        cam = al.world_to_sfm(cam, df.alignment, k)
    return render(df.field, cam, demo.intrinsics, df.render_cfg, backend=backend)


def augment_demo(demo: Demonstration, df: DemoField, cfg: AugmentConfig,
                 demo_id: int = 0, backend=None) -> list[AugmentedTransition]:
    """Perturbed, relabeled and re-rendered transitions for the window steps.

    The perturbation for sample ``i`` of step ``k`` is drawn from a stream
    keyed by ``(seed, demo_id, k, i)``, so output does not depend on order.
    """
    out = []
    for k in window_steps(demo, cfg.window):
        st = demo.steps[k]
        for i in range(cfg.n_aug):
            eps = sample_perturbation(cfg.noise, rng_for(cfg.seed, "eps", demo_id, k, i))
            pose = perturb_pose(st.w_T_e, eps)
            action = corrective_action(eps, st.action)
            img = render_pose(df, demo, pose, k, backend=backend)
            img = splice_gripper(img, st.image, demo.mask)
            out.append(AugmentedTransition(img, pose, action, st.gripper, (demo_id, k, i)))
    return out


def _config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _augment_one(args):
    """Worker: train one field, augment one demo, write ``aug_####`` atomically."""
    demo_dir, out_dir, demo_id, cfg, field_cfg, workspace, kind = args
    final = Path(out_dir) / f"aug_{demo_id:04d}"
    tmp = Path(out_dir) / f".tmp_aug_{demo_id:04d}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        demo = read_demo(demo_dir)
        if kind == "ha":
            from .homography import ha_augment_demo
            rows = ha_augment_demo(demo, cfg, demo_id)
            diag = None
        else:
            df = train_demo_field(demo, config=field_cfg,
                                  seed=derive_seed(cfg.seed, "field", demo_id),
                                  workspace=workspace)
            rows = augment_demo(demo, df, cfg, demo_id)
            tmp.mkdir(parents=True)
            save_field(tmp / "field.bin", df.field)
            # diagnostic: how well the field reproduces its own training frames
            diag = float(np.mean([
                min(psnr(render_pose(df, demo, demo.steps[k].w_T_e, k), demo.steps[k].image), 99.0)
                for k in pre_grasp_segment(demo)
            ]))
        write_transitions(tmp, rows)
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
        return {"demo": demo_id, "count": len(rows), "ok": True, "train_psnr": diag}
    except Exception as exc:  # recorded in the manifest; other demos continue
        if tmp.exists():
            shutil.rmtree(tmp)
        return {"demo": demo_id, "count": 0, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def build_augmented_dataset(demo_root, out_dir, cfg: AugmentConfig, parallelism: int = 1,
                            field_config: FieldTrainConfig = FieldTrainConfig(),
                            workspace: tuple | None = None, kind: str = "spartn") -> dict:
    """Augment every ``demo_####`` under ``demo_root`` into ``out_dir``.

    Writes ``manifest.json`` (config echo, per-demo counts, content hash) and
    returns it.  Per-demo failures are recorded, not raised.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    demo_dirs = sorted(p for p in Path(demo_root).glob("demo_*") if p.is_dir())
    jobs = [(str(d), str(out_dir), int(d.name.split("_")[1]), cfg, field_config, workspace, kind)
            for d in demo_dirs]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(parallelism) as pool:
            results = list(pool.map(_augment_one, jobs))
    else:
        results = [_augment_one(j) for j in jobs]
    results.sort(key=lambda r: r["demo"])
    for r in results:
        if not r["ok"]:
            log.warning("demo %d failed: %s", r["demo"], r["error"])
    from .dataset import hash_tree
    content = hash_tree(out_dir, exclude=("manifest.json", "field.bin"))
    echo = {
        "kind": kind,
        "augment": cfg.echo(),
        "field": {k: (v if not isinstance(v, RenderConfig) else asdict(v))
                  for k, v in field_config.__dict__.items()},
        "workspace": None if workspace is None else [list(map(float, b)) for b in workspace],
    }
    manifest = {
        "config": echo,
        "config_hash": _config_hash(echo),
        "demos": [{k: v for k, v in r.items() if k != "train_psnr"} for r in results],
        "diagnostics": {str(r["demo"]): r.get("train_psnr") for r in results},
        "total": sum(r["count"] for r in results),
        "content_hash": content,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
