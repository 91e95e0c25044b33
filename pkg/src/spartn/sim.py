"""Quasi-static eye-in-hand grasping environment.

Primitive objects rest on a square table; a Cartesian-kinematic gripper with a
wrist camera moves by relative end-effector commands executed exactly.  The
end-effector frame origin is the fingertip (grasp) point and its +z axis is
the approach direction.  Objects never move unless grasped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import raytrace
from .dataset import CLOSE, OPEN, DemoStep, Demonstration, quantize
from .field import CameraIntrinsics
from .se3 import (
    NoiseParams, Transform, camera_from_ee, compose, from_euler, inverse,
    sample_perturbation, to_euler, transform_from_params, transform_to_params,
)

R_DOWN = from_euler([math.pi, 0.0, 0.0])

TABLE_PERIOD = 0.3
LIGHT = np.array([0.35, -0.25, 1.0]) / np.linalg.norm([0.35, -0.25, 1.0])
AMBIENT = 0.45
TARGET_COLORS = [(0.85, 0.15, 0.12), (0.9, 0.3, 0.1), (0.8, 0.1, 0.3)]
DISTRACTOR_COLORS = [(0.15, 0.3, 0.85), (0.15, 0.7, 0.25), (0.9, 0.8, 0.15), (0.55, 0.25, 0.75)]
# gripper body sample points in the end-effector frame (collision flagging)
GRIPPER_POINTS = np.array([[0.025, 0.0, -0.005], [-0.025, 0.0, -0.005], [0.0, 0.0, -0.04]])


class PlacementFailure(RuntimeError):
    pass


class EpisodeFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    width: int = 64
    height: int = 64
    fov_x: float = math.radians(70.0)
    horizon: int = 40
    grasp_radius: float = 0.015
    lift_height: float = 0.10
    max_rotation: float = 0.2
    max_translation: float = 0.02
    min_distractors: int = 1
    max_distractors: int = 2
    target_kinds: tuple = ("sphere", "box", "cylinder")
    table_height: float = 0.0
    table_half: float = 0.3
    spawn_half: float = 0.1
    start_offset_xy: float = 0.08
    start_height_min: float = 0.16
    start_height_max: float = 0.24
    start_tilt: float = 0.15
    start_yaw: float = 0.3
    camera_offset: tuple = (0.0, -0.05, -0.10)
    camera_tilt: float = 0.3
    table_contrast: float = 0.12
    background: tuple = (0.12, 0.13, 0.16)
    gripper_color: tuple = (0.3, 0.3, 0.32)
    gripper_closed_color: tuple = (0.85, 0.85, 0.9)
    preroll_views: int = 0
    workspace_lo: tuple = (-0.3, -0.3, -0.01)
    workspace_hi: tuple = (0.3, 0.3, 0.12)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.fov_x)

    @property
    def action_bounds(self) -> np.ndarray:
        r, t = self.max_rotation, self.max_translation
        return np.array([r, r, r, t, t, t])


@dataclass(frozen=True)
class Primitive:
    kind: str  # "sphere" | "box" | "cylinder"
    pose: Transform
    size: tuple  # sphere (r,), box half-extents (hx, hy, hz), cylinder (r, half_height)
    color: tuple
    is_target: bool = False


@dataclass(frozen=True)
class Scene:
    objects: tuple
    table_height: float
    seed: int

    @property
    def target_index(self) -> int:
        return next(i for i, o in enumerate(self.objects) if o.is_target)

    @property
    def target(self) -> Primitive:
        return self.objects[self.target_index]

    def with_pose(self, i: int, pose: Transform) -> "Scene":
        objs = list(self.objects)
        objs[i] = replace(objs[i], pose=pose)
        return replace(self, objects=tuple(objs))


@dataclass(frozen=True)
class EnvState:
    scene: Scene
    ee_pose: Transform
    gripper_open: bool = True
    grasped: Optional[int] = None
    step_count: int = 0
    grasp_offset: Optional[Transform] = None
    clamped: bool = False
    collision: bool = False


@dataclass(frozen=True)
class EnvAction:
    delta: Transform
    gripper: int = OPEN


@dataclass
class Observation:
    image: np.ndarray
    ee_pose: Transform
    gripper_open: bool


def camera_mount(cfg: EnvConfig) -> Transform:
    """Hand-eye transform: camera behind the fingertip, pitched toward it."""
    return Transform(from_euler([-cfg.camera_tilt, 0.0, 0.0]),
                     np.asarray(cfg.camera_offset, dtype=float))


def gripper_mask(cfg: EnvConfig) -> np.ndarray:
    """Pixels covered by the (static) gripper fingers in every wrist image."""
    h, w = cfg.height, cfg.width
    m = np.zeros((h, w), bool)
    r0 = int(round(0.8 * h))
    for a, b in ((0.22, 0.34), (0.66, 0.78)):
        m[r0:, int(round(a * w)):int(round(b * w))] = True
    return m


def bounding_radius(obj: Primitive) -> float:
    if obj.kind == "box":
        return float(math.hypot(obj.size[0], obj.size[1]))
    return float(obj.size[0])


def lowest_point(obj: Primitive) -> float:
    r, c = obj.pose.rotation, obj.pose.translation
    if obj.kind == "sphere":
        return float(c[2] - obj.size[0])
    if obj.kind == "box":
        return float(c[2] - np.abs(r[2]) @ np.asarray(obj.size))
    rad, hh = obj.size
    az = abs(r[2, 2])
    return float(c[2] - hh * az - rad * math.sqrt(max(0.0, 1.0 - az * az)))


def contains(obj: Primitive, pts: np.ndarray) -> np.ndarray:
    p = (np.atleast_2d(pts) - obj.pose.translation) @ obj.pose.rotation
    if obj.kind == "sphere":
        return np.linalg.norm(p, axis=1) < obj.size[0]
    if obj.kind == "box":
        return np.all(np.abs(p) < np.asarray(obj.size), axis=1)
    rad, hh = obj.size
    return (p[:, 0] ** 2 + p[:, 1] ** 2 < rad * rad) & (np.abs(p[:, 2]) < hh)


def grasp_site(obj: Primitive) -> np.ndarray:
    """Sphere top, box top-face center, cylinder top rim (world frame)."""
    if obj.kind == "sphere":
        local = [0.0, 0.0, obj.size[0]]
    elif obj.kind == "box":
        local = [0.0, 0.0, obj.size[2]]
    else:
        local = [obj.size[0], 0.0, obj.size[1]]
    return obj.pose.rotation @ np.asarray(local) + obj.pose.translation


def grasp_pose(obj: Primitive) -> Transform:
    return Transform(R_DOWN, grasp_site(obj))


def _sample_object(rng, kind: str, xy, color, is_target, table_height) -> Primitive:
    yaw = rng.uniform(-math.pi, math.pi)
    if kind == "sphere":
        size = (rng.uniform(0.02, 0.035),)
        z = size[0]
        rot = np.eye(3)
    elif kind == "box":
        size = (rng.uniform(0.015, 0.03), rng.uniform(0.015, 0.03), rng.uniform(0.015, 0.03))
        z = size[2]
        rot = from_euler([0.0, 0.0, yaw])
    else:
        size = (rng.uniform(0.015, 0.03), rng.uniform(0.02, 0.04))
        z = size[1]
        rot = from_euler([0.0, 0.0, yaw])
    pose = Transform(rot, np.array([xy[0], xy[1], table_height + z]))
    return Primitive(kind, pose, size, tuple(color), is_target)


def reset(cfg: EnvConfig, seed: int) -> EnvState:
    """Random scene and start pose; a pure function of ``seed``."""
    rng = np.random.default_rng(seed)
    kinds = ("sphere", "box", "cylinder")
    n_dis = int(rng.integers(cfg.min_distractors, cfg.max_distractors + 1))
    objects = []
    for i in range(1 + n_dis):
        is_target = i == 0
        pool = cfg.target_kinds if is_target else kinds
        kind = pool[int(rng.integers(len(pool)))]
        palette = TARGET_COLORS if is_target else DISTRACTOR_COLORS
        color = np.clip(np.asarray(palette[int(rng.integers(len(palette)))])
                        + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)
        for _ in range(1000):
            xy = rng.uniform(-cfg.spawn_half, cfg.spawn_half, 2)
            obj = _sample_object(rng, kind, xy, color, is_target, cfg.table_height)
            if all(np.linalg.norm(obj.pose.translation[:2] - o.pose.translation[:2])
                   > bounding_radius(obj) + bounding_radius(o) + 0.01 for o in objects):
                objects.append(obj)
                break
        else:
            raise PlacementFailure(f"could not place object {i} for seed {seed}")
    scene = Scene(tuple(objects), cfg.table_height, int(seed))

    site = grasp_site(scene.target)
    off = np.array([
        rng.uniform(-cfg.start_offset_xy, cfg.start_offset_xy),
        rng.uniform(-cfg.start_offset_xy, cfg.start_offset_xy),
        rng.uniform(cfg.start_height_min, cfg.start_height_max),
    ])
    e = [rng.uniform(-cfg.start_tilt, cfg.start_tilt), rng.uniform(-cfg.start_tilt, cfg.start_tilt),
         rng.uniform(-cfg.start_yaw, cfg.start_yaw)]
    ee = Transform(R_DOWN @ from_euler(e), site + off)
    return EnvState(scene, ee)


def table_color(p: np.ndarray, contrast: float = 0.12) -> np.ndarray:
    sx = np.sin(2 * math.pi * p[:, 0] / TABLE_PERIOD)[:, None]
    sy = np.sin(2 * math.pi * p[:, 1] / TABLE_PERIOD)[:, None]
    base = np.array([0.62, 0.56, 0.46])
    return np.clip(base + contrast * sx * np.array([1.0, 0.4, -0.3])
                   + contrast * sy * np.array([-0.3, 0.3, 1.0]), 0.0, 1.0)


def trace(scene: Scene, cfg: EnvConfig, origins: np.ndarray, dirs: np.ndarray):
    """Shaded color and hit id per ray (-1 background, -2 table, >=0 object)."""
    n = len(origins)
    best_t, normal = raytrace.hit_table(scene.table_height, cfg.table_half, origins, dirs)
    ids = np.where(np.isfinite(best_t), -2, -1)
    for i, obj in enumerate(scene.objects):
        if obj.kind == "sphere":
            t, nrm = raytrace.hit_sphere(obj.pose.translation, obj.size[0], origins, dirs)
        elif obj.kind == "box":
            t, nrm = raytrace.hit_box(obj.pose, obj.size, origins, dirs)
        else:
            t, nrm = raytrace.hit_cylinder(obj.pose, obj.size[0], obj.size[1], origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        normal = np.where(closer[:, None], nrm, normal)
        ids = np.where(closer, i, ids)
    albedo = np.tile(np.asarray(cfg.background, dtype=float), (n, 1))
    table = ids == -2
    if table.any():
        p = origins[table] + best_t[table, None] * dirs[table]
        albedo[table] = table_color(p, cfg.table_contrast)
    for i, obj in enumerate(scene.objects):
        albedo[ids == i] = obj.color
    lam = AMBIENT + (1 - AMBIENT) * np.clip(normal @ LIGHT, 0.0, 1.0)
    col = np.where((ids == -1)[:, None], albedo, albedo * lam[:, None])
    return np.clip(col, 0.0, 1.0), ids


def render_view(scene: Scene, cam_pose: Transform, cfg: EnvConfig, overlay: bool = True,
                return_ids: bool = False, gripper_open: bool = True):
    """Ground-truth wrist image from an arbitrary camera pose (8-bit levels)."""
    from .field import camera_rays

    intr = cfg.intrinsics
    o, d = camera_rays(cam_pose, intr)
    col, ids = trace(scene, cfg, o, d)
    img = col.reshape(intr.height, intr.width, 3)
    ids = ids.reshape(intr.height, intr.width)
    if overlay:
        img = img.copy()
        # same pixels either way; the shade shows whether the fingers are closed
        img[gripper_mask(cfg)] = cfg.gripper_color if gripper_open else cfg.gripper_closed_color
    img = quantize(img)
    if return_ids:
        return img, ids
    return img


def render_camera(state: EnvState, cfg: EnvConfig, return_ids: bool = False):
    return render_view(state.scene, camera_from_ee(state.ee_pose, camera_mount(cfg)), cfg,
                       return_ids=return_ids, gripper_open=state.gripper_open)


def observe(state: EnvState, cfg: EnvConfig) -> Observation:
    return Observation(render_camera(state, cfg), state.ee_pose, state.gripper_open)


def clamp_action(delta: Transform, cfg: EnvConfig) -> tuple[Transform, bool]:
    p = transform_to_params(delta)
    b = cfg.action_bounds
    if np.all(np.abs(p) <= b):
        return delta, False
    return transform_from_params(np.clip(p, -b, b)), True


def _drop(obj: Primitive, table_height: float, rot0: np.ndarray) -> Primitive:
    placed = replace(obj, pose=Transform(rot0, obj.pose.translation))
    dz = table_height - lowest_point(placed)
    return replace(placed, pose=Transform(rot0, placed.pose.translation + [0.0, 0.0, dz]))


def step(state: EnvState, action: EnvAction, cfg: EnvConfig) -> tuple[EnvState, Observation]:
    delta, clamped = clamp_action(action.delta, cfg)
    ee = compose(state.ee_pose, delta)
    scene = state.scene
    grasped, offset, gripper_open = state.grasped, state.grasp_offset, state.gripper_open
    if grasped is not None:
        scene = scene.with_pose(grasped, compose(ee, offset))
    if action.gripper == CLOSE and gripper_open:
        gripper_open = False
        dists = [np.linalg.norm(ee.translation - grasp_site(o)) for o in scene.objects]
        i = int(np.argmin(dists))
        if dists[i] <= cfg.grasp_radius:
            grasped = i
            offset = compose(inverse(ee), scene.objects[i].pose)
    elif action.gripper == OPEN and not gripper_open:
        gripper_open = True
        if grasped is not None:
            obj = scene.objects[grasped]
            upright = Transform(from_euler([0, 0, to_euler(obj.pose.rotation)[2]]), obj.pose.translation)
            scene = scene.with_pose(grasped, _drop(replace(obj, pose=upright), scene.table_height,
                                                   upright.rotation).pose)
            grasped, offset = None, None
    pts = ee.translation + GRIPPER_POINTS @ ee.rotation.T
    collision = any(
        bool(np.any(contains(o, pts))) for i, o in enumerate(scene.objects) if i != grasped
    )
    new = EnvState(scene, ee, gripper_open, grasped, state.step_count + 1, offset,
                   clamped, collision)
    return new, observe(new, cfg)


def success(state: EnvState, lift_height: float) -> bool:
    if state.grasped is None or state.grasped != state.scene.target_index:
        return False
    return lowest_point(state.scene.target) >= state.scene.table_height + lift_height - 1e-12


def done(state: EnvState, cfg: EnvConfig) -> bool:
    return success(state, cfg.lift_height) or state.step_count >= cfg.horizon


def scripted_expert(state: EnvState, cfg: EnvConfig) -> EnvAction:
    """Proportional servoing to the target's precomputed grasp pose."""
    ee = state.ee_pose
    if state.grasped is not None:
        up = ee.rotation.T @ np.array([0.0, 0.0, cfg.max_translation])
        return EnvAction(Transform(np.eye(3), up), CLOSE)
    if not state.gripper_open:
        return EnvAction(Transform.identity(), OPEN)
    goal = grasp_pose(state.scene.target)
    rel = compose(inverse(ee), goal)
    t = rel.translation.copy()
    m = np.abs(t).max()
    if m > cfg.max_translation:
        t *= cfg.max_translation / m
    e = np.clip(to_euler(rel.rotation), -cfg.max_rotation, cfg.max_rotation)
    delta = Transform(from_euler(e), t)
    dist = np.linalg.norm(goal.translation - ee.translation)
    grip = CLOSE if dist < cfg.grasp_radius / 2 else OPEN
    return EnvAction(delta, grip)


def preroll_poses(cfg: EnvConfig) -> list[Transform]:
    """Fixed end-effector poses visited before a demonstration starts."""
    if cfg.preroll_views <= 0:
        return []
    poses = [Transform(R_DOWN, np.array([0.0, 0.0, 0.28]))]
    for j in range(cfg.preroll_views - 1):
        a = 2 * math.pi * j / max(cfg.preroll_views - 1, 1)
        poses.append(Transform(R_DOWN, np.array([0.12 * math.cos(a), 0.12 * math.sin(a), 0.26])))
    return poses[: cfg.preroll_views]


def collect_demo(cfg: EnvConfig, seed: int, dart_noise: NoiseParams | None = None,
                 dart_window: tuple | None = None, dart_seed: int | None = None) -> Demonstration:
    """Roll out the expert; with ``dart_noise`` the executed pose at each
    pre-grasp step is perturbed before the expert labels it.

    Raises :class:`EpisodeFailed` if the target is not lifted in time.
    """
    state = reset(cfg, seed)
    rng = np.random.default_rng(seed if dart_seed is None else dart_seed)
    e_T_c = camera_mount(cfg)
    preroll = []
    for pose in preroll_poses(cfg):
        preroll.append((render_view(state.scene, camera_from_ee(pose, e_T_c), cfg), pose))
    steps = []
    while not done(state, cfg):
        k = state.step_count
        if (dart_noise is not None and state.gripper_open and state.grasped is None
                and (dart_window is None or dart_window[0] <= k <= dart_window[1])):
            eps = sample_perturbation(dart_noise, rng)
            state = replace(state, ee_pose=compose(state.ee_pose, eps))
        obs = observe(state, cfg)
        act = scripted_expert(state, cfg)
        steps.append(DemoStep(obs.image, state.ee_pose, act.delta, act.gripper))
        state, _ = step(state, act, cfg)
    if not success(state, cfg.lift_height):
        raise EpisodeFailed(f"expert failed on seed {seed}")
    meta = {"dart": dart_noise is not None}
    return Demonstration(steps, cfg.intrinsics, e_T_c, gripper_mask(cfg), int(seed), preroll, meta)
