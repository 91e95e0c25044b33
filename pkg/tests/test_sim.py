import math
from dataclasses import replace

import numpy as np
import pytest

from spartn import sim
from spartn.dataset import CLOSE, OPEN
from spartn.se3 import (
    NoiseParams, Transform, camera_from_ee, compose, corrective_action, from_euler,
    inverse, perturb_pose, sample_perturbation,
)

CFG = sim.EnvConfig()


def states_equal(a: sim.EnvState, b: sim.EnvState) -> bool:
    return (a.ee_pose.allclose(b.ee_pose, 0) and a.gripper_open == b.gripper_open
            and a.grasped == b.grasped
            and all(p.pose.allclose(q.pose, 0) for p, q in zip(a.scene.objects, b.scene.objects)))


def test_reset_deterministic():
    assert states_equal(sim.reset(CFG, 11), sim.reset(CFG, 11))
    assert not states_equal(sim.reset(CFG, 11), sim.reset(CFG, 12))


def sample_inside(obj, rng, n=400):
    r = sim.bounding_radius(obj) + 0.05
    pts = obj.pose.translation + rng.uniform(-r, r, (n * 20, 3))
    return pts[sim.contains(obj, pts)][:n]


def test_no_interpenetration_and_single_target():
    rng = np.random.default_rng(0)
    for seed in range(100):
        scene = sim.reset(CFG, seed).scene
        assert sum(o.is_target for o in scene.objects) == 1
        for o in scene.objects:
            assert abs(sim.lowest_point(o) - scene.table_height) < 1e-6
        for i, a in enumerate(scene.objects):
            pts = sample_inside(a, rng)
            for j, b in enumerate(scene.objects):
                if i != j:
                    assert not np.any(sim.contains(b, pts))


def test_target_kinds_restricts_only_the_target():
    spheres = replace(CFG, target_kinds=("sphere",), min_distractors=2, max_distractors=2)
    kinds = set()
    for seed in range(40):
        scene = sim.reset(spheres, seed).scene
        assert scene.target.kind == "sphere"
        kinds |= {o.kind for o in scene.objects if not o.is_target}
    assert kinds == {"sphere", "box", "cylinder"}


def test_placement_failure():
    crowded = replace(CFG, min_distractors=60, max_distractors=60, spawn_half=0.05)
    with pytest.raises(sim.PlacementFailure):
        sim.reset(crowded, 0)


def test_identity_step():
    s = sim.reset(CFG, 3)
    s2, obs = sim.step(s, sim.EnvAction(Transform.identity(), OPEN), CFG)
    assert s2.step_count == 1
    assert states_equal(s, s2)
    assert obs.image.shape == (CFG.height, CFG.width, 3)


def test_close_far_from_sites_misses():
    s = sim.reset(CFG, 4)
    s2, _ = sim.step(s, sim.EnvAction(Transform.identity(), CLOSE), CFG)
    assert not s2.gripper_open and s2.grasped is None


def test_action_clamped_with_flag():
    s = sim.reset(CFG, 5)
    s2, _ = sim.step(s, sim.EnvAction(Transform.from_translation([0.0, 0.0, 0.5])), CFG)
    assert s2.clamped
    np.testing.assert_allclose(s2.ee_pose.translation - s.ee_pose.translation,
                               s.ee_pose.rotation @ [0, 0, 0.02], atol=1e-12)


def test_expert_at_grasp_pose_closes():
    s = sim.reset(CFG, 6)
    s = replace(s, ee_pose=sim.grasp_pose(s.scene.target))
    a = sim.scripted_expert(s, CFG)
    assert a.gripper == CLOSE
    assert np.linalg.norm(a.delta.translation) < 1e-6


def test_expert_points_toward_goal():
    s = sim.reset(CFG, 7)
    goal = sim.grasp_pose(s.scene.target)
    s = replace(s, ee_pose=Transform(goal.rotation, goal.translation + [0, 0, 0.10]))
    a = sim.scripted_expert(s, CFG)
    world_dir = s.ee_pose.rotation @ a.delta.translation
    disp = goal.translation - s.ee_pose.translation
    cos = world_dir @ disp / np.linalg.norm(world_dir) / np.linalg.norm(disp)
    assert cos > 0.99


def test_expert_success_rate():
    ok = 0
    for seed in range(200):
        try:
            sim.collect_demo(CFG, seed)
            ok += 1
        except sim.EpisodeFailed:
            pass
    assert ok >= 190


def test_dart_demos_mostly_succeed_and_deviate():
    ok, dev = 0, []
    for seed in range(50):
        try:
            d = sim.collect_demo(CFG, seed, dart_noise=NoiseParams(0.05, 0.002))
            ok += 1
            nominal = sim.collect_demo(CFG, seed)
            dev.append(np.linalg.norm(d.steps[1].w_T_e.translation - nominal.steps[1].w_T_e.translation))
        except sim.EpisodeFailed:
            pass
    assert ok >= 40
    assert np.mean(dev) > 0


def test_recorded_demo_replays_exactly():
    d = sim.collect_demo(CFG, 8)
    assert len(d) <= CFG.horizon
    s = sim.reset(CFG, 8)
    for k, st in enumerate(d.steps):
        assert s.ee_pose.allclose(st.w_T_e, 0)
        np.testing.assert_array_equal(sim.render_camera(s, CFG), st.image)
        s, _ = sim.step(s, sim.EnvAction(st.action, st.gripper), CFG)
    assert sim.success(s, CFG.lift_height)


def test_static_scene_before_close():
    d_state = sim.reset(CFG, 9)
    poses = [o.pose for o in d_state.scene.objects]
    s = d_state
    while s.gripper_open and not sim.done(s, CFG):
        a = sim.scripted_expert(s, CFG)
        if a.gripper == CLOSE:
            break
        s, _ = sim.step(s, a, CFG)
        for p, o in zip(poses, s.scene.objects):
            assert p.allclose(o.pose, 0)


def test_grasped_object_moves_rigidly():
    s = sim.reset(CFG, 10)
    s = replace(s, ee_pose=sim.grasp_pose(s.scene.target))
    s, _ = sim.step(s, sim.EnvAction(Transform.identity(), CLOSE), CFG)
    assert s.grasped == s.scene.target_index and not s.gripper_open
    rel = compose(inverse(s.ee_pose), s.scene.target.pose)
    for _ in range(3):
        s, _ = sim.step(s, sim.EnvAction(Transform(from_euler([0.05, 0, 0.1]), [0, 0, -0.01]), CLOSE), CFG)
        assert compose(inverse(s.ee_pose), s.scene.target.pose).allclose(rel, 1e-12)


def test_success_predicate():
    s = sim.reset(CFG, 12)
    assert not sim.success(s, 0.10)
    s = replace(s, ee_pose=sim.grasp_pose(s.scene.target))
    s, _ = sim.step(s, sim.EnvAction(Transform.identity(), CLOSE), CFG)
    lift = Transform.from_translation(s.ee_pose.rotation.T @ [0, 0, 0.12])
    for _ in range(6):
        s, _ = sim.step(s, sim.EnvAction(Transform.from_translation(lift.translation / 6), CLOSE), CFG)
    assert sim.success(s, 0.10)
    # the same lift with a distractor grasped is not a success
    scene = s.scene
    t = scene.target_index
    other = next(i for i in range(len(scene.objects)) if i != t)
    assert not sim.success(replace(s, grasped=other), 0.10)


def test_controller_consistency():
    rng = np.random.default_rng(1)
    s = sim.reset(CFG, 13)
    a = sim.scripted_expert(s, CFG)
    eps = sample_perturbation(NoiseParams(0.05, 0.003), rng)
    s_nom, _ = sim.step(s, a, CFG)
    s_pert = replace(s, ee_pose=perturb_pose(s.ee_pose, eps))
    corr = corrective_action(eps, a.delta)
    # bypass clamping: the invariant concerns the kinematics
    big = replace(CFG, max_rotation=10.0, max_translation=10.0)
    s_cor, _ = sim.step(s_pert, sim.EnvAction(corr, a.gripper), big)
    assert s_cor.ee_pose.allclose(s_nom.ee_pose, 1e-12)


def test_observation_pose_consistency():
    s = sim.reset(CFG, 14)
    cam = camera_from_ee(s.ee_pose, sim.camera_mount(CFG))
    np.testing.assert_array_equal(sim.render_camera(s, CFG), sim.render_view(s.scene, cam, CFG))
    np.testing.assert_array_equal(sim.render_camera(s, CFG), sim.render_camera(s, CFG))


def test_empty_scene_renders_background_and_overlay():
    scene = sim.Scene((), 0.0, 0)
    up = Transform(np.eye(3), np.array([0.0, 0.0, 0.5]))  # camera +z points at the sky
    img = sim.render_view(scene, up, CFG)
    m = sim.gripper_mask(CFG)
    bg = np.round(np.array(CFG.background) * 255) / 255
    np.testing.assert_array_equal(img[~m], np.broadcast_to(bg, img[~m].shape))
    gc = np.round(np.array(CFG.gripper_color) * 255) / 255
    np.testing.assert_array_equal(img[m], np.broadcast_to(gc, img[m].shape))


def test_sphere_hit_pattern_matches_quadratic_oracle():
    from spartn.field import camera_rays
    c, r = np.array([0.01, -0.02, 0.03]), 0.03
    obj = sim.Primitive("sphere", Transform(np.eye(3), c), (r,), (1.0, 0, 0), True)
    scene = sim.Scene((obj,), -5.0, 0)  # table far below, out of view
    cam = Transform(sim.R_DOWN, np.array([0.0, 0.0, 0.2]))
    _, ids = sim.render_view(scene, cam, CFG, overlay=False, return_ids=True)
    o, d = camera_rays(cam, CFG.intrinsics)
    # independent: discriminant of |o + t d - c|^2 = r^2 with a positive root
    oc = o - c
    b = 2 * np.sum(oc * d, axis=1)
    cc = np.sum(oc * oc, axis=1) - r * r
    disc = b * b - 4 * cc
    hit = (disc >= 0) & ((-b + np.sqrt(np.maximum(disc, 0))) / 2 > 0)
    np.testing.assert_array_equal(ids.reshape(-1) == 0, hit)


def test_gripper_state_visible_in_overlay():
    s = sim.reset(CFG, 15)
    closed = replace(s, gripper_open=False)
    m = sim.gripper_mask(CFG)
    a, b = sim.render_camera(s, CFG), sim.render_camera(closed, CFG)
    np.testing.assert_array_equal(a[~m], b[~m])
    assert np.all(a[m] != b[m])
