import math

import numpy as np
import pytest

from spartn import policy as po, sim
from spartn.dataset import CLOSE, OPEN
from spartn.se3 import Transform, transform_to_params

CFG = sim.EnvConfig()
BOUNDS = np.array([0.2, 0.2, 0.2, 0.02, 0.02, 0.02])


def tiny_net(seed=0):
    return po.PolicyNet.init(BOUNDS, seed, hidden=(8, 6, 5, 4), image_res=32)


def random_batch(rng, n=5, res=32):
    imgs = rng.uniform(0, 1, (n, res, res, 3))
    targets = np.concatenate([rng.uniform(-1, 1, (n, 6)) * BOUNDS * 0.9,
                              rng.integers(0, 2, (n, 1))], axis=1)
    return po.Batch(imgs, np.zeros((n, 12)), targets)


def test_zero_parameters_give_identity_and_open():
    p = po.PolicyNet.init(BOUNDS)
    p.params[:] = 0
    a = po.forward(p, np.random.default_rng(0).uniform(0, 1, (64, 64, 3)))
    assert a.delta.allclose(Transform.identity(), 0)
    assert a.gripper == OPEN


def test_outputs_within_bounds():
    rng = np.random.default_rng(1)
    p = tiny_net()
    for _ in range(100):
        p.params = rng.normal(0, 5, p.n_params)
        pose, _ = p.predict(rng.uniform(0, 1, (100, 32, 32, 3)))
        assert np.all(np.abs(pose) <= BOUNDS)


def test_forward_pure_and_resolution_checked():
    p = po.PolicyNet.init(BOUNDS)
    img = np.random.default_rng(2).uniform(0, 1, (64, 64, 3))
    a, b = po.forward(p, img), po.forward(p, img)
    assert a.delta.allclose(b.delta, 0) and a.gripper == b.gripper
    with pytest.raises(po.ResolutionMismatch):
        po.forward(p, np.zeros((32, 32, 3)))


def test_targets_equal_outputs_give_zero_pose_mse():
    rng = np.random.default_rng(3)
    p = tiny_net()
    b = random_batch(rng)
    pose, _ = p.predict(b.images)
    b.targets[:, :6] = pose
    loss, _ = po.loss_and_grad(p, b)
    logit = p.predict(b.images)[1]
    y = b.targets[:, 6]
    bce = np.mean(np.log1p(np.exp(logit)) - logit * y)
    assert abs(loss - po.GRIPPER_WEIGHT * bce) < 1e-12


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    p = tiny_net()
    p.params = rng.normal(0, 0.3, p.n_params)
    b = random_batch(rng, 6)
    _, g = po.loss_and_grad(p, b)
    h = 1e-6
    for i in rng.choice(p.n_params, 32, replace=False):
        up, dn = p.params.copy(), p.params.copy()
        up[i] += h
        dn[i] -= h
        fd = (po.loss_and_grad(p, b, up)[0] - po.loss_and_grad(p, b, dn)[0]) / (2 * h)
        assert abs(fd - g[i]) <= 1e-4 * max(abs(fd), 1e-3)


def test_duplicating_rows_leaves_loss_unchanged():
    rng = np.random.default_rng(5)
    p = tiny_net()
    b = random_batch(rng)
    d = po.Batch(np.concatenate([b.images] * 2), np.concatenate([b.poses] * 2),
                 np.concatenate([b.targets] * 2))
    assert abs(po.loss_and_grad(p, b)[0] - po.loss_and_grad(p, d)[0]) < 1e-12


def test_empty_batch_and_dataset():
    with pytest.raises(po.EmptyDataset):
        po.loss_and_grad(tiny_net(), po.Batch(np.zeros((0, 32, 32, 3)), np.zeros((0, 12)),
                                              np.zeros((0, 7))))
    empty = po.Dataset.from_records([], [], [], [], BOUNDS)
    with pytest.raises(po.EmptyDataset):
        po.train(empty, None, po.TrainConfig(steps=1), BOUNDS)


def fixed_dataset(n=8, seed=6):
    rng = np.random.default_rng(seed)
    b = random_batch(rng, n, 64)
    return po.Dataset(b.images, b.poses, b.targets)


def test_zero_steps_returns_initialization():
    r = po.train(fixed_dataset(), None, po.TrainConfig(steps=0, seed=7), BOUNDS)
    np.testing.assert_array_equal(r.policy.params, po.PolicyNet.init(BOUNDS, 7).params)


def test_overfit_eight_examples():
    ds = fixed_dataset()
    r = po.train(ds, None, po.TrainConfig(steps=2000, batch=8, seed=1), BOUNDS)
    pose, _ = r.policy.predict(ds.images)
    mse = np.mean((pose / BOUNDS - ds.targets[:, :6] / BOUNDS) ** 2)
    assert mse < 1e-4


def test_training_deterministic():
    ds = fixed_dataset()
    cfg = po.TrainConfig(steps=20, batch=4, seed=3)
    a = po.train(ds, fixed_dataset(seed=9), cfg, BOUNDS)
    b = po.train(ds, fixed_dataset(seed=9), cfg, BOUNDS)
    np.testing.assert_array_equal(a.policy.params, b.policy.params)
    assert a.losses == b.losses


def test_mix_fraction():
    rng = np.random.default_rng(8)
    frac = np.mean([po.sample_sources(rng, 64, 0.5).mean() for _ in range(10_000)])
    assert 0.49 <= frac <= 0.51


def test_mix_forced_to_zero_without_augmented_data():
    r = po.train(fixed_dataset(), None, po.TrainConfig(steps=5, batch=4), BOUNDS)
    assert r.aug_fraction == 0.0


def test_targets_clamped_with_count():
    acts = [Transform.from_translation([0, 0, 0.05]), Transform.from_translation([0, 0, 0.02]),
            Transform.identity()]
    ds = po.Dataset.from_records(np.zeros((3, 64, 64, 3)), [Transform.identity()] * 3, acts,
                                 [OPEN] * 3, BOUNDS)
    assert ds.clamped == 1
    assert np.all(np.abs(ds.targets[:, :6]) <= BOUNDS)
    assert ds.targets[0, 5] == 0.02


def test_checkpoint_round_trip(tmp_path):
    p = po.PolicyNet.init(BOUNDS, 2)
    po.save_policy(tmp_path / "p.bin", p)
    q = po.load_policy(tmp_path / "p.bin")
    assert q.sizes == p.sizes and q.image_res == p.image_res
    np.testing.assert_allclose(q.bounds, BOUNDS, rtol=1e-7)
    np.testing.assert_array_equal(q.params, p.params.astype(np.float32))
    raw = (tmp_path / "p.bin").read_bytes()
    assert raw[:4] == b"SPPL"
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        po.load_policy(tmp_path / "bad.bin")


def test_wilson_interval_reference_values():
    # reference: statsmodels proportion_confint(7, 10, method="wilson")
    lo, hi = po.wilson_interval(7, 10)
    assert abs(lo - 0.3967781) < 1e-6 and abs(hi - 0.8922087) < 1e-6
    assert po.wilson_interval(0, 20)[0] == 0.0
    assert po.wilson_interval(20, 20)[1] == pytest.approx(1.0)


def test_expert_policy_success_rate():
    r = po.evaluate(lambda s: sim.scripted_expert(s, CFG), CFG, 200, seed=0)
    assert r.success_rate >= 0.95
    assert len(r.episodes) == 200


def test_identity_policy_never_succeeds():
    r = po.evaluate(lambda s: sim.EnvAction(Transform.identity(), OPEN), CFG, 20, seed=0)
    assert r.success_rate == 0.0


def test_evaluation_deterministic(tmp_path):
    p = po.PolicyNet.init(CFG.action_bounds, 0)
    a = po.evaluate(p, CFG, 3, seed=5)
    b = po.evaluate(p, CFG, 3, seed=5)
    assert a.episodes == b.episodes
    a.write_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "seed,episode,success,steps,collision" and len(lines) == 4
    with pytest.raises(ValueError):
        po.evaluate(p, CFG, 0, seed=5)
