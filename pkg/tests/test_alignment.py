import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spartn import alignment as al
from spartn.se3 import Transform, compose, inverse, random_rotation, random_transform


def make_pairs(rng, n=20, beta=2.5, noise=0.0):
    v_T_w = random_transform(rng)
    world = [random_transform(rng, scale=0.3) for _ in range(n)]
    pairs = []
    for w in world:
        v = compose(v_T_w, w)
        t = v.translation * beta + (rng.normal(0, noise, 3) if noise else 0.0)
        pairs.append(al.PosePair(w, Transform(v.rotation, t)))
    return pairs, v_T_w


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 20.0))
def test_noiseless_recovery_exact(seed, beta):
    pairs, v_T_w = make_pairs(np.random.default_rng(seed), beta=beta)
    sol = al.align(pairs)
    assert abs(sol.scale_beta - beta) <= 1e-9 * beta
    for f in sol.v_T_w:
        assert f.allclose(v_T_w, 1e-9)


def test_noisy_scale_within_one_percent():
    errs = []
    for seed in range(20):
        pairs, _ = make_pairs(np.random.default_rng(seed), beta=1.7, noise=1e-3)
        errs.append(abs(al.estimate_scale(pairs) - 1.7) / 1.7)
    assert max(errs) < 0.01


def test_scale_regression_matches_lstsq():
    pairs, _ = make_pairs(np.random.default_rng(3), beta=0.8, noise=1e-3)
    a, b = al.relative_translations(pairs)
    ref = np.linalg.lstsq(a.reshape(-1, 1), b.reshape(-1), rcond=None)[0][0]
    assert abs(al.estimate_scale(pairs) - ref) < 1e-12


def test_world_to_sfm_reproduces_observed_pose():
    pairs, _ = make_pairs(np.random.default_rng(4), beta=3.0)
    sol = al.align(pairs)
    for k, p in enumerate(pairs):
        assert al.world_to_sfm(p.world, sol, k).allclose(p.sfm, 1e-9)


def test_degenerate_motion():
    rng = np.random.default_rng(5)
    w = random_transform(rng)
    pairs = [al.PosePair(w, w)] * 4
    with pytest.raises(al.DegenerateMotion):
        al.estimate_scale(pairs)
    with pytest.raises(al.DegenerateMotion):
        al.estimate_scale(pairs[:1])


def test_pure_rotation_motion_is_degenerate():
    rng = np.random.default_rng(6)
    pairs = [al.PosePair(Transform(random_rotation(rng), np.zeros(3)),
                         Transform(random_rotation(rng), np.zeros(3))) for _ in range(5)]
    with pytest.raises(al.DegenerateMotion):
        al.align(pairs)


def test_invalid_scale_and_index():
    with pytest.raises(al.InvalidScale):
        al.AlignmentSolution(0.0, [])
    with pytest.raises(al.InvalidScale):
        al.rescale(Transform.identity(), -1.0)
    sol = al.AlignmentSolution(1.0, [Transform.identity()])
    with pytest.raises(al.IndexOutOfRange):
        al.world_to_sfm(Transform.identity(), sol, 1)


def test_rescale_apply_scale_inverse():
    t = random_transform(np.random.default_rng(7))
    assert al.rescale(al.apply_scale(t, 4.2), 4.2).allclose(t, 1e-15)


def test_file_round_trip(tmp_path):
    pairs, _ = make_pairs(np.random.default_rng(8), n=5)
    al.write_pose_pairs(tmp_path / "pairs.txt", pairs)
    back = al.read_pose_pairs(tmp_path / "pairs.txt")
    for p, q in zip(pairs, back):
        assert p.world.allclose(q.world, 0) and p.sfm.allclose(q.sfm, 0)
    sol = al.align(pairs)
    al.write_solution(tmp_path / "sol.txt", sol)
    got = al.read_solution(tmp_path / "sol.txt")
    assert got.scale_beta == sol.scale_beta
    assert all(a.allclose(b, 0) for a, b in zip(got.v_T_w, sol.v_T_w))


def test_malformed_record():
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "x.txt")
        open(p, "w").write("0 1 2 3\n")
        with pytest.raises(ValueError):
            al.read_pose_pairs(p)


def test_mean_frame_of_identical_frames():
    t = random_transform(np.random.default_rng(9))
    sol = al.AlignmentSolution(1.0, [t, t, t])
    assert al.mean_frame(sol).allclose(t, 1e-12)
