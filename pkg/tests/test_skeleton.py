"""Rig construction, rotations, kinematics, pose sampling, pose io."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from clothpix.skeleton import (Pose, euler_xzy, feature_to_pose,
                               forward_kinematics, identity_pose,
                               load_pose_batch, make_necktie_skeleton,
                               make_tee_skeleton, pose_angles_in_limits,
                               pose_to_feature, sample_pose, save_pose_batch,
                               skeleton_from_json, skeleton_to_json)


def recover_xzy(r):
    """Invert euler_xzy. Valid while |z| < pi/2, which the limits enforce."""
    ax = np.arctan2(r[2, 1], r[1, 1])
    az = np.arctan2(-r[0, 1], np.hypot(r[1, 1], r[2, 1]))
    m = euler_xzy(ax, 0.0, 0.0).T @ r
    ay = np.arctan2(m[0, 2], m[0, 0])
    return np.array([ax, az, ay])


def test_euler_composition_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        ax, az, ay = rng.uniform(-1.4, 1.4, 3)
        got = euler_xzy(ax, az, ay)
        want = Rotation.from_euler("XZY", [ax, az, ay]).as_matrix()
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_euler_recovery_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        angles = rng.uniform(-1.4, 1.4, 3)
        back = recover_xzy(euler_xzy(*angles))
        np.testing.assert_allclose(back, angles, atol=1e-10)


def test_tee_skeleton_layout():
    sk = make_tee_skeleton()
    assert sk.n_joints == 10
    assert [j.name for j in sk.joints][:3] == ["hips", "lower_back", "spine"]
    assert sk.joint_index("l_arm") == 7
    fk = forward_kinematics(sk, identity_pose(sk))
    np.testing.assert_allclose(fk.translations[sk.joint_index("l_arm")],
                               [34.0, 144.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(fk.translations[0], [0.0, 100.0, 0.0],
                               atol=1e-12)


def test_necktie_skeleton_names_match_body_chain():
    sk = make_necktie_skeleton()
    assert [j.name for j in sk.joints] == ["lower_back", "spine", "neck",
                                           "neck1"]
    tee = make_tee_skeleton()
    assert [tee.joint_index(j.name) for j in sk.joints] == [1, 2, 4, 5]


def test_identity_pose_reproduces_rest():
    sk = make_tee_skeleton()
    fk = forward_kinematics(sk, identity_pose(sk))
    for i, j in enumerate(sk.joints):
        np.testing.assert_allclose(fk.rotations[i], j.rest_rotation,
                                   atol=1e-15)


def _fk_brute(skeleton, pose):
    """Independent evaluation: explicit 4x4 chain walked per joint."""
    out_r = []
    out_t = []
    for i in range(skeleton.n_joints):
        chain = []
        k = i
        while k >= 0:
            chain.append(k)
            k = skeleton.joints[k].parent
        m = np.eye(4)
        for k in reversed(chain):
            j = skeleton.joints[k]
            local = np.eye(4)
            local[:3, :3] = j.rest_rotation @ (
                np.eye(3) if j.parent < 0 else pose.rotations[k])
            local[:3, 3] = j.rest_translation
            m = m @ local
        out_r.append(m[:3, :3])
        out_t.append(m[:3, 3])
    return np.array(out_r), np.array(out_t)


def test_forward_kinematics_matches_matrix_chain():
    sk = make_tee_skeleton()
    pose = sample_pose(sk, 42)
    fk = forward_kinematics(sk, pose)
    wr, wt = _fk_brute(sk, pose)
    np.testing.assert_allclose(fk.rotations, wr, atol=1e-12)
    np.testing.assert_allclose(fk.translations, wt, atol=1e-10)


def test_root_pose_rotation_is_ignored():
    sk = make_tee_skeleton()
    pose = sample_pose(sk, 3)
    twisted = Pose(pose.rotations.copy())
    twisted.rotations[0] = euler_xzy(0.4, 0.2, -0.3)
    a = forward_kinematics(sk, pose)
    b = forward_kinematics(sk, twisted)
    np.testing.assert_allclose(a.rotations, b.rotations, atol=0)
    np.testing.assert_allclose(a.translations, b.translations, atol=0)


def test_pose_feature_round_trip():
    sk = make_tee_skeleton()
    pose = sample_pose(sk, 9)
    f = pose_to_feature(pose)
    assert f.shape == (90,)
    back = feature_to_pose(f)
    np.testing.assert_array_equal(back.rotations, pose.rotations)
    with pytest.raises(ValueError):
        feature_to_pose(np.zeros(10))


def test_sampled_poses_are_valid_rotations_within_limits():
    sk = make_tee_skeleton()
    for seed in range(200):
        pose = sample_pose(sk, seed)
        pose.validate()
        angles = np.array([recover_xzy(r) for r in pose.rotations])
        assert pose_angles_in_limits(sk, angles)


def test_sample_pose_deterministic_and_seed_sensitive():
    sk = make_tee_skeleton()
    a = sample_pose(sk, 7)
    b = sample_pose(sk, 7)
    c = sample_pose(sk, 8)
    np.testing.assert_array_equal(a.rotations, b.rotations)
    assert not np.array_equal(a.rotations, c.rotations)


def test_limb_altitude_is_sine_uniform():
    # z angle of limb joints: sin(theta) uniform over [sin lo, sin hi]
    from scipy.stats import kstest
    sk = make_tee_skeleton()
    i = sk.joint_index("l_shoulder")
    lo, hi = sk.joints[i].limits[1]
    zs = np.array([recover_xzy(sample_pose(sk, s).rotations[i])[1]
                   for s in range(2000)])
    stat = kstest(np.sin(zs), "uniform",
                  args=(np.sin(lo), np.sin(hi) - np.sin(lo))).statistic
    assert stat < 0.04


def test_pose_batch_round_trip(tmp_path):
    sk = make_tee_skeleton()
    poses = [sample_pose(sk, s) for s in range(5)]
    path = tmp_path / "poses.json"
    save_pose_batch(path, poses)
    back = load_pose_batch(path)
    assert len(back) == 5
    for a, b in zip(poses, back):
        np.testing.assert_allclose(b.rotations, a.rotations, atol=1e-15)


def test_skeleton_json_round_trip():
    sk = make_tee_skeleton()
    back = skeleton_from_json(skeleton_to_json(sk))
    assert back.n_joints == sk.n_joints
    for a, b in zip(sk.joints, back.joints):
        assert a.name == b.name and a.parent == b.parent and a.limb == b.limb
        np.testing.assert_allclose(a.rest_translation, b.rest_translation)
        np.testing.assert_allclose(a.limits, b.limits)
