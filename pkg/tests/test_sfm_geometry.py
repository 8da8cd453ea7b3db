import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from freeze_oracles import projection_inputs
from scenes import wide_cloud
from vicsfm.sfm import (BehindCameraError, CameraIntrinsics, DegenerateConfigurationError, EstimationError, Pose,
                        RegistrationError, TriangulationError, decompose_essential, essential_from_pose,
                        estimate_essential_ransac, project, project_points, solve_pnp_ransac, triangulate_dlt,
                        undistort_points, verify_matches, verify_pair)
from vicsfm.sfm.camera import (bearings, nearest_rotation, quat_to_rot, rot_to_quat, rotation_angle, so3_exp,
                               so3_log)
from vicsfm.sfm.essential import eight_point, ransac_iterations, sampson_distance
from vicsfm.synthlab import make_scene

R_TRUE = so3_exp(np.array([0.05, -0.1, 0.02]))
T_TRUE = np.array([1.0, 0.2, 0.1])


def unit_vectors(seed):
    return np.random.default_rng(seed).normal(size=3)


# --- camera model ---

def test_project_on_axis():
    assert np.allclose(project(CameraIntrinsics(100, 50, 50, 0), Pose.identity(), (0, 0, 2)), (50, 50))


def test_project_off_axis():
    assert np.allclose(project(CameraIntrinsics(100, 0, 0, 0), Pose.identity(), (1, 0, 2)), (50, 0))


def test_project_behind_camera():
    with pytest.raises(BehindCameraError):
        project(CameraIntrinsics(100, 0, 0, 0), Pose.identity(), (0, 0, -1))


def test_project_matches_frozen_oracle(frozen):
    for case, ref in zip(projection_inputs(), frozen["projection"]):
        intr = CameraIntrinsics(case["focal"], case["cx"], case["cy"], case["k1"])
        got = project(intr, Pose(np.array(case["q"]), np.array(case["t"])), np.array(case["X"]))
        assert np.allclose(got, ref["pixel"], atol=1e-9, rtol=0)


@given(st.integers(0, 100_000))
def test_project_matches_live_oracle(seed):
    rng = np.random.default_rng(seed)
    q, t, X = rng.normal(size=4), rng.normal(size=3) + [0, 0, 8], rng.normal(size=3)
    f, cx, cy, k1 = rng.uniform(50, 900), rng.uniform(0, 500), rng.uniform(0, 500), rng.uniform(-0.2, 0.2)
    got = project(CameraIntrinsics(f, cx, cy, k1), Pose(q, t), X)
    assert np.allclose(got, oracles.project_scalar(f, cx, cy, k1, q, t, X), atol=1e-9, rtol=0)


@given(st.integers(0, 100_000))
def test_quaternion_convention_matches_oracle(seed):
    q = np.random.default_rng(seed).normal(size=4)
    assert np.allclose(quat_to_rot(q), oracles.quaternion_matrix(q), atol=1e-12)


@given(st.integers(0, 100_000))
def test_rotation_roundtrips(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=3)
    w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
    R = so3_exp(w)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12) and np.linalg.det(R) == pytest.approx(1.0)
    assert np.allclose(so3_exp(so3_log(R)), R, atol=1e-9)
    assert np.allclose(quat_to_rot(rot_to_quat(R)), R, atol=1e-12)
    assert rotation_angle(R, np.eye(3)) == pytest.approx(np.linalg.norm(w), abs=1e-9)
    assert np.allclose(nearest_rotation(R + 1e-9), R, atol=1e-8)


@given(st.integers(0, 100_000))
def test_undistort_inverts_projection(seed):
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(300.0, 160.0, 120.0, rng.uniform(-0.15, 0.15))
    X = np.column_stack([rng.uniform(-0.5, 0.5, (20, 2)), np.ones(20)])
    pix, _ = project_points(intr, Pose.identity(), X)
    assert np.allclose(undistort_points(intr, pix), X[:, :2], atol=1e-9)
    b = bearings(intr, pix)
    assert np.allclose(b / np.linalg.norm(b, axis=1, keepdims=True), X / np.linalg.norm(X, axis=1, keepdims=True),
                       atol=1e-9)


def test_pose_center_and_look_at():
    p = Pose.look_at([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert np.allclose(p.center, [1, 2, 3])
    d = p.transform(np.zeros(3))
    assert d[0] == pytest.approx(0, abs=1e-12) and d[1] == pytest.approx(0, abs=1e-12) and d[2] > 0
    back = Pose.from_dict(p.to_dict())
    assert np.allclose(back.q, p.q) and np.allclose(back.t, p.t)


# --- two-view geometry ---

def exact_pair(n=200, seed=0, R=R_TRUE, t=T_TRUE):
    X = wide_cloud(np.random.default_rng(seed), n)
    x1 = X[:, :2] / X[:, 2:]
    Xc = X @ R.T + t
    return X, x1, Xc[:, :2] / Xc[:, 2:]


def test_essential_canonical_translation():
    _, x1, x2 = exact_pair(R=np.eye(3), t=np.array([1.0, 0.0, 0.0]))
    E, mask = estimate_essential_ransac(x1, x2, 1e-4)
    ref = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], float)
    E = E / np.linalg.norm(E) * np.linalg.norm(ref)
    assert min(np.abs(E - ref).max(), np.abs(E + ref).max()) < 1e-8
    assert mask.all()


def test_eight_point_exact_and_sampson_zero():
    _, x1, x2 = exact_pair()
    Et = essential_from_pose(R_TRUE, T_TRUE)
    E = eight_point(x1, x2)
    E, Et = E / np.linalg.norm(E), Et / np.linalg.norm(Et)
    assert min(np.abs(E - Et).max(), np.abs(E + Et).max()) < 1e-9
    assert sampson_distance(Et, x1, x2).max() < 1e-12


def test_essential_needs_eight():
    _, x1, x2 = exact_pair(n=7)
    with pytest.raises(EstimationError):
        estimate_essential_ransac(x1, x2, 1e-3)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_essential_ransac_outliers(seed):
    rng = np.random.default_rng(seed)
    _, x1, x2 = exact_pair(1000, seed)
    out = rng.random(len(x1)) < 0.3
    x2 = x2.copy()
    x2[out] = rng.uniform(-1.5, 1.5, (out.sum(), 2))
    E, mask = estimate_essential_ransac(x1, x2, 1e-3, seed=seed)
    assert (mask & ~out).sum() / (~out).sum() >= 0.99
    assert (mask & out).sum() <= 0.01 * out.sum() + 2


def test_ransac_iteration_count():
    assert ransac_iterations(1.0, 8, 0.999, 1000) == 1
    assert ransac_iterations(0.0, 8, 0.999, 1000) == 1000
    n = ransac_iterations(0.7, 8, 0.99, 10 ** 6)
    assert n == int(np.ceil(np.log(0.01) / np.log(1 - 0.7 ** 8)))


def test_decompose_canonical():
    X, x1, x2 = exact_pair(R=np.eye(3), t=np.array([1.0, 0.0, 0.0]))
    pose = decompose_essential(essential_from_pose(np.eye(3), np.array([1.0, 0, 0])), x1, x2)
    assert np.allclose(pose.R, np.eye(3), atol=1e-10)
    assert np.allclose(pose.t, [1, 0, 0], atol=1e-10)


def test_decompose_pure_rotation_is_degenerate():
    _, x1, x2 = exact_pair(R=R_TRUE, t=np.zeros(3))
    with pytest.raises(DegenerateConfigurationError):
        decompose_essential(essential_from_pose(R_TRUE, np.zeros(3)), x1, x2)
    with pytest.raises(DegenerateConfigurationError):
        decompose_essential(essential_from_pose(R_TRUE, np.array([1e-3, 0, 0])), x1, x2)


def test_decompose_synthlab_pairs_noise_free():
    scene = make_scene(600, 20, seed=1)
    worst = 0.0
    for a, b in [(i, i + 1) for i in range(19)] + [(0, 3), (5, 9)]:
        pa, pb = scene.poses[a], scene.poses[b]
        ids = np.intersect1d(*(scene.obs_point[scene.obs_frame == f] for f in (a, b)))
        if len(ids) < 8:
            continue
        Xa = pa.transform(scene.points[ids])
        Xb = pb.transform(scene.points[ids])
        x1, x2 = Xa[:, :2] / Xa[:, 2:], Xb[:, :2] / Xb[:, 2:]
        R_rel = pb.R @ pa.R.T
        t_rel = pb.t - R_rel @ pa.t
        E, _ = estimate_essential_ransac(x1, x2, 1e-6)
        pose = decompose_essential(E, x1, x2)
        worst = max(worst, rotation_angle(pose.R, R_rel))
        assert np.allclose(pose.t, t_rel / np.linalg.norm(t_rel), atol=1e-6)
    assert worst < 1e-6


def test_triangulate_hand_example():
    intr = CameraIntrinsics(1.0, 0.0, 0.0, 0.0)
    b = Pose(np.array([1.0, 0, 0, 0]), np.array([-1.0, 0, 0]))
    assert np.allclose(triangulate_dlt(Pose.identity(), b, intr, (0.25, 0), (-0.25, 0)), (0.5, 0, 2), atol=1e-12)


def test_triangulate_same_centre_rejected():
    intr = CameraIntrinsics(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(TriangulationError):
        triangulate_dlt(Pose.identity(), Pose.from_rt(so3_exp(np.array([0, 0.1, 0])), np.zeros(3)), intr,
                        (0.1, 0), (0.2, 0))


def test_triangulate_synthlab_noise_free():
    scene = make_scene(300, 12, seed=2)
    err = 0.0
    for a, b in [(0, 2), (3, 6), (7, 11)]:
        fa = scene.obs_frame == a
        fb = scene.obs_frame == b
        ids = np.intersect1d(scene.obs_point[fa], scene.obs_point[fb])
        for pid in ids:
            pa = scene.obs_pixel[fa][scene.obs_point[fa] == pid][0]
            pb = scene.obs_pixel[fb][scene.obs_point[fb] == pid][0]
            try:
                X = triangulate_dlt(scene.poses[a], scene.poses[b], scene.intrinsics, pa, pb)
            except TriangulationError:
                continue
            err = max(err, float(np.linalg.norm(X - scene.points[pid])))
    assert err < 1e-6


# --- PnP ---

def pnp_case(n, seed, outlier_frac=0.0, noise=0.0):
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(500.0, 320.0, 240.0, 0.0)
    pose = Pose.from_rt(R_TRUE, T_TRUE)
    X = wide_cloud(rng, 4 * n)
    X = X[(X @ R_TRUE.T + T_TRUE)[:, 2] > 0.5][:n]
    pix, _ = project_points(intr, pose, X)
    out = rng.random(n) < outlier_frac
    pix = pix + rng.normal(0, noise, pix.shape) if noise else pix
    pix[out] = rng.uniform(-500, 1000, (out.sum(), 2))
    return intr, pose, X, pix, out


def pose_errors(est: Pose, truth: Pose):
    return rotation_angle(est.R, truth.R), np.linalg.norm(est.center - truth.center) / np.linalg.norm(truth.center)


def test_pnp_exact_six_points():
    intr, pose, X, pix, _ = pnp_case(6, 0)
    est, mask = solve_pnp_ransac(X, pix, intr)
    r, t = pose_errors(est, pose)
    assert mask.all() and r < 1e-6 and t < 1e-6


def test_pnp_three_points_fails():
    intr, _, X, pix, _ = pnp_case(6, 0)
    with pytest.raises(RegistrationError):
        solve_pnp_ransac(X[:3], pix[:3], intr)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_pnp_hundred_points_forty_percent_outliers(seed):
    intr, pose, X, pix, out = pnp_case(100, seed, 0.4, noise=1.0)
    est, mask = solve_pnp_ransac(X, pix, intr, seed=seed)
    assert (mask & ~out).sum() / (~out).sum() >= 0.99
    assert not (mask & out).any()
    r, t = pose_errors(est, pose)
    assert r < 1e-2 and t < 1e-2


# --- pair verification ---

def test_verify_pair_drops_static_and_outlier_matches():
    rng = np.random.default_rng(4)
    intr = CameraIntrinsics(500.0, 320.0, 240.0, 0.0)
    X = wide_cloud(rng, 300)
    pa, _ = project_points(intr, Pose.identity(), X)
    pb, _ = project_points(intr, Pose.from_rt(R_TRUE, T_TRUE * 0.3), X)
    static = rng.uniform([0, 0], [640, 480], (40, 2))
    kp_a = np.vstack([pa, static])
    kp_b = np.vstack([pb + rng.normal(0, 0.3, pb.shape), static + rng.normal(0, 0.3, static.shape)])
    kp_b[:30] = rng.uniform([0, 0], [640, 480], (30, 2))
    matches = np.column_stack([np.arange(len(kp_a)), np.arange(len(kp_a))])
    kept = verify_pair(kp_a, kp_b, matches, intr)
    kept_ids = set(kept[:, 0].tolist())
    assert not kept_ids & set(range(300, 340))  # image-fixed matches
    assert len(kept_ids & set(range(30))) <= 1  # random outliers
    assert len(kept_ids & set(range(30, 300))) >= 0.99 * 270


def test_verify_matches_drops_weak_pairs():
    rng = np.random.default_rng(5)
    intr = CameraIntrinsics(500.0, 320.0, 240.0, 0.0)
    X = wide_cloud(rng, 100)
    kps = {f: project_points(intr, Pose.from_rt(np.eye(3), np.array([0.2 * f, 0, 0])), X)[0] for f in range(3)}
    ids = np.column_stack([np.arange(100), np.arange(100)])
    matches = {(0, 1): ids, (1, 2): ids[:10], (0, 2): ids}
    out = verify_matches(kps, matches, intr, min_inliers=15)
    assert set(out) == {(0, 1), (0, 2)}
    assert len(out[(0, 1)]) == 100
