import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from scenes import ground_truth_reconstruction
from vicsfm.sfm import BundleOptions, Pose, bundle_adjust, reprojection_stats
from vicsfm.sfm.bundle import huber
from vicsfm.sfm.camera import so3_exp
from vicsfm.sfm.projection import project_with_jacobians
from vicsfm.synthlab import make_scene


def random_batch(seed, n=12):
    rng = np.random.default_rng(seed)
    R = np.array([so3_exp(rng.normal(0, 0.3, 3)) for _ in range(n)])
    t = rng.normal(0, 0.5, (n, 3)) + [0, 0, 4]
    X = rng.normal(0, 1, (n, 3))
    return R, t, X, rng.uniform(200, 800), rng.uniform(-0.2, 0.2), np.array([320.0, 240.0])


@given(st.integers(0, 10_000))
def test_jacobians_match_central_differences(seed):
    R, t, X, f, k1, c = random_batch(seed)
    _, _, Jc, Jp, Ji = project_with_jacobians(R, t, X, f, k1, c)
    for i in range(len(X)):
        def pose_fn(d):
            return project_with_jacobians(so3_exp(d[:3])[None] @ R[i:i + 1], t[i:i + 1] + d[3:], X[i:i + 1],
                                          f, k1, c, False)[0][0]

        def point_fn(x):
            return project_with_jacobians(R[i:i + 1], t[i:i + 1], x[None], f, k1, c, False)[0][0]

        def intr_fn(p):
            return project_with_jacobians(R[i:i + 1], t[i:i + 1], X[i:i + 1], p[0], p[1], c, False)[0][0]

        for J, fd in ((Jc[i], oracles.central_difference(pose_fn, np.zeros(6), 1e-6)),
                      (Jp[i], oracles.central_difference(point_fn, X[i], 1e-6)),
                      (Ji[i], oracles.central_difference(intr_fn, np.array([f, k1]), 1e-6))):
            assert np.allclose(J, fd, rtol=1e-4, atol=1e-4 * np.abs(J).max())


def test_huber_is_continuous_at_delta():
    d = 2.0
    assert huber(np.array([d - 1e-12]), d)[0] == pytest.approx(huber(np.array([d + 1e-12]), d)[0])
    assert huber(np.array([1.0]), d)[0] == 0.5
    assert huber(np.array([4.0]), d)[0] == d * (4.0 - 1.0)


def test_options_validated():
    with pytest.raises(ValueError):
        BundleOptions(max_iterations=0)
    with pytest.raises(ValueError):
        BundleOptions(huber_delta=-1)


@pytest.fixture(scope="module")
def exact_recon():
    return ground_truth_reconstruction(make_scene(300, 10, seed=3))


def test_ground_truth_is_a_fixed_point(exact_recon):
    history = []
    out = bundle_adjust(exact_recon, history=history)
    assert reprojection_stats(out).max < 1e-9
    for f, pose in exact_recon.poses.items():
        assert np.allclose(out.poses[f].R, pose.R, atol=1e-9)
        assert np.allclose(out.poses[f].t, pose.t, atol=1e-9)


def perturbed(recon, seed, frac=0.01):
    rng = np.random.default_rng(seed)
    out = recon.copy()
    for f in list(out.poses)[2:]:
        p = out.poses[f]
        out.poses[f] = Pose.from_rt(so3_exp(rng.normal(0, frac, 3)) @ p.R, p.t * (1 + frac * rng.normal(size=3)))
    for pid in out.points:
        out.points[pid] = out.points[pid] * (1 + frac * rng.normal(size=3))
    return out


@pytest.mark.parametrize("seed", [0, 1])
def test_small_perturbation_is_recovered(exact_recon, seed):
    start = perturbed(exact_recon, seed)
    assert reprojection_stats(start).mean > 0.5
    history = []
    out = bundle_adjust(start, BundleOptions(function_tolerance=1e-14), history=history)
    assert reprojection_stats(out).mean < 1e-6
    assert all(b < a for a, b in zip(history, history[1:]))


def test_cost_history_monotone_with_noise():
    scene = make_scene(400, 12, noise_px=1.0, seed=4)
    history = []
    out = bundle_adjust(perturbed(ground_truth_reconstruction(scene), 2), history=history)
    assert len(history) > 2
    assert all(b < a for a, b in zip(history, history[1:]))
    assert reprojection_stats(out).rmse < 1.5


def test_gauge_frames_stay_fixed(exact_recon):
    out = bundle_adjust(perturbed(exact_recon, 5))
    a, b = exact_recon.gauge
    assert np.allclose(out.poses[a].R, exact_recon.poses[a].R) and np.allclose(out.poses[a].t, exact_recon.poses[a].t)
    k = int(np.argmax(np.abs(exact_recon.poses[b].t)))
    assert out.poses[b].t[k] == exact_recon.poses[b].t[k]  # fixes the scale


def test_local_window_leaves_other_frames_alone(exact_recon):
    start = perturbed(exact_recon, 6)
    out = bundle_adjust(start, variable_frames=[4, 5])
    for f in start.poses:
        if f not in (4, 5):
            assert np.array_equal(out.poses[f].t, start.poses[f].t)


def test_intrinsics_refined_from_wrong_focal():
    scene = make_scene(400, 12, seed=5)
    recon = ground_truth_reconstruction(scene)
    intr = recon.intrinsics
    recon.intrinsics = type(intr)(intr.focal * 1.05, intr.cx, intr.cy, 0.0)
    out = bundle_adjust(recon, BundleOptions(refine_intrinsics=True, function_tolerance=1e-14))
    assert out.intrinsics.focal == pytest.approx(intr.focal, rel=1e-6)
    assert reprojection_stats(out).mean < 1e-6
