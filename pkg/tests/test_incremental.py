import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vicsfm.sfm import (IncrementalOptions, ReconstructionError, build_tracks, reconstruct_incremental,
                        reprojection_stats)
from vicsfm.synthlab import align_similarity, make_scene


def test_build_tracks_chains_and_sorts():
    matches = {(0, 1): np.array([[0, 5], [1, 6]]), (1, 2): np.array([[5, 9]])}
    assert build_tracks(matches) == [{0: 0, 1: 5, 2: 9}, {0: 1, 1: 6}]


def test_build_tracks_drops_contradictions():
    # frame 0 features 0 and 1 both reach frame 1 feature 5
    matches = {(0, 1): np.array([[0, 5], [1, 5], [2, 7]])}
    assert build_tracks(matches) == [{0: 2, 1: 7}]


def test_build_tracks_empty():
    assert build_tracks({}) == []
    assert build_tracks({(0, 1): np.zeros((0, 2), int)}) == []


@given(st.integers(0, 10_000))
def test_tracks_partition_match_nodes(seed):
    rng = np.random.default_rng(seed)
    matches = {(a, b): rng.integers(0, 6, (rng.integers(0, 6), 2)) for a in range(4) for b in range(a + 1, 4)}
    tracks = build_tracks(matches)
    nodes = [(f, i) for tr in tracks for f, i in tr.items()]
    assert len(nodes) == len(set(nodes))
    for tr in tracks:
        assert len(tr) >= 2


def test_two_frame_exact():
    scene = make_scene(3000, 2, seed=0, sweep_deg=20)
    recon = reconstruct_incremental(scene.keypoints(), scene.matches(), scene.intrinsics,
                                    IncrementalOptions(refine_intrinsics=False))
    assert set(recon.poses) == {0, 1}
    assert reprojection_stats(recon).max < 1e-6
    assert len(recon.points) >= 0.9 * len(scene.matches()[(0, 1)])


def test_empty_match_graph_fails():
    scene = make_scene(50, 3, seed=0)
    with pytest.raises(ReconstructionError):
        reconstruct_incremental(scene.keypoints(), {}, scene.intrinsics)


def test_no_parallax_fails():
    scene = make_scene(3000, 2, seed=0, sweep_deg=20)
    kp = scene.keypoints()
    same = {0: kp[0], 1: kp[0].copy()}
    m = np.column_stack([np.arange(len(kp[0]))] * 2)
    with pytest.raises(ReconstructionError):
        reconstruct_incremental(same, {(0, 1): m}, scene.intrinsics)


@pytest.fixture(scope="module")
def noise_free():
    scene = make_scene(2000, 12, seed=1, sweep_deg=120)
    rgb = {f: np.tile(np.array([10 * f, 100, 200]), (len(k), 1)) for f, k in scene.keypoints().items()}
    return scene, reconstruct_incremental(scene.keypoints(), scene.matches(), scene.intrinsics, colors=rgb)


def test_noise_free_sequence_registers_everything(noise_free):
    scene, recon = noise_free
    assert set(recon.poses) == set(range(scene.n_frames))
    assert reprojection_stats(recon).max < 1e-6
    sim = align_similarity(recon.poses, scene.poses)
    centers = np.array([recon.poses[f].center for f in range(scene.n_frames)])
    gt = np.array([p.center for p in scene.poses])
    assert np.abs(sim.apply(centers) - gt).max() < 1e-6 * scene.diameter


def test_reconstruction_is_consistent(noise_free):
    scene, recon = noise_free
    recon.validate()
    for pid, obs in recon.observations.items():
        frames = [o.frame for o in obs]
        assert len(frames) == len(set(frames)) >= 2
        expected = int(np.round(np.mean([10 * f for f in frames])))
        assert recon.colors[pid] == (expected, 100, 200)


def test_deterministic_for_fixed_seed():
    scene = make_scene(2000, 6, noise_px=0.5, outlier_frac=0.05, seed=2, sweep_deg=60)
    a = reconstruct_incremental(scene.keypoints(), scene.matches(), scene.intrinsics, seed=3)
    b = reconstruct_incremental(scene.keypoints(), scene.matches(), scene.intrinsics, seed=3)
    assert a.to_dict() == b.to_dict()
