import numpy as np
import pytest

from slicereg.errors import InvalidArgument, TooFewPoints
from slicereg.estimator import PlaneEstimate
from slicereg.evalx import (experiment_poses, inplane_sweep, intra_inter_analysis, mma, nearest_at_angle,
                            plane_errors, summarize_pairs, true_3d_position, true_3d_positions,
                            write_rows_csv)
from slicereg.geometry import PlaneP, SlicePose
from slicereg.grid import Volume3
from slicereg.matching import MatchSet
from slicereg.sampler import slice_grid


def _pose(rng):
    d = rng.normal(size=3)
    return SlicePose.from_normal(rng.uniform(10, 50, 3), d / np.linalg.norm(d), rng.uniform(0, 6.28))


def test_center_pixel_maps_to_center(rng):
    pose = _pose(rng)
    np.testing.assert_allclose(true_3d_position((31.5, 31.5), pose, 64, 64), pose.center, atol=1e-12)
    np.testing.assert_allclose(true_3d_position((24, 24), pose, 49, 49), pose.center, atol=1e-12)


def test_axial_unit_offset():
    pose = SlicePose.from_normal([10, 20, 30], [0, 0, 1])
    np.testing.assert_allclose(true_3d_position((25, 24), pose, 49, 49), pose.center + pose.u, atol=1e-12)


def test_matches_slice_grid(rng):
    for _ in range(10):
        pose = _pose(rng)
        w, h = int(rng.integers(5, 70)), int(rng.integers(5, 70))
        grid = slice_grid(pose, w, h)
        q = np.stack([rng.integers(0, w, 50), rng.integers(0, h, 50)], axis=1)
        np.testing.assert_allclose(true_3d_positions(q, pose, w, h), grid[q[:, 0], q[:, 1]], atol=1e-12)


def test_round_trip_through_plane_frame(rng):
    for _ in range(20):
        pose = _pose(rng)
        p = pose.center + rng.uniform(-20, 20) * pose.u + rng.uniform(-20, 20) * pose.v
        a = (p - pose.center) @ pose.u + 31.5
        b = (p - pose.center) @ pose.v + 31.5
        np.testing.assert_allclose(true_3d_position((a, b), pose, 64, 64), p, atol=1e-9)


def _matchset(q, s):
    n = len(q)
    return MatchSet(np.arange(n), np.arange(n), np.zeros(n, int), np.zeros(n), np.asarray(q), np.asarray(s))


def test_mma_exact_and_shifted():
    pose = SlicePose.from_normal([20, 20, 20], [0, 0, 1])
    q = np.array([[10, 10], [15, 12], [3, 30]])
    true = np.rint(true_3d_positions(q, pose, 33, 33) + 0.0).astype(int)
    # centre 20 with 33 px: pixel coordinate maps to integer voxels
    est = PlaneEstimate(PlaneP([0, 0, 1], 20.0), inlier_indices=[0, 1, 2], support=3)
    rep = mma(_matchset(q, true), pose, est, (33, 33))
    assert rep.before == (1.0, 1.0, 1.0) and rep.after == (1.0, 1.0, 1.0)
    rep = mma(_matchset(q, true + [0, 0, 4]), pose, est, (33, 33))
    assert rep.before == (0.0, 1.0, 1.0)


def test_mma_hand_counted():
    pose = SlicePose.from_normal([20, 20, 20], [0, 0, 1])
    q = np.array([[16, 16]] * 6)
    base = np.rint(true_3d_positions(q, pose, 33, 33)).astype(int)
    shifts = np.array([[0, 0, 0], [2, 0, 0], [0, 3, 0], [4, 0, 0], [0, 0, 6], [11, 0, 0]])
    est = PlaneEstimate(PlaneP([0, 0, 1], 20.0), inlier_indices=[0, 3, 5], support=3)
    rep = mma(_matchset(q, base + shifts), pose, est, (33, 33))
    # distances 0, 2, 3, 4, 6, 11
    assert rep.before == (3 / 6, 4 / 6, 5 / 6)
    assert rep.after == (1 / 3, 2 / 3, 2 / 3)
    assert rep.n_matches == 6 and rep.n_inliers == 3


def test_mma_without_inliers():
    pose = SlicePose.from_normal([0, 0, 0], [0, 0, 1])
    rep = mma(_matchset([[0, 0]], [[0, 0, 0]]), pose, PlaneEstimate(None), (1, 1))
    assert rep.after == (0.0, 0.0, 0.0) and rep.n_inliers == 0
    with pytest.raises(InvalidArgument):
        mma(_matchset(np.zeros((0, 2)), np.zeros((0, 3))), pose, PlaneEstimate(None), (1, 1))


def test_nearest_at_angle():
    row = np.array([0.0, 12.0, 9.0, 31.0, 9.0])
    assert nearest_at_angle(row, 10.0, 0) == 2
    assert nearest_at_angle(row, 0.0, 0) == 2


def test_intra_inter_constant_volume():
    vol = Volume3(np.full((30, 30, 30), 0.5))
    cands = np.array([[10, 10, 10], [15, 15, 15], [20, 12, 9]])
    pairs = intra_inter_analysis(vol, cands, R=50, seed=1)
    assert len(pairs) == 3 * 9
    assert {p.angle_diff for p in pairs} == set(range(10, 91, 10))
    assert all(p.beta <= 1e-12 and p.gamma <= 1e-12 for p in pairs)


def test_intra_inter_needs_two():
    with pytest.raises(TooFewPoints):
        intra_inter_analysis(Volume3(np.zeros((5, 5, 5))), [[2, 2, 2]])


def test_intra_inter_deterministic(small_phantom):
    cands = np.array([[10, 12, 14], [16, 16, 16], [20, 9, 11], [8, 20, 18]])
    a = intra_inter_analysis(small_phantom, cands, R=60, seed=3)
    b = intra_inter_analysis(small_phantom, cands, R=60, seed=3, threads=3)
    assert a == b
    rows = summarize_pairs(a)
    assert [r["angle_diff"] for r in rows] == list(range(10, 91, 10))
    assert all(r["n"] == 4 for r in rows)


def test_inplane_sweep(small_phantom):
    rows = inplane_sweep(small_phantom, (16, 16, 16), (10, 12, 14), n_angles=36)
    assert len(rows) == 36
    assert rows[0][0] == 0.0 and rows[0][1] == 0.0
    assert rows[9][0] == pytest.approx(90.0)
    const = inplane_sweep(Volume3(np.ones((20, 20, 20))), (10, 10, 10), (5, 5, 5), n_angles=12)
    assert all(abs(i) < 1e-12 and abs(e) < 1e-12 for _, i, e in const)


def test_experiment_poses():
    poses = experiment_poses([30, 31, 32], n_dirs=30, offsets=(-6, 0, 6), seed=5)
    assert len(poses) == 90
    again = experiment_poses([30, 31, 32], n_dirs=30, offsets=(-6, 0, 6), seed=5)
    for (i, o, p), (_, _, q) in zip(poses, again):
        assert p.center.tobytes() == q.center.tobytes() and p.u.tobytes() == q.u.tobytes()
        np.testing.assert_allclose(p.center, np.array([30, 31, 32]) + o * p.normal, atol=1e-12)
    # offsets of one direction share the normal and in-plane frame
    (_, _, a), (_, _, b) = poses[0], poses[2]
    assert a.normal.tobytes() == b.normal.tobytes() and a.u.tobytes() == b.u.tobytes()
    normals = np.array([p.normal for _, o, p in poses if o == 0])
    assert len(np.unique(np.round(normals, 9), axis=0)) == 30


def test_plane_errors():
    pose = SlicePose.from_normal([0, 0, 5], [0, 0, 1])
    ang, t = plane_errors(PlaneEstimate(PlaneP([0, 0, -1], -5.5)), pose)
    assert ang == 0 and t == pytest.approx(0.5)
    assert plane_errors(PlaneEstimate(None), pose) == (90.0, float("inf"))


def test_rows_csv(tmp_path):
    write_rows_csv([{"a": 1, "b": 0.1}, {"a": 2, "b": 1 / 3}], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["a,b", "1,0.1", "2,0.3333333333333333"]
