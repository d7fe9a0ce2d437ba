import numpy as np
import pytest

from slicereg.errors import InvalidArgument
from slicereg.geometry import SlicePose, fibonacci_directions, plane_frame
from slicereg.grid import Slice2, Volume3
from slicereg.phantom import ball
from slicereg.sampler import (extract_oriented_patch, extract_oriented_patches, extract_patch_2d,
                              extract_slice, slice_grid)


def test_constant_patch():
    p = extract_patch_2d(Slice2(np.full((30, 30), 4.0)), (15, 15))
    assert p.shape == (21, 21) and np.all(p == 4.0)


def test_single_pixel_patch():
    img = np.arange(20.0).reshape(4, 5)
    assert extract_patch_2d(Slice2(img), (2, 3), s=1)[0, 0] == img[2, 3]


def test_corner_patch_clamps():
    x = np.arange(30.0)
    img = Slice2(np.broadcast_to(x[:, None], (30, 30)).copy())
    p = extract_patch_2d(img, (0, 0), 21)
    # patch[a, b] = img[a - 10, b - 10], clamped to the image
    expected = np.clip(np.arange(21) - 10, 0, None).astype(float)
    np.testing.assert_array_equal(p, np.broadcast_to(expected[:, None], (21, 21)))


def test_even_patch_size_rejected():
    with pytest.raises(InvalidArgument):
        extract_patch_2d(Slice2(np.zeros((5, 5))), (2, 2), 4)


def test_axial_patch_is_stored_window(phantom, rng):
    for _ in range(50):
        c = rng.integers(0, 64, size=3)
        p = extract_oriented_patch(phantom, c, (0, 0, 1))
        q = extract_patch_2d(phantom.axial(int(c[2])), c[:2])
        assert p.tobytes() == q.tobytes()


def test_constant_volume_any_direction(rng):
    vol = Volume3(np.full((20, 20, 20), 0.25))
    for d in fibonacci_directions(10):
        np.testing.assert_allclose(extract_oriented_patch(vol, (10, 10, 10), d), 0.25, rtol=1e-14)


def test_ramp_patches():
    z = np.arange(30.0)
    vol = Volume3(np.broadcast_to(z[None, None, :], (30, 30, 30)).copy())
    c = np.array([15, 15, 12])
    assert np.all(extract_oriented_patch(vol, c, (0, 0, 1)) == 12.0)
    p = extract_oriented_patch(vol, c, (1, 0, 0))
    # frame for n = x: u = (0,-1,0), v = (0,0,-1), so z falls by one per column
    expected = 12.0 - (np.arange(21) - 10)
    np.testing.assert_allclose(p, np.broadcast_to(expected[None, :], (21, 21)), atol=1e-12)


def test_patch_bounded(phantom, rng):
    lo, hi = phantom.data.min(), phantom.data.max()
    for _ in range(20):
        d = rng.normal(size=3)
        p = extract_oriented_patch(phantom, rng.uniform(0, 63, 3), d / np.linalg.norm(d))
        assert lo <= p.min() and p.max() <= hi


def test_batch_matches_single(small_phantom):
    cands = np.array([[5, 6, 7], [16, 16, 16], [30, 1, 2]])
    dirs = fibonacci_directions(7)
    batch = extract_oriented_patches(small_phantom, cands, dirs, 9)
    assert batch.shape == (3, 7, 9, 9)
    for j, c in enumerate(cands):
        for r, d in enumerate(dirs):
            assert batch[j, r].tobytes() == extract_oriented_patch(small_phantom, c, d, 9).tobytes()
    threaded = extract_oriented_patches(small_phantom, cands, dirs, 9, threads=3)
    assert threaded.tobytes() == batch.tobytes()


def test_axial_slice_is_stored_slice(phantom):
    pose = SlicePose([31.5, 31.5, 20.0], [0, 0, 1], [1, 0, 0], [0, 1, 0])
    img = extract_slice(phantom, pose, 64, 64)
    assert img.data.tobytes() == phantom.axial(20).data.tobytes()


def test_constant_slice():
    vol = Volume3(np.full((10, 10, 10), 2.0))
    pose = SlicePose.from_normal([5, 5, 5], [1, 2, 3], 0.3)
    np.testing.assert_allclose(extract_slice(vol, pose, 12, 9).data, 2.0, rtol=1e-14)


def test_sphere_cross_section_radius():
    vol = ball(64, 15.0)
    pose = SlicePose.from_normal([31.5] * 3, [0.3, -0.5, 0.8], 1.1)
    img = extract_slice(vol, pose, 64, 64).data
    area = float(np.sum(img >= 0.5))
    radius = np.sqrt(area / np.pi)
    assert abs(radius - 15.0) <= 1.0


def test_patch_agrees_with_slice_window(phantom, rng):
    for _ in range(10):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        c = rng.integers(15, 48, size=3).astype(float)
        u, v = plane_frame(d)
        pose = SlicePose(c, d, u, v)
        img = extract_slice(phantom, pose, 21, 21)
        assert img.data.tobytes() == extract_oriented_patch(phantom, c, d).tobytes()


def test_slice_grid_rejects_empty():
    with pytest.raises(InvalidArgument):
        slice_grid(SlicePose.from_normal([0, 0, 0], [0, 0, 1]), 0, 5)
