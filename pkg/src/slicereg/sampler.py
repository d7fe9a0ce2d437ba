"""Patch extraction from slices and oriented plane sampling from volumes."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import InvalidArgument
from .geometry import SlicePose, plane_frame
from .grid import Slice2, Volume3, sample_points


def _check_size(s: int) -> int:
    if int(s) != s or s < 1 or s % 2 == 0:
        raise InvalidArgument(f"patch size must be a positive odd integer, got {s}")
    return int(s)


def _offsets(s: int) -> np.ndarray:
    h = (s - 1) // 2
    return np.arange(s, dtype=np.float64) - h


def extract_patch_2d(img: Slice2, c, s: int = 21) -> np.ndarray:
    """``s x s`` window of ``img`` centred at ``c`` with ``patch[a, b] = img[cx + a - h, cy + b - h]``."""
    return extract_patches_2d(img, np.asarray(c, dtype=np.float64).reshape(1, 2), s)[0]


def extract_patches_2d(img: Slice2, centers: np.ndarray, s: int = 21) -> np.ndarray:
    s = _check_size(s)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    off = _offsets(s)
    ga, gb = np.meshgrid(off, off, indexing="ij")
    grid = np.stack([ga, gb], axis=-1)
    coords = centers[:, None, None, :] + grid[None]
    return sample_points(img.data, coords)


def patch_grid(d, s: int, switch: float = 0.9) -> np.ndarray:
    """Offsets ``(s, s, 3)`` of an oriented patch with normal ``d``, relative to its centre."""
    u, v = plane_frame(np.asarray(d, dtype=np.float64), switch)
    off = _offsets(s)
    return off[:, None, None] * u + off[None, :, None] * v


def extract_oriented_patch(vol: Volume3, c, d, s: int = 21, switch: float = 0.9) -> np.ndarray:
    """Central plane of the cube around ``c`` whose normal is ``d``, sampled directly."""
    s = _check_size(s)
    grid = patch_grid(d, s, switch)
    return sample_points(vol.data, np.asarray(c, dtype=np.float64) + grid)


def extract_oriented_patches(vol: Volume3, centers: np.ndarray, dirs: np.ndarray, s: int = 21,
                             threads: int = 1, switch: float = 0.9) -> np.ndarray:
    """Patches for every (candidate, direction) pair, shape ``(J, R, s, s)``."""
    s = _check_size(s)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    out = np.empty((len(centers), len(dirs), s, s), dtype=np.float64)

    def one(r):
        grid = patch_grid(dirs[r], s, switch)
        out[:, r] = sample_points(vol.data, centers[:, None, None, :] + grid[None])

    iter_dirs(one, len(dirs), threads)
    return out


def iter_dirs(fn, n: int, threads: int) -> None:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fn, range(n)))
    else:
        for r in range(n):
            fn(r)


def slice_grid(pose: SlicePose, out_w: int, out_h: int) -> np.ndarray:
    """Voxel coordinates ``(out_w, out_h, 3)`` of every pixel of a pose's slice."""
    if out_w < 1 or out_h < 1:
        raise InvalidArgument("output slice dimensions must be >= 1")
    a = np.arange(out_w, dtype=np.float64) - (out_w - 1) / 2.0
    b = np.arange(out_h, dtype=np.float64) - (out_h - 1) / 2.0
    return pose.center + (a[:, None, None] * pose.u + b[None, :, None] * pose.v)


def extract_slice(vol: Volume3, pose: SlicePose, out_w: int, out_h: int) -> Slice2:
    return Slice2(sample_points(vol.data, slice_grid(pose, out_w, out_h)))
