"""Gaussian smoothing and Canny edge detection for candidate points."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument
from .grid import Slice2, Volume3

# Input intensities are snapped to this grid after min/max normalisation so
# that a*img + b and img run through identical arithmetic.
_QUANT = float(2 ** 20)


@dataclass(frozen=True)
class CannyParams:
    sigma: float = 1.5
    low_ratio: float = 0.1
    high_ratio: float = 0.25
    max_candidates: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgument(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.low_ratio < self.high_ratio < 1:
            raise InvalidArgument(
                f"need 0 < low_ratio < high_ratio < 1, got {self.low_ratio}, {self.high_ratio}"
            )
        if self.max_candidates < 1:
            raise InvalidArgument("max_candidates must be positive")


SLICE_DEFAULTS = CannyParams(max_candidates=500)
VOLUME_DEFAULTS = CannyParams(max_candidates=2000)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(int(math.ceil(3.0 * sigma)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _blur(data: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.convolve1d(data, k, axis=0, mode="reflect")
    return ndimage.convolve1d(out, k, axis=1, mode="reflect")


def gaussian_blur(img: Slice2, sigma: float) -> Slice2:
    """Separable Gaussian, radius ceil(3*sigma), reflecting borders."""
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be > 0, got {sigma}")
    return Slice2(_blur(img.data, sigma), img.spacing)


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep ridge pixels of ``mag`` along the quantised gradient direction.

    The gradient angle is binned into 8 directions (4 axes, both signs).  A
    pixel survives when it is strictly above its backward neighbour and not
    below its forward one, so two-pixel plateaus yield a single-pixel edge.
    """
    nx, ny = mag.shape
    keep = np.zeros_like(mag, dtype=bool)
    if nx < 3 or ny < 3:
        return keep
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    inner = mag[1:-1, 1:-1]
    # (dx, dy) neighbour offsets for sectors 0, 45, 90, 135 degrees
    offsets = [(1, 0), (1, 1), (0, 1), (-1, 1)]
    for s, (dx, dy) in enumerate(offsets):
        fwd = mag[1 + dx:nx - 1 + dx, 1 + dy:ny - 1 + dy]
        bwd = mag[1 - dx:nx - 1 - dx, 1 - dy:ny - 1 - dy]
        sel = (sector[1:-1, 1:-1] == s) & (inner > bwd) & (inner >= fwd)
        keep[1:-1, 1:-1] |= sel
    keep &= mag > 0
    return keep


def _gradient(data: np.ndarray, lo: float, hi: float, sigma: float):
    norm = np.rint((data - lo) / (hi - lo) * _QUANT) / _QUANT
    smooth = _blur(norm, sigma)
    gx = ndimage.sobel(smooth, axis=0, mode="reflect")
    gy = ndimage.sobel(smooth, axis=1, mode="reflect")
    mag = np.hypot(gx, gy)
    mag[0, :] = mag[-1, :] = 0.0
    mag[:, 0] = mag[:, -1] = 0.0
    return mag, gx, gy


def _hysteresis(mag, gx, gy, top: float, params: CannyParams) -> np.ndarray:
    if top <= 0:
        return np.zeros(mag.shape, dtype=bool)
    thin = _non_max_suppression(mag, gx, gy)
    weak = thin & (mag >= params.low_ratio * top)
    strong = thin & (mag >= params.high_ratio * top)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return weak
    seeded = np.zeros(n + 1, dtype=bool)
    seeded[np.unique(labels[strong])] = True
    seeded[0] = False
    return seeded[labels]


def canny_mask(data: np.ndarray, params: CannyParams) -> np.ndarray:
    """Boolean edge map of a 2D array; border pixels are never edges."""
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        return np.zeros(data.shape, dtype=bool)
    mag, gx, gy = _gradient(data, lo, hi, params.sigma)
    return _hysteresis(mag, gx, gy, float(mag.max()), params)


def _subsample(points: np.ndarray, cap: int, seed: int) -> np.ndarray:
    if len(points) <= cap:
        return points
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(points), size=cap, replace=False))
    return points[idx]


def canny_2d(img: Slice2, params: CannyParams = SLICE_DEFAULTS) -> np.ndarray:
    """Edge pixels of ``img`` as an ``(n, 2)`` integer array of (x, y).

    Points come in raster order (y major, x minor).  When more than
    ``params.max_candidates`` survive, a seeded uniform subsample is kept,
    still in raster order.
    """
    mask = canny_mask(img.data, params)
    xs, ys = np.nonzero(mask)
    order = np.lexsort((xs, ys))
    pts = np.stack([xs[order], ys[order]], axis=1).astype(np.int64)
    return _subsample(pts, params.max_candidates, params.seed)


def volume_candidates(vol: Volume3, params: CannyParams = VOLUME_DEFAULTS, threads: int = 1) -> np.ndarray:
    """Accumulate per-axial-slice Canny points into an ``(n, 3)`` array of (x, y, z).

    Each slice runs the 2D detector, but intensity normalisation and the
    hysteresis thresholds refer to the whole volume.  Slices that miss every
    structure would otherwise promote faint background ripples to edges.
    The first and last z planes are skipped so every candidate is interior.
    """
    nz = vol.shape[2]
    zs = list(range(1, nz - 1))
    lo, hi = float(vol.data.min()), float(vol.data.max())
    if not zs or hi == lo:
        return np.zeros((0, 3), dtype=np.int64)

    def grad(z):
        return _gradient(vol.data[:, :, z], lo, hi, params.sigma)

    def edges(z, g, top):
        xs, ys = np.nonzero(_hysteresis(*g, top, params))
        return np.stack([xs, ys, np.full_like(xs, z)], axis=1)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grads = list(pool.map(grad, zs))
            top = max(float(g[0].max()) for g in grads)
            parts = list(pool.map(lambda a: edges(a[0], a[1], top), zip(zs, grads)))
    else:
        grads = [grad(z) for z in zs]
        top = max(float(g[0].max()) for g in grads)
        parts = [edges(z, g, top) for z, g in zip(zs, grads)]
    pts = np.concatenate(parts, axis=0).astype(np.int64)
    order = np.lexsort((pts[:, 0], pts[:, 1], pts[:, 2]))
    return _subsample(pts[order], params.max_candidates, params.seed)


def write_candidates_csv(points: np.ndarray, path) -> None:
    points = np.asarray(points)
    cols = ["x", "y", "z"][: points.shape[1] if points.ndim == 2 and points.size else 3]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for p in points:
            w.writerow([int(v) for v in p])


def read_candidates_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    width = len(rows[0])
    return np.array([[int(v) for v in r] for r in rows[1:]], dtype=np.int64).reshape(-1, width)
