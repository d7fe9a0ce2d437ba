"""Seeded synthetic test volumes: ellipsoid blobs over a smooth background."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument
from .geometry import random_rotation
from .grid import Volume3

EDGE_WIDTH = 0.6  # voxels, tanh half-width of blob boundaries


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 64
    n_blobs: int = 4
    intensity_range: tuple = (0.0, 1.0)
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.size < 16:
            raise InvalidArgument("phantom size must be >= 16")
        if self.n_blobs < 1:
            raise InvalidArgument("n_blobs must be >= 1")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be >= 0")
        lo, hi = self.intensity_range
        if not lo < hi:
            raise InvalidArgument("intensity_range must be increasing")
        object.__setattr__(self, "intensity_range", (float(lo), float(hi)))

    def to_dict(self):
        return asdict(self)


def _coords(size):
    ax = np.arange(size, dtype=np.float64)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)


def ellipsoid_occupancy(coords, center, semi_axes, rotation=None) -> np.ndarray:
    """Soft indicator in [0, 1] of an ellipsoid, with a ~1 voxel anti-aliased rim."""
    d = coords - np.asarray(center, dtype=np.float64)
    if rotation is not None:
        d = d @ np.asarray(rotation)  # world -> blob frame
    axes = np.asarray(semi_axes, dtype=np.float64)
    q = d / axes
    rho = np.sqrt(np.sum(q * q, axis=-1))
    grad = np.sqrt(np.sum((q / axes) ** 2, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        sdist = np.where(rho > 0, (rho - 1.0) * rho / np.maximum(grad, 1e-12), -axes.min())
    return 0.5 * (1.0 - np.tanh(sdist / EDGE_WIDTH))


def _background(coords, size, rng) -> np.ndarray:
    bg = np.zeros(coords.shape[:-1])
    # several mid-frequency waves so that distant regions do not look alike
    for _ in range(6):
        k = rng.normal(size=3)
        k *= rng.uniform(2.0, 4.0) * 2.0 * np.pi / size / np.linalg.norm(k)
        bg += np.cos(coords @ k + rng.uniform(0, 2 * np.pi))
    bg -= bg.min()
    top = bg.max()
    return 0.2 * bg / top if top > 0 else bg


def generate_phantom(cfg: PhantomConfig = PhantomConfig()) -> Volume3:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.size
    coords = _coords(n)
    vol = _background(coords, n, rng)
    for _ in range(cfg.n_blobs):
        axes = rng.uniform(n / 10.0, n / 4.0, size=3)
        center = rng.uniform(0.3 * n, 0.7 * n, size=3)
        rot = random_rotation(rng)
        level = rng.uniform(0.5, 1.0)
        occ = ellipsoid_occupancy(coords, center, axes, rot)
        vol = vol * (1.0 - occ) + level * occ
    if cfg.noise_sigma > 0:
        vol = vol + rng.normal(0.0, cfg.noise_sigma, size=vol.shape)
    lo, hi = cfg.intensity_range
    vol = lo + (hi - lo) * np.clip(vol, 0.0, 1.0)
    return Volume3(vol)


def ball(size: int = 64, radius: float = 15.0, center=None, level: float = 1.0) -> Volume3:
    """Single noise-free ball on a zero background, for analytic checks."""
    if center is None:
        center = ((size - 1) / 2.0,) * 3
    occ = ellipsoid_occupancy(_coords(size), center, (radius,) * 3)
    return Volume3(level * occ)
