"""In-plane rotation invariant patch descriptor and feature file exchange.

Each patch is resampled on a log-polar grid around its centre.  Rotating the
patch about its centre shifts every ring cyclically along the angle axis, so
the magnitudes of the angular DFT of each ring do not change.  The same holds
for reflections, which keeps antipodal plane normals interchangeable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import FormatError, InvalidArgument


@dataclass(frozen=True)
class DescriptorConfig:
    radial_rings: int = 8
    angular_bins: int = 32
    kept_harmonics: int = 16
    use_gradient_channel: bool = True
    normalize: bool = True

    def __post_init__(self):
        if self.radial_rings < 1:
            raise InvalidArgument("radial_rings must be >= 1")
        if self.angular_bins % 16 != 0:
            raise InvalidArgument("angular_bins must be a multiple of 16")
        if self.kept_harmonics < 1 or self.angular_bins < 2 * self.kept_harmonics:
            raise InvalidArgument("need 1 <= kept_harmonics <= angular_bins / 2")

    @property
    def channels(self) -> int:
        return 2 if self.use_gradient_channel else 1

    @property
    def K(self) -> int:
        return self.radial_rings * self.kept_harmonics * self.channels + 2


def ring_radii(s: int, rings: int) -> np.ndarray:
    """Log-spaced radii from 3 px; the outermost keeps its bilinear support inside the disc mask.

    Rings closer to the centre than 3 px see only a handful of pixels and mostly add noise.
    """
    h = (s - 1) / 2.0
    r_max = max(h - 1.5, 0.5 * h)
    if rings == 1:
        return np.array([r_max])
    return np.geomspace(min(3.0, r_max), r_max, rings)


@lru_cache(maxsize=16)
def _polar_stencil(s: int, rings: int, bins: int):
    """Flat indices and bilinear weights of the polar grid, each ``(4, rings * bins)``."""
    h = (s - 1) / 2.0
    radii = ring_radii(s, rings)
    theta = 2.0 * np.pi * np.arange(bins) / bins
    x = h + radii[:, None] * np.cos(theta)[None, :]
    y = h + radii[:, None] * np.sin(theta)[None, :]
    x, y = np.clip(x.ravel(), 0, s - 1), np.clip(y.ravel(), 0, s - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), s - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), s - 2)
    fx, fy = x - x0, y - y0
    idx = np.stack([x0 * s + y0, (x0 + 1) * s + y0, x0 * s + y0 + 1, (x0 + 1) * s + y0 + 1])
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    return idx, w


@lru_cache(maxsize=16)
def disc_mask(s: int) -> np.ndarray:
    h = (s - 1) / 2.0
    a = np.arange(s) - h
    return (a[:, None] ** 2 + a[None, :] ** 2) <= h * h


def _gradient_magnitude(patches: np.ndarray) -> np.ndarray:
    gx, gy = np.gradient(patches, axis=(1, 2))
    return np.hypot(gx, gy)


def _ring_spectra(flat: np.ndarray, idx, w, rings, bins, kept) -> np.ndarray:
    samples = np.zeros((flat.shape[0], idx.shape[1]))
    for k in range(4):
        samples += w[k] * flat[:, idx[k]]
    spec = np.abs(np.fft.rfft(samples.reshape(-1, rings, bins), axis=2))[:, :, :kept] / bins
    return spec.reshape(flat.shape[0], -1)


def describe_raw(patches: np.ndarray, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    """Unnormalised descriptors of a ``(N, s, s)`` stack.

    Layout per row: intensity ring spectra (ring-major), gradient-magnitude
    ring spectra when enabled, then the mean and standard deviation of the
    disc-masked patch.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 2:
        patches = patches[None]
    n, s, s2 = patches.shape
    if s != s2 or s % 2 == 0:
        raise InvalidArgument(f"patches must be square with odd side, got {patches.shape[1:]}")
    if s < 2 * cfg.radial_rings + 1:
        raise InvalidArgument(f"patch side {s} too small for {cfg.radial_rings} rings")
    if n == 0:
        return np.zeros((0, cfg.K))
    idx, w = _polar_stencil(s, cfg.radial_rings, cfg.angular_bins)
    args = (idx, w, cfg.radial_rings, cfg.angular_bins, cfg.kept_harmonics)
    parts = [_ring_spectra(patches.reshape(n, -1), *args)]
    if cfg.use_gradient_channel:
        parts.append(_ring_spectra(_gradient_magnitude(patches).reshape(n, -1), *args))
    inside = patches[:, disc_mask(s)]
    parts.append(inside.mean(axis=1, keepdims=True))
    parts.append(inside.std(axis=1, keepdims=True))
    return np.concatenate(parts, axis=1)


def zero_harmonic_slots(cfg: DescriptorConfig) -> np.ndarray:
    """Indices of the 0th harmonic of every intensity ring."""
    return np.arange(cfg.radial_rings) * cfg.kept_harmonics


def normalize_rows(raw: np.ndarray, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    raw = np.array(raw, dtype=np.float64)
    norms = np.linalg.norm(raw, axis=1)
    dead = norms == 0
    if dead.any():
        # zero patches: same direction as any positive constant patch
        raw[np.ix_(dead, zero_harmonic_slots(cfg))] = 1.0
        raw[dead, -2] = 1.0
        norms[dead] = np.linalg.norm(raw[dead], axis=1)
    return raw / norms[:, None]


def describe_batch(patches: np.ndarray, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    raw = describe_raw(patches, cfg)
    return normalize_rows(raw, cfg) if cfg.normalize else raw


def describe(p: np.ndarray, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    return describe_batch(np.asarray(p)[None], cfg)[0]


def describe_all(patches, cfg: DescriptorConfig = DescriptorConfig(), chunk: int = 4096) -> list:
    """Describe a list of equally sized patches, preserving order."""
    patches = list(patches)
    if not patches:
        return []
    sizes = {np.shape(p) for p in patches}
    if len(sizes) != 1:
        raise InvalidArgument(f"patches differ in size: {sorted(sizes)}")
    out = []
    for i in range(0, len(patches), chunk):
        out.extend(describe_batch(np.stack(patches[i:i + chunk]), cfg))
    return out


# --------------------------------------------------------------------------
# JSON-lines feature exchange
# --------------------------------------------------------------------------

def load_external_features(path, normalize: bool = True) -> dict:
    """Read ``{"cand": int, "dir": int|null, "f": [...]}`` records.

    Returns ``{(cand, dir): vector}`` with ``dir`` ``None`` for query features.
    """
    table = {}
    K = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                cand, d, vec = rec["cand"], rec["dir"], rec["f"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise FormatError(f"line {lineno}", f"malformed record ({e})") from e
            if not isinstance(cand, int) or isinstance(cand, bool) or cand < 0:
                raise FormatError(f"line {lineno}", "cand must be a non-negative integer")
            if d is not None and (not isinstance(d, int) or isinstance(d, bool) or d < 0):
                raise FormatError(f"line {lineno}", "dir must be a non-negative integer or null")
            try:
                vec = np.asarray(vec, dtype=np.float64)
            except (TypeError, ValueError) as e:
                raise FormatError(f"line {lineno}", "f must be a list of numbers") from e
            if vec.ndim != 1 or vec.size == 0:
                raise FormatError(f"line {lineno}", "f must be a non-empty flat list")
            if K is None:
                K = vec.size
            elif vec.size != K:
                raise FormatError(f"line {lineno}", f"ragged feature size: expected K={K}, got {vec.size}")
            if not np.all(np.isfinite(vec)):
                raise FormatError(f"line {lineno}", "non-finite feature entries")
            if (cand, d) in table:
                raise FormatError(f"line {lineno}", f"duplicate key cand={cand} dir={d}")
            if normalize:
                norm = math.sqrt(float(vec @ vec))
                if norm == 0:
                    raise FormatError(f"line {lineno}", "zero feature vector cannot be normalised")
                vec = vec / norm
            table[(cand, d)] = vec
    return table


def write_features_jsonl(path, query_feats=None, volume_feats=None) -> None:
    """Write query features ``(I, K)`` and/or volume features ``(J, R, K)``."""
    with open(path, "w") as f:
        if query_feats is not None:
            for i, vec in enumerate(np.asarray(query_feats)):
                f.write(json.dumps({"cand": i, "dir": None, "f": [float(x) for x in vec]}) + "\n")
        if volume_feats is not None:
            for j, per_dir in enumerate(np.asarray(volume_feats)):
                for r, vec in enumerate(per_dir):
                    f.write(json.dumps({"cand": j, "dir": r, "f": [float(x) for x in vec]}) + "\n")


def split_feature_table(table: dict):
    """Query rows ``(I, K)`` and volume entries ``(keys (N, 2), feats (N, K))``.

    Query candidate indices must be contiguous from 0.
    """
    q_keys = sorted(k[0] for k in table if k[1] is None)
    if q_keys != list(range(len(q_keys))):
        raise FormatError("cand", "query feature indices must be 0..I-1 without gaps")
    s_keys = sorted(k for k in table if k[1] is not None)
    K = len(next(iter(table.values()))) if table else 0
    q = np.array([table[(i, None)] for i in q_keys]).reshape(-1, K)
    s = np.array([table[k] for k in s_keys]).reshape(-1, K)
    return q, np.array(s_keys, dtype=np.int64).reshape(-1, 2), s
