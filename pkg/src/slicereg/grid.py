"""Scalar grids, interpolation and MetaImage (.mhd/.raw) I/O.

Arrays are indexed ``data[x, y, z]`` (volumes) and ``data[x, y]`` (slices),
all coordinates in voxel units.  On disk the raw payload is little-endian with
x varying fastest, which is Fortran order for these arrays.
"""
from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import FormatError, InvalidArgument, InvalidCoordinate, IoError, SizeMismatch

DTYPE = np.float64

ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
}


@dataclass(frozen=True)
class Volume3:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=DTYPE)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidArgument(f"volume data must be 3D and non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgument("volume contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise InvalidArgument(f"spacing must be 3 positive values, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self):
        return self.data.shape

    def axial(self, z: int) -> "Slice2":
        return Slice2(self.data[:, :, z], self.spacing[:2])


@dataclass(frozen=True)
class Slice2:
    data: np.ndarray
    spacing: tuple = field(default=(1.0, 1.0))

    def __post_init__(self):
        data = np.asarray(self.data, dtype=DTYPE)
        if data.ndim != 2 or min(data.shape) < 1:
            raise InvalidArgument(f"slice data must be 2D and non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgument("slice contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 2 or min(spacing) <= 0:
            raise InvalidArgument(f"spacing must be 2 positive values, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self):
        return self.data.shape


def trilinear_sample(vol: Volume3, p) -> float:
    """Interpolate ``vol`` at voxel coordinate ``p`` from its 8 neighbours.

    Coordinates outside ``[0, dim-1]`` are clamped per axis.
    """
    p = [float(c) for c in p]
    if len(p) != 3 or not all(math.isfinite(c) for c in p):
        raise InvalidCoordinate(f"non-finite or malformed coordinate {p!r}")
    data = vol.data
    lo, frac = [], []
    for c, n in zip(p, data.shape):
        c = min(max(c, 0.0), n - 1.0)
        i = min(int(math.floor(c)), max(n - 2, 0))
        lo.append(i)
        frac.append(c - i)
    total = 0.0
    for dx in (0, 1):
        wx = frac[0] if dx else 1.0 - frac[0]
        for dy in (0, 1):
            wy = frac[1] if dy else 1.0 - frac[1]
            for dz in (0, 1):
                wz = frac[2] if dz else 1.0 - frac[2]
                w = wx * wy * wz
                if w == 0.0:
                    continue
                idx = tuple(min(i + d, n - 1) for i, d, n in zip(lo, (dx, dy, dz), data.shape))
                total += w * data[idx]
    return float(total)


def sample_points(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Vectorised linear interpolation with clamp-to-edge.

    ``coords`` has shape ``(..., ndim)`` in voxel units; returns shape ``coords.shape[:-1]``.
    Works for 2D (bilinear) and 3D (trilinear) arrays alike.
    """
    coords = np.asarray(coords, dtype=DTYPE)
    flat = coords.reshape(-1, data.ndim).T
    out = map_coordinates(data, flat, order=1, mode="nearest", prefilter=False)
    return out.reshape(coords.shape[:-1])


def normalize_intensity(vol: Volume3) -> Volume3:
    lo, hi = float(vol.data.min()), float(vol.data.max())
    if hi == lo:
        data = np.zeros_like(vol.data)
    else:
        data = (vol.data - lo) / (hi - lo)
    return Volume3(data, vol.spacing, vol.origin)


# --------------------------------------------------------------------------
# MetaImage I/O
# --------------------------------------------------------------------------

def _read_header(path: Path) -> dict:
    try:
        text = path.read_text(encoding="ascii", errors="strict")
    except UnicodeDecodeError as e:
        raise FormatError("header", "not a text header") from e
    except OSError as e:
        raise IoError(str(e)) from e
    header = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(line.split()[0], "expected 'Key = Value'")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header


def _floats(header, key, n, default=None):
    if key not in header:
        if default is not None:
            return default
        raise FormatError(key, "missing")
    try:
        vals = [float(v) for v in header[key].split()]
    except ValueError as e:
        raise FormatError(key, f"unparsable value {header[key]!r}") from e
    if len(vals) != n:
        raise FormatError(key, f"expected {n} values, got {len(vals)}")
    return vals


def load_mhd(path) -> Volume3:
    """Read a 3D MetaImage header plus its raw payload."""
    path = Path(path)
    header = _read_header(path)
    if header.get("ObjectType", "Image") != "Image":
        raise FormatError("ObjectType", f"unsupported {header['ObjectType']!r}")
    if header.get("NDims") != "3":
        raise FormatError("NDims", f"only 3 dimensions supported, got {header.get('NDims')!r}")
    dims = _floats(header, "DimSize", 3)
    if any(d < 1 or d != int(d) for d in dims):
        raise FormatError("DimSize", f"invalid sizes {header['DimSize']!r}")
    dims = [int(d) for d in dims]
    spacing = _floats(header, "ElementSpacing", 3, default=[1.0, 1.0, 1.0])
    if min(spacing) <= 0:
        raise FormatError("ElementSpacing", "spacing must be positive")
    origin = _floats(header, "Offset", 3, default=[0.0, 0.0, 0.0])
    etype = header.get("ElementType")
    if etype not in ELEMENT_TYPES:
        raise FormatError("ElementType", f"unsupported {etype!r}")
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise FormatError("BinaryDataByteOrderMSB", "big-endian payloads unsupported")
    if header.get("CompressedData", "False").lower() == "true":
        raise FormatError("CompressedData", "compressed payloads unsupported")
    datafile = header.get("ElementDataFile")
    if not datafile:
        raise FormatError("ElementDataFile", "missing")
    if datafile == "LOCAL":
        raise FormatError("ElementDataFile", "inline payloads unsupported")

    dtype = ELEMENT_TYPES[etype]
    raw_path = path.parent / datafile
    try:
        raw = raw_path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {raw_path}: {e}") from e
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatch(expected, len(raw))
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    return Volume3(arr.astype(DTYPE), tuple(spacing), tuple(origin))


def save_mhd(vol: Volume3, path, element_type: str = "MET_FLOAT") -> None:
    """Write ``vol`` as ``<name>.mhd`` + ``<name>.raw`` next to each other.

    Integer element types round and saturate; MET_FLOAT stores float32.
    """
    if element_type not in ELEMENT_TYPES:
        raise InvalidArgument(f"unsupported element type {element_type!r}")
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    dtype = ELEMENT_TYPES[element_type]
    data = vol.data
    if dtype.kind in "iu":
        info = np.iinfo(dtype)
        data = np.clip(np.rint(data), info.min, info.max)
    payload = np.asarray(data, dtype=dtype).tobytes(order="F")
    fmt = lambda vals: " ".join(repr(float(v)) for v in vals)
    header = "\n".join([
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        f"Offset = {fmt(vol.origin)}",
        f"ElementSpacing = {fmt(vol.spacing)}",
        "DimSize = " + " ".join(str(int(n)) for n in vol.shape),
        f"ElementType = {element_type}",
        f"ElementDataFile = {raw_path.name}",
    ]) + "\n"
    try:
        raw_path.write_bytes(payload)
        path.write_text(header, encoding="ascii")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def slice_from_volume(vol: Volume3) -> Slice2:
    """A slice on disk is a volume with a single z plane."""
    if vol.shape[2] != 1:
        raise FormatError("DimSize", f"slice files need DimSize z=1, got {vol.shape[2]}")
    return Slice2(vol.data[:, :, 0], vol.spacing[:2])


def slice_to_volume(img: Slice2) -> Volume3:
    return Volume3(img.data[:, :, None], (*img.spacing, 1.0))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(os.fspath(path), "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
