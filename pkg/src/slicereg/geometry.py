"""Sphere sampling, plane frames, slice poses and angular error."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise InvalidArgument(f"cannot normalise {v}")
    return v / n


@dataclass(frozen=True)
class SlicePose:
    """Rigid pose of a sampling plane: centre plus right-handed frame (u, v, normal)."""

    center: np.ndarray
    normal: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("center", "normal", "u", "v"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        frame = np.stack([self.u, self.v, self.normal])
        if not np.allclose(frame @ frame.T, np.eye(3), atol=1e-6):
            raise InvalidArgument("pose frame is not orthonormal")
        if not np.allclose(np.cross(self.u, self.v), self.normal, atol=1e-6):
            raise InvalidArgument("pose frame is not right-handed")

    @classmethod
    def from_normal(cls, center, normal, inplane_angle: float = 0.0) -> "SlicePose":
        """Pose with the default frame of ``normal`` turned by ``inplane_angle`` radians."""
        n = unit(normal)
        u, v = plane_frame(n)
        c, s = math.cos(inplane_angle), math.sin(inplane_angle)
        return cls(center, n, c * u + s * v, -s * u + c * v)

    def to_dict(self):
        return {k: [float(x) for x in getattr(self, k)] for k in ("center", "normal", "u", "v")}


@dataclass(frozen=True)
class PlaneP:
    """Plane ``{x : n . x = t}``."""

    n: np.ndarray
    t: float

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise InvalidArgument("plane normal must be unit length")
        if not math.isfinite(self.t):
            raise InvalidArgument("plane offset must be finite")
        n.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "t", float(self.t))

    def distance(self, points) -> np.ndarray:
        return np.abs(np.asarray(points, dtype=np.float64) @ self.n - self.t)


def fibonacci_directions(R: int) -> np.ndarray:
    """``R`` unit vectors on a Fibonacci lattice covering the whole sphere.

    Returns an ``(R, 3)`` array; ``R == 1`` gives the +z axis.
    """
    if int(R) != R or R < 1:
        raise InvalidArgument(f"R must be a positive integer, got {R}")
    R = int(R)
    if R == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(R, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / R
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * GOLDEN_ANGLE
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def plane_frame(n, switch: float = 0.9):
    """Deterministic in-plane axes ``(u, v)`` with ``u x v = n``.

    ``u = normalize(n x a)`` with ``a = +z``; for normals within
    ``acos(switch)`` of the z axis ``a = -y`` instead, which makes the axial
    frame of ``n = +z`` the identity (u = +x, v = +y).
    """
    n = np.asarray(n, dtype=np.float64)
    if abs(n[2]) > switch:
        a = np.array([0.0, -1.0, 0.0])
    else:
        a = np.array([0.0, 0.0, 1.0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def angle_error_deg(n1, n2) -> float:
    """Angle between two planes' normals in degrees, folded to [0, 90]."""
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    # atan2 keeps precision near 0 and 180 degrees, where acos does not
    theta = math.degrees(math.atan2(float(np.linalg.norm(np.cross(n1, n2))), float(np.dot(n1, n2))))
    return min(theta, 180.0 - theta)


def pairwise_angle_deg(dirs_a: np.ndarray, dirs_b: np.ndarray) -> np.ndarray:
    """Folded angle matrix between two sets of unit directions."""
    c = np.clip(np.abs(dirs_a @ dirs_b.T), 0.0, 1.0)
    return np.degrees(np.arccos(c))


def pose_to_plane(pose: SlicePose) -> PlaneP:
    return PlaneP(pose.normal, float(np.dot(pose.normal, pose.center)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix from a random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def write_directions_csv(dirs: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["dx", "dy", "dz"])
        for d in dirs:
            w.writerow([repr(float(c)) for c in d])
