"""RANSAC plane estimation with a total-least-squares refit."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, InvalidArgument, TooFewPoints
from .geometry import PlaneP

log = logging.getLogger(__name__)

_MIN_AREA = 1e-9


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 1.0
    max_iterations: int = 1000
    min_points: int = 40
    seed: int = 0

    def __post_init__(self):
        if not self.threshold > 0:
            raise InvalidArgument("threshold must be > 0")
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if self.min_points < 3:
            raise InvalidArgument("min_points must be >= 3")


@dataclass
class PlaneEstimate:
    plane: PlaneP | None
    inlier_indices: list = field(default_factory=list)
    support: int = 0
    converged: bool = False
    hypothesis_support: int = 0
    hypothesis: PlaneP | None = None

    def to_dict(self) -> dict:
        return {
            "n": None if self.plane is None else [float(x) for x in self.plane.n],
            "t": None if self.plane is None else float(self.plane.t),
            "support": int(self.support),
            "converged": bool(self.converged),
        }


def _canonical_sign(n: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(n != 0)
    if len(nz) and n[nz[0]] < 0:
        return -n
    return n


def refit_plane_tls(points) -> PlaneP:
    """Plane through the centroid, normal along the least scatter direction.

    The normal's first nonzero component is made positive.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateGeometry(f"need at least 3 points, got {len(pts)}")
    c = pts.mean(axis=0)
    d = pts - c
    evals, evecs = np.linalg.eigh(d.T @ d)
    scale = max(float(evals[-1]), 1e-300)
    # second eigenvalue ~ 0: points are collinear or coincident
    if evals[1] <= 1e-12 * scale or evals[-1] <= 1e-18:
        raise DegenerateGeometry("points are collinear or coincident")
    n = _canonical_sign(evecs[:, 0] / np.linalg.norm(evecs[:, 0]))
    return PlaneP(n, float(n @ c))


def draw_triples(n_points: int, iterations: int, seed: int) -> np.ndarray:
    """All sample triples up front, so the hypothesis sequence is fixed by the seed."""
    rng = np.random.default_rng(seed)
    keys = rng.random((iterations, n_points))
    return np.argpartition(keys, 2, axis=1)[:, :3] if n_points > 3 else np.tile(np.arange(3), (iterations, 1))


def ransac_plane(points, cfg: RansacConfig = RansacConfig()) -> PlaneEstimate:
    """Best-supported plane among ``cfg.max_iterations`` 3-point hypotheses, refit by TLS."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n_pts = len(pts)
    if n_pts < 3:
        raise TooFewPoints(f"RANSAC needs at least 3 points, got {n_pts}")

    triples = draw_triples(n_pts, cfg.max_iterations, cfg.seed)
    a, b, c = pts[triples[:, 0]], pts[triples[:, 1]], pts[triples[:, 2]]
    normals = np.cross(b - a, c - a)
    area2 = np.linalg.norm(normals, axis=1)
    valid = area2 > 2.0 * _MIN_AREA
    if not valid.any():
        raise DegenerateGeometry("every sampled triple was collinear")
    normals[valid] /= area2[valid, None]
    offsets = np.einsum("ij,ij->i", normals, a)

    best_it, best_support = -1, -1
    for start in range(0, cfg.max_iterations, 256):
        sl = slice(start, start + 256)
        dist = np.abs(pts @ normals[sl].T - offsets[sl])
        support = np.where(valid[sl], (dist <= cfg.threshold).sum(axis=0), -1)
        i = int(np.argmax(support))  # first maximum, i.e. earliest iteration
        if support[i] > best_support:
            best_it, best_support = start + i, int(support[i])

    hyp = PlaneP(_canonical_sign(normals[best_it]), 0.0)
    hyp = PlaneP(hyp.n, float(hyp.n @ a[best_it]))
    hyp_inliers = np.flatnonzero(hyp.distance(pts) <= cfg.threshold)

    try:
        plane = refit_plane_tls(pts[hyp_inliers])
    except DegenerateGeometry:
        plane = hyp
    inliers = np.flatnonzero(plane.distance(pts) <= cfg.threshold)
    if len(inliers) < len(hyp_inliers):
        log.debug("TLS refit reduced support from %d to %d", len(hyp_inliers), len(inliers))
    return PlaneEstimate(
        plane=plane,
        inlier_indices=[int(i) for i in inliers],
        support=int(len(inliers)),
        converged=bool(len(inliers) >= cfg.min_points),
        hypothesis_support=int(len(hyp_inliers)),
        hypothesis=hyp,
    )
