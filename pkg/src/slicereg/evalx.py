"""Evaluation: ground-truth positions, MMA, feature-distance sweeps and the registration experiment."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptor import DescriptorConfig, describe_batch
from .errors import InvalidArgument, TooFewPoints
from .estimator import PlaneEstimate
from .geometry import SlicePose, angle_error_deg, fibonacci_directions, pairwise_angle_deg, random_rotation
from .grid import Volume3
from .matching import MatchSet
from .pipeline import PipelineConfig, VolumeIndex, register_slice
from .sampler import extract_oriented_patch, extract_oriented_patches, extract_slice

MMA_THRESHOLDS = (3.0, 5.0, 10.0)
DEFAULT_BINS = tuple(range(10, 91, 10))


def true_3d_positions(q_pos, gt_pose: SlicePose, width: int, height: int) -> np.ndarray:
    """Volume coordinates of query pixels, for a slice sampled with :func:`extract_slice`."""
    q = np.asarray(q_pos, dtype=np.float64).reshape(-1, 2)
    a = q[:, 0] - (width - 1) / 2.0
    b = q[:, 1] - (height - 1) / 2.0
    return gt_pose.center + (a[:, None] * gt_pose.u + b[:, None] * gt_pose.v)


def true_3d_position(c_q, gt_pose: SlicePose, width: int, height: int) -> np.ndarray:
    return true_3d_positions(c_q, gt_pose, width, height)[0]


@dataclass
class MmaReport:
    thresholds: tuple
    before: tuple
    after: tuple
    n_matches: int
    n_inliers: int

    def to_dict(self) -> dict:
        return {
            "thresholds": [float(t) for t in self.thresholds],
            "before": [float(x) for x in self.before],
            "after": [float(x) for x in self.after],
            "n_matches": self.n_matches,
            "n_inliers": self.n_inliers,
        }


def mma(ms: MatchSet, gt_pose: SlicePose, est: PlaneEstimate, slice_shape,
        thresholds=MMA_THRESHOLDS) -> MmaReport:
    """Fraction of matches whose volume point lies within each radius of the true position.

    ``before`` counts every match, ``after`` only the RANSAC inliers.
    """
    if ms is None or len(ms) == 0:
        raise InvalidArgument("MMA needs at least one match")
    true = true_3d_positions(ms.q_pos, gt_pose, *slice_shape)
    err = np.linalg.norm(ms.s_pos.astype(np.float64) - true, axis=1)
    inl = np.asarray(est.inlier_indices, dtype=np.int64) if est is not None else np.zeros(0, np.int64)
    before = tuple(float(np.mean(err <= t)) for t in thresholds)
    if len(inl):
        after = tuple(float(np.mean(err[inl] <= t)) for t in thresholds)
    else:
        after = tuple(0.0 for _ in thresholds)
    return MmaReport(tuple(thresholds), before, after, int(len(ms)), int(len(inl)))


@dataclass(frozen=True)
class DistancePair:
    angle_diff: float
    beta: float
    gamma: float


def _features_for(vol, pairs, dirs, patch_size, desc_cfg, threads):
    """Descriptors for a set of (candidate position, direction index) requests, grouped by direction."""
    out = {}
    by_dir = {}
    for pos, r in pairs:
        by_dir.setdefault(r, []).append(pos)
    for r in sorted(by_dir):
        pts = sorted(set(by_dir[r]))
        patches = extract_oriented_patches(vol, np.array(pts, dtype=np.float64), dirs[r:r + 1],
                                           patch_size, threads=threads)[:, 0]
        for p, f in zip(pts, describe_batch(patches, desc_cfg)):
            out[(p, r)] = f
    return out


def nearest_at_angle(angles_row: np.ndarray, target: float, exclude: int) -> int:
    """Index whose folded angle is closest to ``target``; lowest index on ties."""
    cost = np.abs(angles_row - target)
    cost[exclude] = np.inf
    return int(np.argmin(cost))


def intra_inter_analysis(vol: Volume3, cands, R: int = 400, bins=DEFAULT_BINS, seed: int = 0,
                         patch_size: int = 21, desc_cfg: DescriptorConfig = DescriptorConfig(),
                         threads: int = 1) -> list:
    """Same-point (beta) versus other-point (gamma) feature distances per angle bin.

    For every candidate and bin a random reference direction A is drawn and B
    is the direction whose folded angle to A is closest to the bin.  beta
    compares the candidate's features at A and B; gamma compares the
    candidate's A feature with a different random candidate's B feature.
    """
    cands = np.asarray(cands, dtype=np.int64).reshape(-1, 3)
    if len(cands) < 2:
        raise TooFewPoints(f"need at least 2 candidates, got {len(cands)}")
    rng = np.random.default_rng(seed)
    dirs = fibonacci_directions(R)
    ang = pairwise_angle_deg(dirs, dirs)
    plan = []
    for j in range(len(cands)):
        for b in bins:
            a = int(rng.integers(R))
            r_b = nearest_at_angle(ang[a], float(b), a)
            k = int(rng.integers(len(cands) - 1))
            k += k >= j
            plan.append((float(b), j, a, r_b, k))
    requests = set()
    for _, j, a, r_b, k in plan:
        requests.update({(tuple(cands[j]), a), (tuple(cands[j]), r_b), (tuple(cands[k]), r_b)})
    feats = _features_for(vol, requests, dirs, patch_size, desc_cfg, threads)
    out = []
    for b, j, a, r_b, k in plan:
        fa = feats[(tuple(cands[j]), a)]
        beta = float(np.linalg.norm(fa - feats[(tuple(cands[j]), r_b)]))
        gamma = float(np.linalg.norm(fa - feats[(tuple(cands[k]), r_b)]))
        out.append(DistancePair(b, beta, gamma))
    return out


def summarize_pairs(pairs) -> list:
    """Median beta and gamma per angle bin, ascending."""
    rows = []
    for b in sorted({p.angle_diff for p in pairs}):
        sel = [p for p in pairs if p.angle_diff == b]
        rows.append({
            "angle_diff": b,
            "n": len(sel),
            "median_beta": float(np.median([p.beta for p in sel])),
            "median_gamma": float(np.median([p.gamma for p in sel])),
        })
    return rows


def inplane_sweep(vol: Volume3, cand, other, n_angles: int = 360, patch_size: int = 21,
                  desc_cfg: DescriptorConfig = DescriptorConfig()) -> list:
    """Feature distance to the 0 degree feature of ``cand`` while the normal turns in the xz-plane.

    Returns ``(angle_deg, intra, inter)`` rows; ``inter`` uses ``other``'s
    feature at the same angle.
    """
    if n_angles < 1:
        raise InvalidArgument("n_angles must be >= 1")
    theta = np.arange(n_angles) * (2.0 * math.pi / n_angles)
    dirs = np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=1)
    pts = np.asarray([cand, other], dtype=np.float64).reshape(2, 3)
    patches = np.stack([[extract_oriented_patch(vol, p, d, patch_size) for d in dirs] for p in pts])
    f = describe_batch(patches.reshape(-1, patch_size, patch_size), desc_cfg).reshape(2, n_angles, -1)
    ref = f[0, 0]
    intra = np.linalg.norm(f[0] - ref, axis=1)
    inter = np.linalg.norm(f[1] - ref, axis=1)
    return [(float(np.degrees(t)), float(a), float(b)) for t, a, b in zip(theta, intra, inter)]


@dataclass
class RunRecord:
    gt_pose: SlicePose
    estimate: PlaneEstimate
    angle_error: float
    t_error: float
    mma: MmaReport | None
    timings: dict = field(default_factory=dict)
    dir_index: int = 0
    offset: float = 0.0

    @property
    def converged(self) -> bool:
        return self.estimate.converged

    def row(self) -> dict:
        """Flat CSV row without timings."""
        est = self.estimate.to_dict()
        n = est["n"] or [float("nan")] * 3
        d = {
            "dir_index": self.dir_index,
            "offset": self.offset,
            "gt_nx": self.gt_pose.normal[0], "gt_ny": self.gt_pose.normal[1], "gt_nz": self.gt_pose.normal[2],
            "est_nx": n[0], "est_ny": n[1], "est_nz": n[2],
            "est_t": est["t"] if est["t"] is not None else float("nan"),
            "angle_error": self.angle_error,
            "t_error": self.t_error,
            "support": est["support"],
            "converged": int(est["converged"]),
        }
        if self.mma is not None:
            for t, b, a in zip(self.mma.thresholds, self.mma.before, self.mma.after):
                d[f"mma{t:g}_before"] = b
                d[f"mma{t:g}_after"] = a
        return d


def plane_errors(est: PlaneEstimate, gt_pose: SlicePose):
    """Folded normal angle and the distance of the true slice centre from the estimated plane."""
    if est.plane is None:
        return 90.0, float("inf")
    return (angle_error_deg(est.plane.n, gt_pose.normal),
            float(est.plane.distance(gt_pose.center[None])[0]))


def experiment_poses(roi_center, n_dirs: int = 30, offsets=(-6.0, 0.0, 6.0), seed: int = 0,
                     directions=None) -> list:
    """Ground-truth poses: a randomly rotated direction lattice through the ROI, shifted along each normal.

    Each direction gets one random in-plane angle shared by its offsets.
    ``directions`` replaces the rotated lattice with explicit normals.
    Returns ``(dir_index, offset, pose)`` tuples.
    """
    rng = np.random.default_rng(seed)
    rot = random_rotation(rng)
    if directions is None:
        dirs = fibonacci_directions(n_dirs) @ rot.T
    else:
        dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    spins = rng.uniform(0.0, 2.0 * math.pi, size=len(dirs))
    roi = np.asarray(roi_center, dtype=np.float64)
    return [(i, float(o), SlicePose.from_normal(roi + o * d, d, float(spins[i])))
            for i, d in enumerate(dirs) for o in offsets]


def experiment_a(vol: Volume3, roi_center=None, n_dirs: int = 30, offsets=(-6.0, 0.0, 6.0),
                 cfg: PipelineConfig = PipelineConfig(), slice_size: int = 64,
                 index: VolumeIndex | None = None, directions=None) -> list:
    """Register synthetic slices of ``vol`` and score them against their true poses."""
    shape = np.array(vol.shape, dtype=np.float64)
    roi = (shape - 1) / 2.0 if roi_center is None else np.asarray(roi_center, dtype=np.float64)
    if np.any(roi < 0) or np.any(roi > shape - 1):
        raise InvalidArgument(f"ROI centre {roi.tolist()} is outside the volume")
    index = index or VolumeIndex(vol, cfg)
    records = []
    for i, off, pose in experiment_poses(roi, n_dirs, offsets, cfg.seed, directions):
        img = extract_slice(vol, pose, slice_size, slice_size)
        res = register_slice(img, index, cfg)
        ang, terr = plane_errors(res.estimate, pose)
        rep = mma(res.matches, pose, res.estimate, img.shape) if res.matches is not None else None
        records.append(RunRecord(pose, res.estimate, ang, terr, rep, res.timings, i, off))
    return records


def summarize_runs(records) -> dict:
    errs = np.array([r.angle_error for r in records])
    conv = [r for r in records if r.converged]
    out = {
        "n_runs": len(records),
        "n_converged": len(conv),
        "median_angle_error": float(np.median(errs)) if len(errs) else None,
        "mean_angle_error": float(np.mean(errs)) if len(errs) else None,
    }
    with_mma = [r for r in conv if r.mma is not None]
    if with_mma:
        th = with_mma[0].mma.thresholds
        for i, t in enumerate(th):
            out[f"mean_mma{t:g}_before"] = float(np.mean([r.mma.before[i] for r in with_mma]))
            out[f"mean_mma{t:g}_after"] = float(np.mean([r.mma.after[i] for r in with_mma]))
    return out


def write_rows_csv(rows, path) -> None:
    rows = list(rows)
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})
