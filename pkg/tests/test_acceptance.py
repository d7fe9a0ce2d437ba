"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed in the summary."""
import csv
import json
import math
import time

import numpy as np
import pytest

from slicereg.cli import main as cli_main
from slicereg.descriptor import describe_batch
from slicereg.edges import volume_candidates
from slicereg.estimator import RansacConfig, ransac_plane
from slicereg.evalx import write_rows_csv
from slicereg.geometry import angle_error_deg, plane_frame
from slicereg.grid import sample_points, save_mhd
from slicereg.matching import match_nn
from slicereg.phantom import PhantomConfig, generate_phantom
from slicereg.sampler import extract_oriented_patch, extract_patch_2d

REPORT = []


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def acc_phantom():
    return generate_phantom(PhantomConfig(seed=0))


@pytest.fixture(scope="module")
def phantom_file(tmp_path_factory, acc_phantom):
    d = tmp_path_factory.mktemp("acceptance")
    save_mhd(acc_phantom, d / "phantom.mhd")
    return d / "phantom.mhd"


def _run_cli(args):
    code = cli_main(args)
    assert code == 0, f"command failed: {args}"


def _read_rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def experiment_runs(tmp_path_factory, phantom_file):
    """Experiment A at R=300 and R=10 with threads 1, then R=300 again with threads 8."""
    out = {}
    for name, R, threads in (("r300_t1", 300, 1), ("r10_t1", 10, 1), ("r300_t8", 300, 8), ("r10_t8", 10, 8)):
        d = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        _run_cli(["experiment-a", "--volume", str(phantom_file), "--R", str(R), "--seed", "0",
                  "--threads", str(threads), "--out-dir", str(d)])
        out[name] = (d, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def experiment_c_runs(tmp_path_factory, phantom_file):
    out = {}
    for threads in (1, 8):
        d = tmp_path_factory.mktemp(f"expc_t{threads}")
        t0 = time.perf_counter()
        _run_cli(["experiment-c", "--volume", str(phantom_file), "--R", "400", "--seed", "0",
                  "--n-candidates", "100", "--threads", str(threads), "--out-dir", str(d)])
        out[threads] = (d, time.perf_counter() - t0)
    return out


# ---------------------------------------------------------------- 1

def _rotate_patch(p, theta):
    s = p.shape[0]
    h = (s - 1) / 2.0
    a = np.arange(s) - h
    x, y = np.meshgrid(a, a, indexing="ij")
    c, sn = math.cos(theta), math.sin(theta)
    return sample_points(p, np.stack([c * x + sn * y + h, -sn * x + c * y + h], axis=-1))


def test_c1_descriptor_invariance(acc_phantom):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    cands = volume_candidates(acc_phantom)
    picks = cands[rng.choice(len(cands), size=500, replace=True)]
    dirs = rng.normal(size=(500, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    patches = np.stack([extract_oriented_patch(acc_phantom, c, d) for c, d in zip(picks, dirs)])
    angles = rng.uniform(0, 2 * math.pi, size=500)
    rotated = np.stack([_rotate_patch(p, a) for p, a in zip(patches, angles)])
    f = describe_batch(patches)
    d_rot = np.linalg.norm(f - describe_batch(rotated), axis=1)
    d_90 = np.linalg.norm(f - describe_batch(np.rot90(patches, 1, axes=(1, 2))), axis=1)
    elapsed = time.perf_counter() - t0
    frac = float(np.mean(d_rot <= 0.05))
    ok = frac >= 0.95 and d_90.max() <= 1e-6 and elapsed < 30
    assert report(1, ok, f"rotated within 0.05: {frac:.3f} (>=0.95); max 90deg distance {d_90.max():.2e} "
                         f"(<=1e-6); {elapsed:.1f}s (<30s)")


# ---------------------------------------------------------------- 2

def _brute_force_nn(q, s, keys):
    out = []
    for qi in q:
        d2 = ((s - qi) ** 2).sum(axis=1)
        best = np.flatnonzero(d2 == d2.min())
        pick = min(best, key=lambda i: (keys[i, 0], keys[i, 1]))
        out.append((int(keys[pick, 0]), int(keys[pick, 1]), math.sqrt(d2[pick])))
    return out


def test_c2_matching_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    mismatches = 0
    for inst in range(100):
        nq = 200 if inst % 10 == 0 else int(rng.integers(1, 201))
        ns = 5000 if inst % 10 == 0 else int(rng.integers(1, 5001))
        K = int(rng.choice([8, 64, 258]))
        s = rng.normal(size=(ns, K))
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        # duplicated entries force exact ties
        s[rng.integers(ns, size=ns // 10)] = s[rng.integers(ns, size=ns // 10)]
        keys = np.stack([rng.permutation(ns), rng.integers(0, 300, size=ns)], axis=1)
        q = np.concatenate([s[rng.integers(ns, size=nq // 2)], rng.normal(size=(nq - nq // 2, K))])
        ms = match_nn(q, s, keys)
        for i, (j, r, d) in enumerate(_brute_force_nn(q, s, keys)):
            if (ms.s_index[i], ms.dir_index[i]) != (j, r) or abs(ms.distance[i] - d) > 1e-9:
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    assert report(2, ok, f"mismatching queries: {mismatches} (0); {elapsed:.1f}s (<60s)")


# ---------------------------------------------------------------- 3

def ransac_trial(seed):
    """100 noisy points on a random plane in a 64^3 box plus 67 uniform outliers (40% of all points)."""
    r = np.random.default_rng(seed)
    n = r.normal(size=3)
    n /= np.linalg.norm(n)
    c = r.uniform(16, 48, 3)
    u, v = plane_frame(n)
    pts = []
    while len(pts) < 100:
        p = c + r.uniform(-45, 45) * u + r.uniform(-45, 45) * v
        if np.all((p >= 0) & (p <= 63)):
            pts.append(p + r.normal(0, 0.3) * n)
    pts = np.vstack([np.array(pts), r.uniform(0, 63, (67, 3))])
    est = ransac_plane(pts, RansacConfig(seed=seed))
    t_true = float(n @ c)
    sign = 1.0 if est.plane.n @ n >= 0 else -1.0
    return {
        "seed": seed,
        "angle_error": angle_error_deg(est.plane.n, n),
        "t_error": abs(sign * est.plane.t - t_true),
        **{k: v for k, v in est.to_dict().items() if k != "n"},
    }


def test_c3_ransac_recovery(tmp_path):
    t0 = time.perf_counter()
    rows = [ransac_trial(seed) for seed in range(100)]
    elapsed = time.perf_counter() - t0
    good = sum(r["angle_error"] <= 1.0 and r["t_error"] <= 0.5 for r in rows)
    ok = good >= 98 and elapsed < 60
    assert report(3, ok, f"seeds recovered: {good}/100 (>=98); {elapsed:.1f}s (<60s)")


# ---------------------------------------------------------------- 4, 5

def test_c4_end_to_end(experiment_runs):
    d300, t300 = experiment_runs["r300_t1"]
    d10, t10 = experiment_runs["r10_t1"]
    e300 = [float(r["angle_error"]) for r in _read_rows(d300 / "experiment_a.csv")]
    e10 = [float(r["angle_error"]) for r in _read_rows(d10 / "experiment_a.csv")]
    m300, m10 = float(np.median(e300)), float(np.median(e10))
    ok = len(e300) == 90 and m300 <= 5.0 and m300 <= m10 and t300 < 15 * 60
    assert report(4, ok, f"runs {len(e300)}; median error R=300 {m300:.2f} deg (<=5); R=10 {m10:.2f} deg "
                         f"(R=300 <= R=10); {t300:.0f}s (<900s)")


def test_c5_mma_effect(experiment_runs):
    rows = [r for r in _read_rows(experiment_runs["r300_t1"][0] / "experiment_a.csv") if r["converged"] == "1"]
    if not rows:
        assert report(5, False, "no converged runs")
    up = np.mean([float(r["mma3_after"]) >= float(r["mma3_before"]) for r in rows])
    mean10 = float(np.mean([float(r["mma10_after"]) for r in rows]))
    ok = up >= 0.95 and mean10 >= 0.9
    assert report(5, ok, f"converged runs {len(rows)}; MMA@3 after>=before in {up:.3f} (>=0.95); "
                         f"mean MMA@10 after {mean10:.3f} (>=0.9)")


# ---------------------------------------------------------------- 6

def test_c6_intra_inter(experiment_c_runs):
    d, elapsed = experiment_c_runs[1]
    man = json.loads((d / "manifest.json").read_text())
    bins = _read_rows(d / "intra_inter_bins.csv")
    low = [b for b in bins if float(b["angle_diff"]) <= 40]
    sep = all(float(b["median_beta"]) < float(b["median_gamma"]) for b in low)
    detail = ", ".join(f"{float(b['angle_diff']):g}: {float(b['median_beta']):.3f}<{float(b['median_gamma']):.3f}"
                       for b in low)
    ok = man["n_candidates"] >= 50 and len(low) == 4 and sep and elapsed < 600
    assert report(6, ok, f"candidates {man['n_candidates']} (>=50); beta<gamma per bin [{detail}]; "
                         f"{elapsed:.0f}s (<600s)")


# ---------------------------------------------------------------- 7

def test_c7_determinism(tmp_path, experiment_runs, experiment_c_runs):
    diffs = []
    # criterion 3 artefact, produced twice
    for name in ("a", "b"):
        write_rows_csv([ransac_trial(seed) for seed in range(100)], tmp_path / f"ransac_{name}.csv")
    if (tmp_path / "ransac_a.csv").read_bytes() != (tmp_path / "ransac_b.csv").read_bytes():
        diffs.append("ransac.csv")
    for r in ("r300", "r10"):
        for f in ("experiment_a.csv", "summary.json", "manifest.json"):
            a = (experiment_runs[f"{r}_t1"][0] / f).read_bytes()
            b = (experiment_runs[f"{r}_t8"][0] / f).read_bytes()
            if a != b:
                diffs.append(f"{r}/{f}")
    for f in ("intra_inter.csv", "intra_inter_bins.csv", "inplane_sweep.csv", "manifest.json"):
        if (experiment_c_runs[1][0] / f).read_bytes() != (experiment_c_runs[8][0] / f).read_bytes():
            diffs.append(f"experiment-c/{f}")
    ok = not diffs
    assert report(7, ok, "threads 1 vs 8 byte-identical" + ("" if ok else f"; differing: {diffs}"))


# ---------------------------------------------------------------- 8

def test_c8_resampling_identity(acc_phantom):
    rng = np.random.default_rng(808)
    bad = 0
    for _ in range(1000):
        c = rng.integers(0, 64, size=3)
        p = extract_oriented_patch(acc_phantom, c, (0.0, 0.0, 1.0))
        w = extract_patch_2d(acc_phantom.axial(int(c[2])), c[:2])
        bad += p.tobytes() != w.tobytes()
    assert report(8, bad == 0, f"probes differing from the stored window: {bad}/1000 (0)")
