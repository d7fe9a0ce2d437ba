"""Command-line entry point: ``slicereg <command> ...``.

Exit codes: 0 success (converged), 2 finished without a converged plane,
1 error with a message on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .descriptor import describe_batch, load_external_features, write_features_jsonl
from .edges import canny_2d, volume_candidates, write_candidates_csv
from .errors import SliceRegError
from .evalx import (experiment_a, inplane_sweep, intra_inter_analysis, summarize_pairs, summarize_runs,
                    write_rows_csv)
from .geometry import fibonacci_directions
from .grid import file_digest, load_mhd, save_mhd, slice_from_volume
from .phantom import PhantomConfig, generate_phantom
from .pipeline import PipelineConfig, VolumeIndex, load_config, parse_config_text, register_slice
from .sampler import extract_oriented_patches, extract_patches_2d

log = logging.getLogger("slicereg")

EXIT_OK, EXIT_ERROR, EXIT_UNCONVERGED = 0, 1, 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags below override it")
    p.add_argument("--R", type=int, help="number of sampling directions")
    p.add_argument("--patch-size", type=int, help="odd patch side in pixels")
    p.add_argument("--seed", type=int, help="seed for every randomised stage")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--features", help="external features JSONL instead of the built-in descriptor")
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")


def build_config(args) -> PipelineConfig:
    values = {}
    if args.config:
        with open(args.config) as f:
            values.update(parse_config_text(f.read()))
    flags = {"R": args.R, "patch_size": args.patch_size, "seed": args.seed,
             "threads": args.threads, "features": args.features}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.seed is not None:
        # an explicit seed reaches every seeded stage, overriding the file
        for k in [k for k in values if k.endswith(".seed")]:
            del values[k]
    return PipelineConfig.from_mapping(values)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(command: str, cfg: PipelineConfig | None, inputs: dict, outputs: list, extra=None) -> dict:
    m = {
        "command": command,
        "version": __version__,
        "inputs": {name: {"path": str(p), "sha256": file_digest(p)} for name, p in inputs.items()},
        "outputs": sorted(outputs),
    }
    if cfg is not None:
        m["config"] = cfg.to_dict()
        m["seed"] = cfg.seed
    if extra:
        m.update(extra)
    return m


def _inputs(**paths) -> dict:
    """Name -> path for every given input, adding the .raw companion of MHD files."""
    out = {}
    for name, p in paths.items():
        if p is None:
            continue
        out[name] = p
        raw = _raw_companion(p)
        if raw is not None:
            out[name + "_raw"] = raw
    return out


def _raw_companion(path):
    p = Path(path)
    if p.suffix.lower() != ".mhd":
        return None
    for line in p.read_text(errors="replace").splitlines():
        if line.split("=", 1)[0].strip() == "ElementDataFile":
            return str(p.parent / line.split("=", 1)[1].strip())
    return None


def cmd_register(args) -> int:
    cfg = build_config(args)
    img = slice_from_volume(load_mhd(args.slice))
    vol = load_mhd(args.volume)
    external = load_external_features(cfg.features) if cfg.features else None
    index = VolumeIndex(vol, cfg, external)
    res = register_slice(img, index, cfg, external)
    out = _out_dir(args)
    _write_json(out / "result.json", res.to_dict(with_timings=False))
    _write_json(out / "timings.json", {"threads": cfg.threads, "timings_ms": res.timings})
    outputs = ["result.json", "timings.json"]
    if args.matches_csv and res.matches is not None:
        res.matches.write_csv(out / "matches.csv")
        outputs.append("matches.csv")
    inputs = _inputs(slice=args.slice, volume=args.volume, features=cfg.features)
    _write_json(out / "manifest.json", _manifest("register", cfg, inputs, outputs))
    est = res.estimate.to_dict()
    print(json.dumps({"converged": est["converged"], "n": est["n"], "t": est["t"],
                      "support": est["support"]}))
    return EXIT_OK if res.converged else EXIT_UNCONVERGED


def cmd_phantom_gen(args) -> int:
    pcfg = PhantomConfig(size=args.size, n_blobs=args.n_blobs, noise_sigma=args.noise,
                         seed=args.seed if args.seed is not None else 0)
    vol = generate_phantom(pcfg)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_mhd(vol, path)
    manifest = {
        "command": "phantom-gen",
        "version": __version__,
        "phantom": pcfg.to_dict(),
        "seed": pcfg.seed,
        "outputs": {path.name: file_digest(path), path.with_suffix(".raw").name: file_digest(path.with_suffix(".raw"))},
    }
    _write_json(path.with_suffix(".manifest.json"), manifest)
    print(str(path))
    return EXIT_OK


def cmd_experiment_a(args) -> int:
    cfg = build_config(args)
    vol = load_mhd(args.volume)
    index = VolumeIndex(vol, cfg)
    t0 = time.perf_counter()
    offsets = tuple(float(o) for o in args.offsets)
    records = experiment_a(vol, args.roi, n_dirs=args.n_dirs, offsets=offsets, cfg=cfg,
                           slice_size=args.slice_size, index=index)
    out = _out_dir(args)
    write_rows_csv([r.row() for r in records], out / "experiment_a.csv")
    summary = summarize_runs(records)
    _write_json(out / "summary.json", summary)
    _write_json(out / "timings.json", {
        "threads": cfg.threads, "index_ms": index.timings,
        "runs_ms": round((time.perf_counter() - t0) * 1000.0, 3)})
    extra = {"n_dirs": args.n_dirs, "offsets": list(offsets), "slice_size": args.slice_size,
             "roi": None if args.roi is None else [float(c) for c in args.roi]}
    _write_json(out / "manifest.json", _manifest(
        "experiment-a", cfg, _inputs(volume=args.volume),
        ["experiment_a.csv", "summary.json", "timings.json"], extra))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def pick_candidates(cands: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Seeded subset of ``n`` candidates, kept in input order."""
    if len(cands) <= n:
        return cands
    rng = np.random.default_rng(seed)
    return cands[np.sort(rng.choice(len(cands), size=n, replace=False))]


def cmd_experiment_c(args) -> int:
    cfg = build_config(args)
    if args.R is None and not args.config:
        cfg = dataclasses.replace(cfg, R=400)
    vol = load_mhd(args.volume)
    cands = pick_candidates(volume_candidates(vol, cfg.canny3d, cfg.threads), args.n_candidates, cfg.seed)
    pairs = intra_inter_analysis(vol, cands, R=cfg.R, seed=cfg.seed, patch_size=cfg.patch_size,
                                 desc_cfg=cfg.descriptor, threads=cfg.threads)
    out = _out_dir(args)
    write_rows_csv([dataclasses.asdict(p) for p in pairs], out / "intra_inter.csv")
    bins = summarize_pairs(pairs)
    write_rows_csv(bins, out / "intra_inter_bins.csv")
    outputs = ["intra_inter.csv", "intra_inter_bins.csv"]
    if len(cands) >= 2 and args.sweep_angles > 0:
        rng = np.random.default_rng(cfg.seed)
        a, b = rng.choice(len(cands), size=2, replace=False)
        rows = inplane_sweep(vol, cands[a], cands[b], args.sweep_angles, cfg.patch_size, cfg.descriptor)
        write_rows_csv([{"angle": t, "intra": i, "inter": e} for t, i, e in rows], out / "inplane_sweep.csv")
        outputs.append("inplane_sweep.csv")
    extra = {"n_candidates": int(len(cands)), "sweep_angles": args.sweep_angles}
    _write_json(out / "manifest.json", _manifest("experiment-c", cfg, _inputs(volume=args.volume), outputs, extra))
    print(json.dumps(bins))
    return EXIT_OK


def cmd_export_candidates(args) -> int:
    cfg = build_config(args)
    out = _out_dir(args)
    outputs = []
    q_feats, v_feats = None, None
    if args.slice:
        img = slice_from_volume(load_mhd(args.slice))
        q = canny_2d(img, cfg.canny2d)
        write_candidates_csv(q, out / "query_candidates.csv")
        outputs.append("query_candidates.csv")
        if args.with_features:
            q_feats = describe_batch(extract_patches_2d(img, q, cfg.patch_size), cfg.descriptor)
    if args.volume:
        vol = load_mhd(args.volume)
        c = volume_candidates(vol, cfg.canny3d, cfg.threads)
        write_candidates_csv(c, out / "volume_candidates.csv")
        dirs = fibonacci_directions(cfg.R)
        np.savetxt(out / "directions.csv", dirs, delimiter=",", header="dx,dy,dz", comments="", fmt="%.17g")
        outputs += ["volume_candidates.csv", "directions.csv"]
        if args.with_features:
            patches = extract_oriented_patches(vol, c, dirs, cfg.patch_size, threads=cfg.threads)
            J, R, s, _ = patches.shape
            v_feats = describe_batch(patches.reshape(-1, s, s), cfg.descriptor).reshape(J, R, -1)
    if args.with_features:
        write_features_jsonl(out / "features.jsonl", q_feats, v_feats)
        outputs.append("features.jsonl")
    _write_json(out / "manifest.json", _manifest(
        "export-candidates", cfg, _inputs(slice=args.slice, volume=args.volume), outputs))
    return EXIT_OK


def cmd_import_features(args) -> int:
    table = load_external_features(args.path)
    query = sum(1 for _, d in table if d is None)
    dims = {len(v) for v in table.values()}
    summary = {"path": args.path, "entries": len(table), "query_entries": query,
               "volume_entries": len(table) - query, "K": dims.pop() if dims else 0,
               "sha256": file_digest(args.path)}
    if args.out_dir:
        _write_json(_out_dir(args) / "features_manifest.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicereg", description="Slice-to-volume plane registration")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="estimate the plane of a 2D slice inside a volume")
    p.add_argument("slice", help="slice MHD (DimSize z = 1)")
    p.add_argument("volume", help="volume MHD")
    p.add_argument("--matches-csv", action="store_true", help="also write matches.csv")
    _add_common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("phantom-gen", help="write a synthetic test volume")
    p.add_argument("--out", default="phantom.mhd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--n-blobs", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.01)
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("experiment-a", help="registration accuracy over rotated and shifted slices")
    p.add_argument("--volume", required=True)
    p.add_argument("--roi", type=float, nargs=3, metavar=("X", "Y", "Z"), help="default: volume centre")
    p.add_argument("--n-dirs", type=int, default=30)
    p.add_argument("--offsets", type=float, nargs="+", default=[-6.0, 0.0, 6.0])
    p.add_argument("--slice-size", type=int, default=64)
    _add_common(p)
    p.set_defaults(func=cmd_experiment_a)

    p = sub.add_parser("experiment-c", help="same-point versus other-point feature distances")
    p.add_argument("--volume", required=True)
    p.add_argument("--n-candidates", type=int, default=100)
    p.add_argument("--sweep-angles", type=int, default=360)
    _add_common(p)
    p.set_defaults(func=cmd_experiment_c)

    p = sub.add_parser("export-candidates", help="write candidate points, optionally with features")
    p.add_argument("--slice")
    p.add_argument("--volume")
    p.add_argument("--with-features", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_export_candidates)

    p = sub.add_parser("import-features", help="validate an external features JSONL file")
    p.add_argument("path")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_import_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SliceRegError, ValueError, OSError) as e:
        print(f"slicereg: error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
