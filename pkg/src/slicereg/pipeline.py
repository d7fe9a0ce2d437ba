"""End-to-end registration: candidates, patches, features, matching, RANSAC."""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .descriptor import DescriptorConfig, describe_batch, load_external_features, split_feature_table
from .edges import CannyParams, canny_2d, volume_candidates
from .errors import DegenerateGeometry, DimensionMismatch, FormatError, InvalidArgument
from .estimator import PlaneEstimate, RansacConfig, ransac_plane
from .geometry import fibonacci_directions
from .grid import Slice2, Volume3
from .matching import FeatureBank, MatchSet, bank_keys, match_nn
from .sampler import extract_oriented_patches, extract_patches_2d

_SECTIONS = {
    "descriptor": DescriptorConfig,
    "canny2d": CannyParams,
    "canny3d": CannyParams,
    "ransac": RansacConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    patch_size: int = 21
    R: int = 300
    seed: int = 0
    threads: int = 1
    features: str | None = None
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    canny2d: CannyParams = field(default_factory=lambda: CannyParams(max_candidates=500))
    canny3d: CannyParams = field(default_factory=lambda: CannyParams(max_candidates=2000))
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        if self.R < 1:
            raise InvalidArgument("R must be >= 1")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise InvalidArgument("patch_size must be odd")
        if self.threads < 1:
            raise InvalidArgument("threads must be >= 1")

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Same config with ``seed`` pushed into every seeded stage."""
        return dataclasses.replace(
            self,
            seed=seed,
            canny2d=dataclasses.replace(self.canny2d, seed=seed),
            canny3d=dataclasses.replace(self.canny3d, seed=seed),
            ransac=dataclasses.replace(self.ransac, seed=seed),
        )

    def to_dict(self, with_runtime: bool = False) -> dict:
        """Effective settings; ``threads`` only affects scheduling and is left out by default."""
        d = dataclasses.asdict(self)
        if not with_runtime:
            d.pop("threads")
        return d

    def to_lines(self) -> list:
        """Flat ``key=value`` lines, the config file format."""
        out = []
        for k, v in self.to_dict(with_runtime=True).items():
            if isinstance(v, dict):
                out.extend(f"{k}.{kk}={vv}" for kk, vv in v.items())
            elif v is not None:
                out.append(f"{k}={v}")
        return out

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from flat dotted keys, e.g. ``{"ransac.threshold": "1.0"}``.

        Sub-config seeds follow the top-level ``seed`` unless set explicitly.
        """
        top, sub = {}, {name: {} for name in _SECTIONS}
        top_fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in _SECTIONS}
        for key, raw in values.items():
            if "." in key:
                section, name = key.split(".", 1)
                if section not in _SECTIONS:
                    raise FormatError(key, "unknown section")
                fields = {f.name: f for f in dataclasses.fields(_SECTIONS[section])}
                if name not in fields:
                    raise FormatError(key, "unknown key")
                sub[section][name] = _coerce(key, raw, fields[name].default)
            else:
                if key not in top_fields:
                    raise FormatError(key, "unknown key")
                default = top_fields[key].default
                top[key] = raw if key == "features" else _coerce(key, raw, default)
        try:
            base = cls(**top).with_seed(top.get("seed", 0))
            parts = {name: dataclasses.replace(getattr(base, name), **kw) for name, kw in sub.items() if kw}
            return dataclasses.replace(base, **parts)
        except InvalidArgument as e:
            raise FormatError("config", str(e)) from e


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise FormatError(key, f"bad value {raw!r}") from e
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}", "expected key=value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        return PipelineConfig.from_mapping(parse_config_text(f.read()))


class VolumeIndex:
    """Candidates, sampling directions and the feature bank of one search volume."""

    def __init__(self, vol: Volume3, cfg: PipelineConfig, external: dict | None = None):
        self.cfg = cfg
        self.timings = {}
        t0 = time.perf_counter()
        self.candidates = volume_candidates(vol, cfg.canny3d, threads=cfg.threads)
        self.timings["volume_candidates"] = _ms(t0)
        self.directions = fibonacci_directions(cfg.R)
        t0 = time.perf_counter()
        self.bank = None
        if external is not None:
            _, keys, feats = split_feature_table(external)
            if len(keys) and keys[:, 0].max() >= len(self.candidates):
                raise DimensionMismatch(
                    f"external volume features reference candidate {keys[:, 0].max()}, "
                    f"only {len(self.candidates)} candidates exist")
            if len(keys):
                self.bank = FeatureBank(feats, keys)
        elif len(self.candidates):
            feats = volume_features(vol, self.candidates, self.directions, cfg)
            J, R, K = feats.shape
            self.bank = FeatureBank(feats.reshape(J * R, K), bank_keys(J, R))
        self.timings["volume_features"] = _ms(t0)

    @property
    def J(self):
        return len(self.candidates)


def volume_features(vol: Volume3, cands: np.ndarray, dirs: np.ndarray, cfg: PipelineConfig,
                    chunk: int = 16) -> np.ndarray:
    """float32 features ``(J, R, K)`` for every candidate and direction."""
    J, R = len(cands), len(dirs)
    out = np.empty((J, R, cfg.descriptor.K), dtype=np.float32)
    s = cfg.patch_size
    for r0 in range(0, R, chunk):
        patches = extract_oriented_patches(vol, cands, dirs[r0:r0 + chunk], s, threads=cfg.threads)
        n = patches.shape[1]
        feats = describe_batch(patches.reshape(-1, s, s), cfg.descriptor)
        out[:, r0:r0 + n] = feats.reshape(J, n, -1)
    return out


@dataclass
class RegistrationResult:
    estimate: PlaneEstimate
    matches: MatchSet | None
    query_candidates: np.ndarray
    counts: dict
    config: PipelineConfig
    timings: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.estimate.converged

    def to_dict(self, with_timings: bool = True) -> dict:
        d = {
            "estimate": self.estimate.to_dict(),
            "match_stats": self.matches.summary() if self.matches is not None else {"n_matches": 0},
            "counts": self.counts,
            "config": self.config.to_dict(),
            "version": __version__,
        }
        if with_timings:
            d["timings_ms"] = self.timings
            d["threads"] = self.config.threads
        return d

    def to_json(self, with_timings: bool = True) -> str:
        return json.dumps(self.to_dict(with_timings), indent=2, sort_keys=True)


def _ms(t0):
    return round((time.perf_counter() - t0) * 1000.0, 3)


def register_slice(img: Slice2, index: VolumeIndex, cfg: PipelineConfig | None = None,
                   external: dict | None = None) -> RegistrationResult:
    """Estimate the plane of ``img`` inside the volume behind ``index``."""
    cfg = cfg or index.cfg
    timings = dict(index.timings)
    t0 = time.perf_counter()
    q_cands = canny_2d(img, cfg.canny2d)
    timings["query_candidates"] = _ms(t0)
    t0 = time.perf_counter()
    if external is not None:
        q_feats, _, _ = split_feature_table(external)
        if len(q_feats) != len(q_cands):
            raise DimensionMismatch(
                f"external file has {len(q_feats)} query features for {len(q_cands)} query candidates")
    else:
        q_feats = describe_batch(extract_patches_2d(img, q_cands, cfg.patch_size), cfg.descriptor)
    timings["query_features"] = _ms(t0)
    counts = {"I": int(len(q_cands)), "J": int(index.J), "R": int(cfg.R),
              "K": int(index.bank.K) if index.bank is not None else int(cfg.descriptor.K)}

    if index.bank is None or len(q_cands) == 0:
        est = PlaneEstimate(plane=None)
        return RegistrationResult(est, None, q_cands, counts, cfg, timings)

    t0 = time.perf_counter()
    ms = match_nn(q_feats, index.bank, q_pos=q_cands, s_pos=index.candidates, threads=cfg.threads)
    timings["matching"] = _ms(t0)
    t0 = time.perf_counter()
    if len(ms) >= 3:
        try:
            est = ransac_plane(ms.s_pos.astype(np.float64), cfg.ransac)
        except DegenerateGeometry:
            est = PlaneEstimate(plane=None)
    else:
        est = PlaneEstimate(plane=None)
    timings["ransac"] = _ms(t0)
    return RegistrationResult(est, ms, q_cands, counts, cfg, timings)


def register(img: Slice2, vol: Volume3, cfg: PipelineConfig = PipelineConfig()) -> RegistrationResult:
    external = load_external_features(cfg.features) if cfg.features else None
    index = VolumeIndex(vol, cfg, external)
    return register_slice(img, index, cfg, external)
