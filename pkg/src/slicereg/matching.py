"""Exhaustive nearest-neighbour matching of query features to volume features."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoCandidates

_EPS32 = 2.0 ** -23


@dataclass(frozen=True)
class Match:
    q_index: int
    s_index: int
    dir_index: int
    distance: float
    q_pos: tuple
    s_pos: tuple


@dataclass
class MatchSet:
    """One match per query candidate, as parallel arrays in query order."""

    q_index: np.ndarray
    s_index: np.ndarray
    dir_index: np.ndarray
    distance: np.ndarray
    q_pos: np.ndarray
    s_pos: np.ndarray

    def __len__(self):
        return len(self.q_index)

    def __getitem__(self, i) -> Match:
        return Match(int(self.q_index[i]), int(self.s_index[i]), int(self.dir_index[i]),
                     float(self.distance[i]), tuple(int(v) for v in self.q_pos[i]),
                     tuple(int(v) for v in self.s_pos[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def summary(self) -> dict:
        d = self.distance
        return {
            "n_matches": int(len(self)),
            "distinct_volume_candidates": int(len(np.unique(self.s_index))),
            "distance_mean": float(d.mean()) if len(d) else None,
            "distance_median": float(np.median(d)) if len(d) else None,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["q_index", "qx", "qy", "s_index", "sx", "sy", "sz", "dir_index", "distance"])
            for m in self:
                w.writerow([m.q_index, *m.q_pos, m.s_index, *m.s_pos, m.dir_index, repr(m.distance)])


class FeatureBank:
    """Volume features prepared for repeated exact nearest-neighbour queries.

    A float32 pass with the expansion ``|a|^2 + |b|^2 - 2 a.b`` shortlists every
    entry within a rigorous rounding margin of the best; the shortlist is then
    rescored exactly in float64, and ties go to the smallest key.  Results
    therefore do not depend on storage order, blocking or BLAS threading.
    """

    def __init__(self, feats, keys):
        feats = np.asarray(feats)
        keys = np.asarray(keys, dtype=np.int64)
        if feats.ndim != 2:
            raise DimensionMismatch("volume features must be a 2D array")
        if len(feats) == 0:
            raise NoCandidates("no volume features to match against")
        if keys.shape[0] != feats.shape[0]:
            raise DimensionMismatch("one key per volume feature required")
        self.feats = feats
        self.keys = keys.reshape(len(feats), -1)
        self.f32 = np.ascontiguousarray(feats, dtype=np.float32)
        sq = np.zeros(len(feats))
        for i in range(0, len(feats), 65536):
            blk = feats[i:i + 65536].astype(np.float64)
            sq[i:i + 65536] = np.einsum("ij,ij->i", blk, blk)
        self.sq32 = sq.astype(np.float32)
        self.sq_max = float(sq.max())
        # lexicographic rank of every key, used for tie breaking
        self.rank = np.empty(len(self.keys), dtype=np.int64)
        self.rank[np.lexsort(self.keys.T[::-1])] = np.arange(len(self.keys))

    @property
    def K(self):
        return self.feats.shape[1]

    def __len__(self):
        return len(self.feats)

    def nearest(self, q_feats, block: int = 32, threads: int = 1):
        """Row index of the nearest bank entry and its L2 distance, per query row."""
        q = np.asarray(q_feats, dtype=np.float64)
        if q.ndim != 2:
            raise DimensionMismatch("query features must be a 2D array")
        if q.shape[1] != self.K:
            raise DimensionMismatch(f"query K={q.shape[1]} but volume K={self.K}")
        best = np.empty(len(q), dtype=np.int64)
        dist = np.empty(len(q), dtype=np.float64)
        K = self.K

        def run(start):
            qb = q[start:start + block]
            q_sq = np.einsum("ij,ij->i", qb, qb)
            approx = self.sq32[None, :] - 2.0 * (qb.astype(np.float32) @ self.f32.T)
            bound = q_sq + self.sq_max + 2.0 * np.sqrt(q_sq * self.sq_max)
            margin = 8.0 * (K + 4) * _EPS32 * bound + 1e-300
            for i in range(len(qb)):
                row = approx[i]
                cand = np.flatnonzero(row <= float(row.min()) + margin[i])
                diff = self.feats[cand].astype(np.float64) - qb[i]
                d2 = np.einsum("ij,ij->i", diff, diff)
                tie = d2 == d2.min()
                winners = cand[tie]
                best[start + i] = winners[np.argmin(self.rank[winners])]
                dist[start + i] = float(np.sqrt(d2[tie][0]))

        starts = range(0, len(q), block)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run, starts))
        else:
            for st in starts:
                run(st)
        return best, dist


def match_nn(q_feats, s_feats, s_keys=None, q_pos=None, s_pos=None, threads: int = 1) -> MatchSet:
    """Match every query feature to its nearest volume feature.

    ``s_feats`` is either a :class:`FeatureBank` or a ``(N, K)`` array with
    ``(j, r)`` keys in ``s_keys``.  ``s_pos`` is indexed by ``j`` and gives the
    volume candidate position; both position arrays default to zeros.
    """
    q_feats = np.asarray(q_feats)
    if len(q_feats) == 0:
        raise NoCandidates("no query features")
    bank = s_feats if isinstance(s_feats, FeatureBank) else FeatureBank(s_feats, s_keys)
    rows, dist = bank.nearest(q_feats, threads=threads)
    keys = bank.keys[rows]
    if q_pos is None:
        q_pos = np.zeros((len(q_feats), 2), dtype=np.int64)
    if s_pos is None:
        s_pos = np.zeros((int(bank.keys[:, 0].max()) + 1, 3), dtype=np.int64)
    s_pos = np.asarray(s_pos, dtype=np.int64)
    return MatchSet(
        q_index=np.arange(len(q_feats), dtype=np.int64),
        s_index=keys[:, 0].copy(),
        dir_index=keys[:, 1].copy(),
        distance=dist,
        q_pos=np.asarray(q_pos, dtype=np.int64).reshape(len(q_feats), -1),
        s_pos=s_pos[keys[:, 0]].reshape(len(rows), -1),
    )


def bank_keys(J: int, R: int) -> np.ndarray:
    """Keys ``(j, r)`` for a ``(J, R, K)`` bank flattened in C order."""
    jj, rr = np.meshgrid(np.arange(J), np.arange(R), indexing="ij")
    return np.stack([jj.ravel(), rr.ravel()], axis=1)
