"""Cross-domain sample matching, response-consistency filtering and the
discrepancy loss minimized over surviving pairs.

Each target sample is paired with its nearest source sample in feature
space. A pair passes the filter only if the two samples' classifier
responses are closer than a threshold ``tau`` (strictly). The discrepancy
loss sums (or averages) feature distances over passing pairs.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ConfigurationError, DimensionError, UsageError

REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class MatchedPair:
    target: int
    source: int
    feat_dist: float
    resp_dist: float = float("nan")
    passed: bool = False


@dataclass(frozen=True)
class SmoConfig:
    """``tau`` fixes the threshold; when it is ``None`` the threshold is the
    ``tau_quantile`` quantile of the current response distances."""

    tau: float | None = None
    tau_quantile: float = 0.5
    reduction: str = "sum"
    rematch_period: int = 1

    def __post_init__(self):
        if self.tau is not None and not self.tau >= 0.0:
            raise ConfigurationError(f"tau must be >= 0, got {self.tau}")
        if not 0.0 < self.tau_quantile <= 1.0:
            raise ConfigurationError(f"tau_quantile must be in (0, 1], got {self.tau_quantile}")
        if self.reduction not in REDUCTIONS:
            raise ConfigurationError(f"reduction must be one of {REDUCTIONS}")
        if self.rematch_period < 1:
            raise ConfigurationError("rematch_period must be >= 1")

    def threshold(self, resp_dists):
        if self.tau is not None:
            return float(self.tau)
        if len(resp_dists) == 0:
            return 0.0
        return float(np.quantile(resp_dists, self.tau_quantile))


def _as_matrix(name, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def nearest_sources(source_feats, target_feats):
    """Arrays ``(source_index, distance)`` with one entry per target row."""
    s = _as_matrix("source_feats", source_feats)
    t = _as_matrix("target_feats", target_feats)
    if s.shape[0] == 0:
        raise UsageError("match_greedy needs at least one source sample")
    if s.shape[1] != t.shape[1]:
        raise DimensionError(f"feature dims differ: source {s.shape}, target {t.shape}")
    return kernels.greedy_match(s, t)


def match_greedy(source_feats, target_feats):
    """Nearest source sample (L2, lowest index on ties) for every target."""
    idx, dist = nearest_sources(source_feats, target_feats)
    return [MatchedPair(j, int(i), float(d)) for j, (i, d) in enumerate(zip(idx, dist))]


def response_distances(pairs, source_resp, target_resp):
    sr = np.asarray(source_resp, dtype=np.float64)
    tr = np.asarray(target_resp, dtype=np.float64)
    if sr.shape[1] != tr.shape[1]:
        raise DimensionError(f"response rows differ: {sr.shape[1]} vs {tr.shape[1]}")
    s_idx = np.array([p.source for p in pairs], dtype=np.intp)
    t_idx = np.array([p.target for p in pairs], dtype=np.intp)
    diff = sr[s_idx] - tr[t_idx]
    return np.sqrt(np.sum(diff * diff, axis=1))


def filter_pairs(pairs, source_resp, target_resp, tau):
    """Attach response distances and pass flags (``resp_dist < tau``)."""
    rd = response_distances(pairs, source_resp, target_resp)
    return [MatchedPair(p.target, p.source, p.feat_dist, float(r), bool(r < tau))
            for p, r in zip(pairs, rd)]


def discrepancy_loss(pairs, source_feats, target_feats, reduction="sum"):
    """Sum or mean of feature distances over passing pairs; 0 if none pass.

    Features may be taped tensors; gradients reach only rows of passing
    pairs.
    """
    if reduction not in REDUCTIONS:
        raise ConfigurationError(f"reduction must be one of {REDUCTIONS}")
    passing = [p for p in pairs if p.passed]
    if not passing:
        if isinstance(source_feats, ad.Tensor) or isinstance(target_feats, ad.Tensor):
            return ad.Tensor(0.0)
        return 0.0
    fs = ad.take_rows(source_feats, [p.source for p in passing])
    ft = ad.take_rows(target_feats, [p.target for p in passing])
    total = ad.sum(ad.row_norms(ad.sub(fs, ft)))
    if reduction == "mean":
        total = ad.scale(total, 1.0 / len(passing))
    return total


def match_hungarian(cost):
    """Minimum-total-cost perfect assignment; returns ``(col_of_row, total)``."""
    c = np.ascontiguousarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise UsageError(f"match_hungarian needs a square matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise UsageError("match_hungarian needs finite costs")
    if c.shape[0] == 0:
        return np.empty(0, dtype=np.intp), 0.0
    col = kernels.hungarian(c)
    return col, float(np.sum(c[np.arange(c.shape[0]), col]))


def pairwise_distances(source_feats, target_feats):
    """``n_t x n_s`` L2 distance matrix."""
    s = _as_matrix("source_feats", source_feats)
    t = _as_matrix("target_feats", target_feats)
    sq = (np.sum(t * t, axis=1)[:, None] + np.sum(s * s, axis=1)[None, :] - 2.0 * t @ s.T)
    return np.sqrt(np.maximum(sq, 0.0))


def write_pairs_csv(pairs, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["target_idx", "source_idx", "feat_dist", "resp_dist", "pass"])
        for p in pairs:
            w.writerow([p.target, p.source, repr(p.feat_dist), repr(p.resp_dist), int(p.passed)])


def read_pairs_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [MatchedPair(int(r["target_idx"]), int(r["source_idx"]), float(r["feat_dist"]),
                            float(r["resp_dist"]), r["pass"] == "1")
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------- benchmark


@dataclass
class MatchBenchmark:
    greedy_ms: float
    hungarian_ms: float
    greedy_acc: float
    hungarian_acc: float
    n_s: int
    n_t: int
    dim: int
    seed: int
    backend: str

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def benchmark_matchers(n_s, n_t, dim, seed, n_classes=10, separation=6.0, shift=0.0):
    """Time greedy and Hungarian matching on one labeled synthetic instance.

    Accuracy is the fraction of targets whose matched source shares their
    class. Hungarian runs on the ``n_t x n_s`` distance matrix zero-padded to
    square; targets assigned to padding count as wrong.
    """
    from .synth import labeled_clusters

    src, src_y, tgt, tgt_y = labeled_clusters(n_s, n_t, dim, n_classes, separation, shift, seed)

    t0 = time.perf_counter()
    idx, _ = nearest_sources(src, tgt)
    greedy_ms = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    cost = pairwise_distances(src, tgt)
    n = max(n_s, n_t)
    if n_s != n_t:
        padded = np.zeros((n, n))
        padded[:n_t, :n_s] = cost
        cost = padded
    col, _ = match_hungarian(cost)
    hungarian_ms = (time.perf_counter() - t0) * 1e3

    greedy_acc = float(np.mean(src_y[idx] == tgt_y))
    col = col[:n_t]
    ok = (col < n_s) & (src_y[np.minimum(col, n_s - 1)] == tgt_y)
    return MatchBenchmark(greedy_ms, hungarian_ms, greedy_acc, float(np.mean(ok)),
                          n_s, n_t, dim, seed, kernels.BACKEND)
