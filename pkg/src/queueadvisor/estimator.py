"""Instance-based wait/runtime estimator.

A bounded sliding window of past (features, label) examples backs a k-nearest
neighbor regressor. Distances mix range-normalized numeric differences with
0/1 overlap on categorical features, each dimension scaled by a learned
weight. Neighbor labels are averaged under a Gaussian kernel of the distance;
the kernel weights are computed from exponent differences so that queries far
from every neighbor still produce finite weights (the textbook kernel ratio
divides zero by zero once every kernel value underflows). Each prediction
carries an unbiased weighted variance of the neighbor labels as its
uncertainty.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import FeatureSchema, FeatureVector, NormalizationTable

# d/omega beyond this makes exp(-(d/omega)^2) smaller than the smallest
# normal double; past ~27.29 even subnormals are exhausted and the naive
# kernel is exactly zero.
KERNEL_UNDERFLOW_RATIO = math.sqrt(-math.log(sys.float_info.min))

_VARIANCE_GUARD = 1e-12


class EmptyKnowledgeBaseError(RuntimeError):
    """Prediction requested before any example was stored."""


@dataclass(frozen=True)
class EstimatorParams:
    """Hyperparameters: neighbor count, kernel width, window size, weights."""

    k: int
    omega: float
    window_size: int
    feature_weights: Mapping[str, float]

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not (self.omega > 0):
            raise ValueError("omega must be positive")
        if self.window_size < self.k:
            raise ValueError("window_size must be at least k")
        if any(w < 0 for w in self.feature_weights.values()):
            raise ValueError("feature weights must be non-negative")
        if not any(w > 0 for w in self.feature_weights.values()):
            raise ValueError("at least one feature weight must be positive")


@dataclass(frozen=True)
class Prediction:
    estimate: float
    variance: float
    neighbor_count: int
    neighbor_ids: tuple[int, ...]


def kernel(distance: float, omega: float) -> float:
    """Gaussian kernel exp(-(d/omega)^2); 1 at zero distance."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    return math.exp(-((distance / omega) ** 2))


def naive_weights(distances: Sequence[float], omega: float) -> list[float]:
    """Kernel weights computed the textbook way: K(d_p) / sum K(d_r).

    Kept as the reference (and as the failure exhibit): once every distance
    satisfies d/omega beyond the underflow ratio, the denominator is exactly
    zero and this raises ZeroDivisionError.
    """
    ks = [kernel(d, omega) for d in distances]
    total = math.fsum(ks)
    return [k / total for k in ks]


def stable_weights(distances: Sequence[float] | np.ndarray, omega: float) -> np.ndarray:
    """Kernel weights from exponent differences; finite for any finite input.

    Algebraically identical to the K(d_p)/sum K(d_r) ratio: dividing through
    by the largest kernel value leaves only exp of (d/omega)^2 differences,
    so the denominator is at least 1 and no division by zero can occur.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("need at least one distance")
    u = np.square(d / omega)
    e = np.exp(u.min() - u)
    return e / e.sum()


def weighted_variance(weights: np.ndarray, labels: np.ndarray, estimate: float) -> float:
    """Unbiased weighted spread of neighbor labels around the estimate.

    Degenerate guard: when the weight mass collapses onto one point
    (including k = 1) the correction factor is 0/0; the spread of a single
    effective point is defined as zero.
    """
    sq = float(np.dot(weights, weights))
    denom = 1.0 - sq
    if denom < _VARIANCE_GUARD:
        return 0.0
    spread = float(np.dot(weights, np.square(estimate - labels)))
    return max((sq / denom) * spread, 0.0)


class KnowledgeBase:
    """FIFO window of (features, label) examples with per-feature ranges.

    Single-writer: inserts must not race predictions. Storage is a ring
    buffer; the insertion sequence number orders recency for tie-breaking.
    """

    def __init__(self, schema: FeatureSchema, window_size: int):
        if window_size < 1:
            raise ValueError("window_size must be positive")
        self.schema = schema
        self.window_size = window_size
        self._num_names = schema.numeric
        self._cat_names = schema.categorical
        cap = window_size
        self._num = np.full((cap, len(self._num_names)), np.nan)
        self._cat = np.full((cap, len(self._cat_names)), -1, dtype=np.int64)
        self._labels = np.zeros(cap)
        self._seq = np.full(cap, -1, dtype=np.int64)
        self._count = 0
        self._next_seq = 0
        self._tokens: list[dict] = [dict() for _ in self._cat_names]
        self._mins = np.full(len(self._num_names), np.nan)
        self._maxs = np.full(len(self._num_names), np.nan)

    def __len__(self) -> int:
        return self._count

    def _token_id(self, col: int, value, *, intern: bool) -> int:
        if value is None:
            return -1
        table = self._tokens[col]
        tid = table.get(value)
        if tid is None:
            if not intern:
                return -2  # unseen query token: differs from every stored one
            tid = len(table)
            table[value] = tid
        return tid

    def insert(self, features: FeatureVector, label: float) -> None:
        """Append an example, evicting the oldest once the window is full."""
        label = float(label)
        if not math.isfinite(label) or label < 0:
            raise ValueError("label must be finite and non-negative")
        pos = self._next_seq % self.window_size
        evicting = self._count == self.window_size
        old_row = self._num[pos].copy() if evicting else None

        for j, name in enumerate(self._num_names):
            value = features.get(name)
            self._num[pos, j] = np.nan if value is None else float(value)
        for j, name in enumerate(self._cat_names):
            self._cat[pos, j] = self._token_id(j, features.get(name), intern=True)
        self._labels[pos] = label
        self._seq[pos] = self._next_seq
        self._next_seq += 1
        self._count = min(self._count + 1, self.window_size)
        self._refresh_ranges(pos, old_row)

    def _refresh_ranges(self, pos: int, old_row: np.ndarray | None) -> None:
        new_row = self._num[pos]
        for j in range(len(self._num_names)):
            new = new_row[j]
            stale = old_row is not None and not np.isnan(old_row[j]) and (
                old_row[j] == self._mins[j] or old_row[j] == self._maxs[j]
            )
            if stale:
                col = self._num[: self._count, j]
                finite = col[~np.isnan(col)]
                if finite.size:
                    self._mins[j] = finite.min()
                    self._maxs[j] = finite.max()
                else:
                    self._mins[j] = np.nan
                    self._maxs[j] = np.nan
            elif not np.isnan(new):
                if np.isnan(self._mins[j]) or new < self._mins[j]:
                    self._mins[j] = new
                if np.isnan(self._maxs[j]) or new > self._maxs[j]:
                    self._maxs[j] = new

    @property
    def normalization(self) -> NormalizationTable:
        spans = {}
        for j, name in enumerate(self._num_names):
            if not np.isnan(self._mins[j]):
                spans[name] = (float(self._mins[j]), float(self._maxs[j]))
        return NormalizationTable(spans)

    def _weight_vectors(self, params: EstimatorParams) -> tuple[np.ndarray, np.ndarray]:
        wn = np.array([params.feature_weights.get(n, 0.0) for n in self._num_names])
        wc = np.array([params.feature_weights.get(n, 0.0) for n in self._cat_names])
        return wn, wc

    def distances(self, query: FeatureVector, params: EstimatorParams) -> np.ndarray:
        """Weighted mixed distance from the query to every stored example.

        Dimensions with a missing value on either side, a zero observed
        range, or a zero weight contribute nothing (pairwise deletion).
        """
        n = self._count
        d2 = np.zeros(n)
        wn, wc = self._weight_vectors(params)
        for j, name in enumerate(self._num_names):
            w = wn[j]
            value = query.get(name)
            if w == 0.0 or value is None:
                continue
            rng = self._maxs[j] - self._mins[j]
            if not rng > 0:
                continue
            diff = (self._num[:n, j] - float(value)) / rng
            contrib = np.square(w * diff)
            d2 += np.nan_to_num(contrib, nan=0.0)
        for j, name in enumerate(self._cat_names):
            w = wc[j]
            value = query.get(name)
            if w == 0.0 or value is None:
                continue
            tid = self._token_id(j, value, intern=False)
            col = self._cat[:n, j]
            unequal = (col != tid) & (col != -1)
            d2 += (w * w) * unequal
        return np.sqrt(d2)

    def _select_neighbors(self, d: np.ndarray, k: int) -> np.ndarray:
        """Indices of the k nearest rows; ties prefer the most recent insert."""
        n = d.shape[0]
        seq = self._seq[:n]
        if k < n:
            smallest = np.argpartition(d, k - 1)[:k]
            cand = np.flatnonzero(d <= d[smallest].max())
        else:
            cand = np.arange(n)
        order = np.lexsort((-seq[cand], d[cand]))
        return cand[order[:k]]

    def predict(self, query: FeatureVector, params: EstimatorParams) -> Prediction:
        """Kernel-weighted average of the k nearest labels plus its spread."""
        if self._count == 0:
            raise EmptyKnowledgeBaseError("no training data")
        k = min(params.k, self._count)
        d = self.distances(query, params)
        idx = self._select_neighbors(d, k)
        labels = self._labels[idx]
        ids = tuple(int(s) for s in self._seq[idx])
        if labels.min() == labels.max():
            # equal labels: the average is exact and the spread is zero
            return Prediction(float(labels[0]), 0.0, k, ids)
        v = stable_weights(d[idx], params.omega)
        estimate = float(np.dot(v, labels))
        return Prediction(estimate, weighted_variance(v, labels, estimate), k, ids)

    # -- checkpointing ----------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Line-delimited checkpoint: schema header, then one example per line."""
        order = np.argsort(self._seq[: self._count], kind="stable")
        rev_tokens = [
            {tid: tok for tok, tid in table.items()} for table in self._tokens
        ]
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(
                json.dumps(
                    {
                        "format": "knowledge-base-v1",
                        "window_size": self.window_size,
                        "active": list(self.schema.active),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            for row in order:
                values: dict = {}
                for j, name in enumerate(self._num_names):
                    v = self._num[row, j]
                    values[name] = None if np.isnan(v) else float(v)
                for j, name in enumerate(self._cat_names):
                    tid = int(self._cat[row, j])
                    values[name] = None if tid < 0 else rev_tokens[j][tid]
                fp.write(
                    json.dumps({"f": values, "label": float(self._labels[row])})
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        with open(path, "r", encoding="utf-8") as fp:
            meta = json.loads(fp.readline())
            if meta.get("format") != "knowledge-base-v1":
                raise ValueError("not a knowledge-base checkpoint")
            kb = cls(FeatureSchema(tuple(meta["active"])), int(meta["window_size"]))
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                kb.insert(FeatureVector(entry["f"]), float(entry["label"]))
        return kb


def warm_knowledge_base(
    schema: FeatureSchema,
    window_size: int,
    examples: Iterable[tuple[FeatureVector, float]],
) -> KnowledgeBase:
    """Build a knowledge base from (features, label) pairs in insertion order."""
    kb = KnowledgeBase(schema, window_size)
    for features, label in examples:
        kb.insert(features, label)
    return kb
