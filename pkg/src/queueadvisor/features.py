"""Feature extraction for jobs at their submission instant.

The full schema has 14 features: three categorical identifiers, the
submission-time fields of the log, the queue-state measurements taken by the
simulator, the calendar features, the scheduler promise, and the submitting
user's in-system job count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .backfill import AugmentedJob, QueueSnapshot
from .swf import JobRecord, TraceHeader

SECONDS_PER_DAY = 86400
_EPOCH_WEEKDAY = 3  # 1970-01-01 was a Thursday; weekday 0 is Monday


class FeatureKind(Enum):
    CATEGORICAL = "categorical"
    NUMERIC = "numeric"


FULL_FEATURE_KINDS: tuple[tuple[str, FeatureKind], ...] = (
    ("user_id", FeatureKind.CATEGORICAL),
    ("group_id", FeatureKind.CATEGORICAL),
    ("queue_id", FeatureKind.CATEGORICAL),
    ("submit_time", FeatureKind.NUMERIC),
    ("requested_time", FeatureKind.NUMERIC),
    ("requested_procs", FeatureKind.NUMERIC),
    ("queue_size", FeatureKind.NUMERIC),
    ("queued_work", FeatureKind.NUMERIC),
    ("remaining_work", FeatureKind.NUMERIC),
    ("weekday", FeatureKind.NUMERIC),
    ("time_since_midnight", FeatureKind.NUMERIC),
    ("free_procs", FeatureKind.NUMERIC),
    ("promise", FeatureKind.NUMERIC),
    ("user_jobs", FeatureKind.NUMERIC),
)
FULL_FEATURE_NAMES: tuple[str, ...] = tuple(name for name, _ in FULL_FEATURE_KINDS)
_KIND_BY_NAME = dict(FULL_FEATURE_KINDS)
_SNAPSHOT_FEATURES = ("queue_size", "queued_work", "remaining_work", "free_procs", "user_jobs")


class FeatureSourceError(KeyError):
    """An active feature's source (simulation output) is unavailable."""


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list with an on/off mask."""

    active: tuple[str, ...]

    def __post_init__(self):
        if not self.active:
            raise ValueError("schema must activate at least one feature")
        seen = set()
        for name in self.active:
            if name not in _KIND_BY_NAME:
                raise ValueError(f"unknown feature: {name}")
            if name in seen:
                raise ValueError(f"duplicate feature: {name}")
            seen.add(name)

    @classmethod
    def full(cls) -> "FeatureSchema":
        return cls(FULL_FEATURE_NAMES)

    @classmethod
    def without(cls, *names: str) -> "FeatureSchema":
        drop = set(names)
        return cls(tuple(n for n in FULL_FEATURE_NAMES if n not in drop))

    def kind(self, name: str) -> FeatureKind:
        return _KIND_BY_NAME[name]

    @property
    def numeric(self) -> tuple[str, ...]:
        return tuple(n for n in self.active if _KIND_BY_NAME[n] is FeatureKind.NUMERIC)

    @property
    def categorical(self) -> tuple[str, ...]:
        return tuple(n for n in self.active if _KIND_BY_NAME[n] is FeatureKind.CATEGORICAL)


@dataclass(frozen=True)
class FeatureVector:
    """Feature values keyed by name; ``None`` marks an explicitly missing value."""

    values: Mapping[str, float | int | str | None]

    def __post_init__(self):
        for name, value in self.values.items():
            if _KIND_BY_NAME.get(name) is FeatureKind.NUMERIC and value is not None:
                if not math.isfinite(float(value)):
                    raise ValueError(f"non-finite value for feature {name}")

    def get(self, name: str):
        return self.values.get(name)


def time_of_week(
    unix_start_time: int, submit_time: int, timezone_offset: int
) -> tuple[int, int]:
    """(weekday, seconds since midnight) in site-local time; Monday is 0."""
    total = unix_start_time + int(submit_time) + timezone_offset
    weekday = (total // SECONDS_PER_DAY + _EPOCH_WEEKDAY) % 7
    return int(weekday), int(total % SECONDS_PER_DAY)


def extract(
    record: JobRecord,
    snapshot: QueueSnapshot | None,
    promised_wait: int | None,
    header: TraceHeader,
    schema: FeatureSchema,
    *,
    simulated: bool = True,
) -> FeatureVector:
    """Build a job's feature vector at its submission instant.

    ``snapshot`` and ``promised_wait`` must correspond to this job's
    submission. Pass ``simulated=False`` when no scheduler simulation ran;
    requesting a simulator-derived feature then raises
    :class:`FeatureSourceError` naming it.
    """
    if not simulated or snapshot is None:
        for name in schema.active:
            if name in _SNAPSHOT_FEATURES or name == "promise":
                raise FeatureSourceError(name)

    weekday: int | None = None
    midnight: int | None = None
    if header.unix_start_time is not None:
        tz = header.timezone_offset_seconds or 0
        weekday, midnight = time_of_week(header.unix_start_time, record.submit_time, tz)

    sources: dict[str, float | int | str | None] = {
        "user_id": record.user_id,
        "group_id": record.group_id,
        "queue_id": record.queue_id,
        "submit_time": record.submit_time,
        "requested_time": record.requested_time,
        "requested_procs": record.requested_procs,
        "weekday": weekday,
        "time_since_midnight": midnight,
        "promise": promised_wait,
    }
    if snapshot is not None:
        sources.update(
            queue_size=snapshot.queue_size,
            queued_work=snapshot.queued_work,
            remaining_work=snapshot.remaining_work,
            free_procs=snapshot.free_procs,
            user_jobs=snapshot.user_jobs,
        )
    return FeatureVector({name: sources.get(name) for name in schema.active})


def extract_augmented(
    aug: AugmentedJob, header: TraceHeader, schema: FeatureSchema
) -> FeatureVector:
    return extract(aug.record, aug.snapshot, aug.promised_wait, header, schema)


@dataclass(frozen=True)
class NormalizationTable:
    """Observed (min, max) per numeric feature over a knowledge base.

    Distances divide raw differences by ``max - min``; a zero range makes the
    dimension contribute nothing. Query values may normalize outside [0, 1];
    they are deliberately not clamped.
    """

    spans: Mapping[str, tuple[float, float]]

    def range(self, name: str) -> float:
        lo, hi = self.spans.get(name, (0.0, 0.0))
        return hi - lo

    def normalize(self, name: str, value: float) -> float:
        lo, hi = self.spans.get(name, (0.0, 0.0))
        if hi <= lo:
            return 0.0
        return (value - lo) / (hi - lo)


def normalize_numeric(
    vectors: Iterable[FeatureVector] | Sequence[FeatureVector],
    schema: FeatureSchema,
) -> NormalizationTable:
    """Record per-feature min/max over stored examples, skipping missing values."""
    spans: dict[str, tuple[float, float]] = {}
    empty = True
    for fv in vectors:
        empty = False
        for name in schema.numeric:
            value = fv.get(name)
            if value is None:
                continue
            value = float(value)
            if name in spans:
                lo, hi = spans[name]
                spans[name] = (min(lo, value), max(hi, value))
            else:
                spans[name] = (value, value)
    if empty:
        raise ValueError("cannot normalize an empty collection")
    return NormalizationTable(spans)
