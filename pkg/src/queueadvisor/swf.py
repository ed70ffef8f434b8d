"""Standard Workload Format (SWF) ingestion.

Parses archive-style workload logs into job records, captures header
metadata, and slices job streams into the study partitions
(discard / tuning / training / test).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence, TextIO

SWF_FIELD_COUNT = 18

Number = int | float


class SwfField(IntEnum):
    JOB_ID = 0
    SUBMIT_TIME = 1
    WAIT_TIME = 2
    RUN_TIME = 3
    ALLOCATED_PROCS = 4
    AVG_CPU_TIME = 5
    USED_MEMORY = 6
    REQUESTED_PROCS = 7
    REQUESTED_TIME = 8
    REQUESTED_MEMORY = 9
    STATUS = 10
    USER_ID = 11
    GROUP_ID = 12
    EXECUTABLE = 13
    QUEUE_ID = 14
    PARTITION_ID = 15
    PRECEDING_JOB = 16
    THINK_TIME = 17


class JobStatus(Enum):
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELLED = "cancelled"
    UNKNOWN = "unknown"


_STATUS_FROM_CODE = {1: JobStatus.COMPLETED, 0: JobStatus.FAILED, 5: JobStatus.CANCELLED}
_CODE_FROM_STATUS = {JobStatus.COMPLETED: 1, JobStatus.FAILED: 0, JobStatus.CANCELLED: 5}


@dataclass(frozen=True)
class TraceHeader:
    """Metadata captured from ';'-prefixed header lines.

    Absent values stay ``None``; they are never defaulted to 0.
    """

    unix_start_time: int | None = None
    timezone_offset_seconds: int | None = None
    max_procs: int | None = None
    source_name: str | None = None
    extras: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class JobRecord:
    """One SWF data line. ``None`` marks the archive's -1 "unknown" value."""

    job_id: int
    submit_time: Number
    wait_time: Number | None
    run_time: Number | None
    allocated_procs: int | None
    requested_procs: int | None
    requested_time: Number | None
    user_id: int | None
    group_id: int | None
    queue_id: int | None
    status: JobStatus


@dataclass(frozen=True)
class ParsedTrace:
    header: TraceHeader
    jobs: tuple[JobRecord, ...]
    skipped: tuple[tuple[int, str], ...]

    @property
    def skip_count(self) -> int:
        return len(self.skipped)


class InsufficientRecordsError(ValueError):
    """Raised when a trace is too short for the requested partitions."""


def _coerce(value: float) -> Number:
    return int(value) if float(value).is_integer() else value


def _field(values: list[Number], field: SwfField) -> Number | None:
    v = values[field]
    return None if v == -1 else v


def _int_field(values: list[Number], field: SwfField) -> int | None:
    v = _field(values, field)
    return None if v is None else int(v)


def _parse_data_line(tokens: list[str]) -> JobRecord:
    if len(tokens) != SWF_FIELD_COUNT:
        raise ValueError(f"expected {SWF_FIELD_COUNT} fields, got {len(tokens)}")
    values = [_coerce(float(tok)) for tok in tokens]
    status_code = values[SwfField.STATUS]
    job_id = values[SwfField.JOB_ID]
    if job_id is None or int(job_id) <= 0:
        raise ValueError("job id must be a positive integer")
    return JobRecord(
        job_id=int(job_id),
        submit_time=values[SwfField.SUBMIT_TIME],
        wait_time=_field(values, SwfField.WAIT_TIME),
        run_time=_field(values, SwfField.RUN_TIME),
        allocated_procs=_int_field(values, SwfField.ALLOCATED_PROCS),
        requested_procs=_int_field(values, SwfField.REQUESTED_PROCS),
        requested_time=_field(values, SwfField.REQUESTED_TIME),
        user_id=_int_field(values, SwfField.USER_ID),
        group_id=_int_field(values, SwfField.GROUP_ID),
        queue_id=_int_field(values, SwfField.QUEUE_ID),
        status=_STATUS_FROM_CODE.get(int(status_code), JobStatus.UNKNOWN),
    )


def _parse_header_line(line: str) -> tuple[str, str] | None:
    body = line.lstrip(";").strip()
    if ":" not in body:
        return None
    key, _, value = body.partition(":")
    key = key.strip()
    value = value.strip()
    if not key:
        return None
    return key, value


def _build_header(pairs: list[tuple[str, str]]) -> TraceHeader:
    unix_start = None
    tz = None
    max_procs = None
    source = None
    extras: list[tuple[str, str]] = []
    for key, value in pairs:
        lowered = key.lower()
        try:
            if lowered == "unixstarttime":
                parsed = int(float(value))
                if parsed >= 0:
                    unix_start = parsed
                    continue
            elif lowered == "timezone":
                tz = int(float(value))
                continue
            elif lowered == "maxprocs":
                parsed = int(float(value))
                if parsed > 0:
                    max_procs = parsed
                    continue
            elif lowered in ("computer", "installation"):
                if source is None:
                    source = value
                continue
        except ValueError:
            pass
        extras.append((key, value))
    return TraceHeader(
        unix_start_time=unix_start,
        timezone_offset_seconds=tz,
        max_procs=max_procs,
        source_name=source,
        extras=tuple(extras),
    )


def _iter_lines(source: str | Path | TextIO | Iterable[str]) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", errors="replace") as fp:
            yield from fp
    else:
        yield from source


def parse_swf(source: str | Path | TextIO | Iterable[str]) -> ParsedTrace:
    """Parse an SWF stream into a header and job records.

    Malformed data lines (wrong field count, non-numeric token) are skipped
    and reported with their line number; they never abort the parse.
    Records come back sorted by (submit_time, job_id).
    """
    header_pairs: list[tuple[str, str]] = []
    jobs: list[JobRecord] = []
    skipped: list[tuple[int, str]] = []
    for lineno, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(";"):
            pair = _parse_header_line(line)
            if pair is not None:
                header_pairs.append(pair)
            continue
        try:
            jobs.append(_parse_data_line(line.split()))
        except ValueError as exc:
            skipped.append((lineno, str(exc)))
    jobs.sort(key=lambda j: (j.submit_time, j.job_id))
    return ParsedTrace(_build_header(header_pairs), tuple(jobs), tuple(skipped))


def _fmt(value: Number | None) -> str:
    if value is None:
        return "-1"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return repr(value) if isinstance(value, float) else str(value)


def swf_line(record: JobRecord) -> str:
    """Serialize a record back to an SWF data line; unknown fields become -1."""
    fields = ["-1"] * SWF_FIELD_COUNT
    fields[SwfField.JOB_ID] = _fmt(record.job_id)
    fields[SwfField.SUBMIT_TIME] = _fmt(record.submit_time)
    fields[SwfField.WAIT_TIME] = _fmt(record.wait_time)
    fields[SwfField.RUN_TIME] = _fmt(record.run_time)
    fields[SwfField.ALLOCATED_PROCS] = _fmt(record.allocated_procs)
    fields[SwfField.REQUESTED_PROCS] = _fmt(record.requested_procs)
    fields[SwfField.REQUESTED_TIME] = _fmt(record.requested_time)
    fields[SwfField.STATUS] = _fmt(_CODE_FROM_STATUS.get(record.status))
    fields[SwfField.USER_ID] = _fmt(record.user_id)
    fields[SwfField.GROUP_ID] = _fmt(record.group_id)
    fields[SwfField.QUEUE_ID] = _fmt(record.queue_id)
    return " ".join(fields)


def is_admissible(record: JobRecord) -> bool:
    """Whether a record may enter training/evaluation label sets.

    Requires a positive runtime, a positive processor request, a known
    non-negative wait, and a completed or failed status (cancelled jobs
    never ran to a meaningful label).
    """
    return (
        record.run_time is not None
        and record.run_time > 0
        and record.requested_procs is not None
        and record.requested_procs > 0
        and record.wait_time is not None
        and record.wait_time >= 0
        and record.status in (JobStatus.COMPLETED, JobStatus.FAILED)
    )


@dataclass(frozen=True)
class StudyPartitions:
    """Disjoint submit-ordered slices of a job stream."""

    discard: tuple
    tune: tuple
    train: tuple
    test: tuple
    excluded: int

    def named(self) -> tuple[tuple[str, tuple], ...]:
        return (
            ("discard", self.discard),
            ("tune", self.tune),
            ("train", self.train),
            ("test", self.test),
        )


def partition_for_study(
    items: Sequence,
    *,
    discard: int,
    tune: int,
    test: int,
    train: int | None = None,
    record_of: Callable = lambda item: item,
) -> StudyPartitions:
    """Slice a submit-ordered stream into [discard | tune | train | test].

    Records failing :func:`is_admissible` are dropped (and counted) before
    slicing, so every partition holds exactly the requested number of usable
    records. ``train=None`` takes everything between the tuning and test
    slices.
    """
    for name, count in (("discard", discard), ("tune", tune), ("test", test)):
        if count < 0:
            raise ValueError(f"{name} count must be non-negative")
    if train is not None and train < 0:
        raise ValueError("train count must be non-negative")

    usable = [item for item in items if is_admissible(record_of(item))]
    excluded = len(items) - len(usable)
    if train is None:
        train = max(0, len(usable) - discard - tune - test)
    needed = discard + tune + train + test
    if needed > len(usable):
        raise InsufficientRecordsError(
            f"insufficient records: need {needed}, have {len(usable)} usable "
            f"({excluded} excluded)"
        )
    a, b, c = discard, discard + tune, discard + tune + train
    return StudyPartitions(
        discard=tuple(usable[:a]),
        tune=tuple(usable[a:b]),
        train=tuple(usable[b:c]),
        test=tuple(usable[c : c + test]),
        excluded=excluded,
    )


def write_partition_manifest(
    partitions: StudyPartitions,
    path: str | Path,
    *,
    record_of: Callable = lambda item: item,
) -> None:
    """One JSON record per line: partition name, position, job id, submit time."""
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for name, part in partitions.named():
            for pos, item in enumerate(part):
                record = record_of(item)
                fp.write(
                    json.dumps(
                        {
                            "partition": name,
                            "position": pos,
                            "job_id": record.job_id,
                            "submit_time": record.submit_time,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
