"""Discrete-event conservative-backfilling scheduler simulator.

Every job receives a start-time reservation at submission; that reservation
is the job's "promise", an upper bound on when it will start. Smaller jobs
may be placed into earlier holes only when they delay no existing
reservation. Early completions trigger a compression pass that may pull
reservations earlier, never push them later.
"""

from __future__ import annotations

import heapq
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .swf import JobRecord, SWF_FIELD_COUNT, TraceHeader, _coerce, swf_line

AUGMENTED_COLUMNS = (
    "promised_wait",
    "queue_size",
    "queued_work",
    "remaining_work",
    "free_procs",
    "user_jobs",
)


@dataclass(frozen=True)
class Promise:
    job_id: int
    promised_start: int
    promised_wait: int


@dataclass(frozen=True)
class QueueSnapshot:
    """Queue state at a submission instant, before the job's own insertion.

    ``user_jobs`` counts the submitting user's jobs currently in the system
    (waiting or running).
    """

    at_time: int
    queue_size: int
    queued_work: int
    remaining_work: int
    free_procs: int
    user_jobs: int


@dataclass(frozen=True)
class SimEvent:
    time: int
    kind: str  # "start" | "finish"
    job_index: int
    job_id: int


@dataclass(frozen=True)
class SimulationResult:
    total_procs: int
    promises: tuple[Promise | None, ...]
    snapshots: tuple[QueueSnapshot, ...]
    events: tuple[SimEvent, ...]
    actual_starts: tuple[int | None, ...]
    unschedulable: tuple[int, ...]
    missing_requested_time: int
    extended_reservations: int


class ReservationProfile:
    """Free-processor timeline as (time, free) breakpoints.

    Segment ``i`` spans [times[i], times[i+1]) with ``free[i]`` processors
    available; the final segment extends to infinity. All reservations are
    finite, so the final segment always has the full machine free.
    """

    def __init__(self, start_time: int, total_procs: int):
        if total_procs <= 0:
            raise ValueError("total_procs must be positive")
        self.total_procs = total_procs
        self._times: list[int] = [start_time]
        self._free: list[int] = [total_procs]

    def breakpoints(self) -> list[tuple[int, int]]:
        return list(zip(self._times, self._free))

    def _segment_at(self, t: int) -> int:
        return bisect_right(self._times, t) - 1

    def _ensure_breakpoint(self, t: int) -> int:
        i = self._segment_at(t)
        if self._times[i] == t:
            return i
        self._times.insert(i + 1, t)
        self._free.insert(i + 1, self._free[i])
        return i + 1

    def earliest_start(self, not_before: int, procs: int, duration: int) -> int:
        """Earliest t >= not_before with `procs` free throughout [t, t+duration)."""
        if procs > self.total_procs:
            raise ValueError("request exceeds machine size")
        if duration <= 0 or procs <= 0:
            return max(not_before, self._times[0])
        times, free = self._times, self._free
        n = len(times)
        j = max(self._segment_at(not_before), 0)
        anchor = max(not_before, times[0])
        while True:
            if free[j] < procs:
                j += 1
                anchor = times[j]
                continue
            end = anchor + duration
            m = j + 1
            blocked = False
            while m < n and times[m] < end:
                if free[m] < procs:
                    blocked = True
                    break
                m += 1
            if not blocked:
                return anchor
            j = m  # restart at the blocking segment

    def reserve(self, start: int, procs: int, duration: int) -> None:
        if duration <= 0 or procs <= 0:
            return
        lo = self._ensure_breakpoint(start)
        hi = self._ensure_breakpoint(start + duration)
        for i in range(lo, hi):
            self._free[i] -= procs
            if self._free[i] < 0:
                raise RuntimeError("reservation overbooks the profile")
        self._merge(max(lo - 1, 0), min(hi + 1, len(self._times) - 1))

    def release(self, start: int, procs: int, duration: int) -> None:
        """Return capacity over [start, start+duration), e.g. an early finish."""
        if duration <= 0 or procs <= 0:
            return
        lo = self._ensure_breakpoint(start)
        hi = self._ensure_breakpoint(start + duration)
        for i in range(lo, hi):
            self._free[i] += procs
            if self._free[i] > self.total_procs:
                raise RuntimeError("release exceeds machine size")
        self._merge(max(lo - 1, 0), min(hi + 1, len(self._times) - 1))

    def _merge(self, lo: int, hi: int) -> None:
        i = hi
        while i > lo:
            if self._free[i] == self._free[i - 1]:
                del self._times[i]
                del self._free[i]
            i -= 1

    def trim(self, now: int) -> None:
        """Drop breakpoints strictly before the segment containing ``now``."""
        i = self._segment_at(now)
        if i > 0:
            del self._times[:i]
            del self._free[:i]


@dataclass
class _SimJob:
    index: int
    record: JobRecord
    procs: int
    reserve_dur: int
    run_dur: int
    reserved_start: int = -1
    profiled_end: int = -1


def _effective_numbers(record: JobRecord) -> tuple[int | None, int, int, bool, bool]:
    """Processor count and (reservation, execution) durations for a record.

    The reservation length is the requested time, falling back to the actual
    runtime when the request is unknown, and stretched to cover the runtime
    when the log shows a job running past its request (a late release would
    break every later promise).
    """
    procs = record.requested_procs
    if procs is None or procs <= 0:
        procs = record.allocated_procs
    if procs is None or procs <= 0:
        return None, 0, 0, False, False
    run = record.run_time if record.run_time is not None and record.run_time > 0 else 0
    run = int(run)
    substituted = False
    extended = False
    if record.requested_time is not None and record.requested_time > 0:
        reserve = int(record.requested_time)
        if run > reserve:
            reserve = run
            extended = True
    else:
        reserve = run
        substituted = True
    return int(procs), reserve, run, substituted, extended


def simulate(
    jobs: Sequence[JobRecord],
    total_procs: int | None = None,
    header: TraceHeader | None = None,
) -> SimulationResult:
    """Replay a submit-ordered job stream under conservative backfilling.

    The machine size comes from ``total_procs`` when given, else from the
    trace header, else from the largest processor request seen. Jobs whose
    request exceeds the machine are marked unschedulable and skipped; the
    simulation continues.
    """
    ordered = sorted(range(len(jobs)), key=lambda i: (jobs[i].submit_time, jobs[i].job_id))
    sims: list[_SimJob | None] = [None] * len(jobs)
    missing_req = 0
    extended_count = 0
    max_request = 0
    for i, record in enumerate(jobs):
        procs, reserve, run, substituted, extended = _effective_numbers(record)
        if procs is not None:
            sims[i] = _SimJob(i, record, procs, reserve, run)
            max_request = max(max_request, procs)
            missing_req += substituted
            extended_count += extended

    if total_procs is None and header is not None:
        total_procs = header.max_procs
    if total_procs is None:
        total_procs = max(max_request, 1)

    promises: list[Promise | None] = [None] * len(jobs)
    snapshots: list[QueueSnapshot | None] = [None] * len(jobs)
    starts: list[int | None] = [None] * len(jobs)
    events: list[SimEvent] = []
    unschedulable: list[int] = []

    start_time = int(jobs[ordered[0]].submit_time) if jobs else 0
    profile = ReservationProfile(start_time, total_procs)
    running: dict[int, _SimJob] = {}
    waiting: dict[int, _SimJob] = {}
    completions: list[tuple[int, int]] = []  # (finish_time, index)
    used_procs = 0

    def waiting_order(job: _SimJob) -> tuple:
        return (job.reserved_start, job.record.submit_time, job.record.job_id)

    def recompress(now: int) -> None:
        nonlocal profile
        profile = ReservationProfile(now, total_procs)
        for job in running.values():
            profile.reserve(now, job.procs, job.profiled_end - now)
        for job in sorted(waiting.values(), key=waiting_order):
            new_start = profile.earliest_start(now, job.procs, job.reserve_dur)
            if new_start > job.reserved_start:
                raise RuntimeError("compression moved a reservation later")
            job.reserved_start = new_start
            profile.reserve(new_start, job.procs, job.reserve_dur)

    def settle(now: int) -> None:
        nonlocal used_procs
        while True:
            early: list[_SimJob] = []
            while completions and completions[0][0] <= now:
                finish, idx = heapq.heappop(completions)
                job = running.pop(idx)
                used_procs -= job.procs
                if finish < job.profiled_end:
                    early.append(job)
                events.append(SimEvent(finish, "finish", idx, job.record.job_id))
            if early and waiting:
                recompress(now)
            elif early:
                # nothing queued: just hand the unused reservation tail back
                for job in early:
                    profile.release(now, job.procs, job.profiled_end - now)
            due = sorted(
                (job for job in waiting.values() if job.reserved_start <= now),
                key=waiting_order,
            )
            if not due and not (completions and completions[0][0] <= now):
                return
            for job in due:
                del waiting[job.index]
                running[job.index] = job
                used_procs += job.procs
                starts[job.index] = now
                job.profiled_end = now + job.reserve_dur
                events.append(SimEvent(now, "start", job.index, job.record.job_id))
                heapq.heappush(completions, (now + job.run_dur, job.index))

    def snapshot(record: JobRecord, now: int) -> QueueSnapshot:
        queued = sum(j.reserve_dur * j.procs for j in waiting.values())
        remaining = sum(max(0, j.profiled_end - now) * j.procs for j in running.values())
        in_system = list(waiting.values()) + list(running.values())
        user_jobs = sum(1 for j in in_system if j.record.user_id == record.user_id)
        return QueueSnapshot(
            at_time=now,
            queue_size=len(waiting),
            queued_work=queued,
            remaining_work=remaining,
            free_procs=total_procs - used_procs,
            user_jobs=user_jobs,
        )

    p = 0
    while p < len(ordered) or running or waiting:
        horizon: list[int] = []
        if p < len(ordered):
            horizon.append(int(jobs[ordered[p]].submit_time))
        if completions:
            horizon.append(completions[0][0])
        if waiting:
            horizon.append(min(j.reserved_start for j in waiting.values()))
        if not horizon:
            break
        now = min(horizon)
        settle(now)
        while p < len(ordered) and int(jobs[ordered[p]].submit_time) == now:
            idx = ordered[p]
            record = jobs[idx]
            p += 1
            snapshots[idx] = snapshot(record, now)
            job = sims[idx]
            if job is None or job.procs > total_procs:
                unschedulable.append(idx)
                continue
            reserved = profile.earliest_start(now, job.procs, job.reserve_dur)
            profile.reserve(reserved, job.procs, job.reserve_dur)
            job.reserved_start = reserved
            waiting[idx] = job
            promises[idx] = Promise(record.job_id, reserved, reserved - now)
            settle(now)
        profile.trim(now)

    assert all(s is not None for s in snapshots)
    return SimulationResult(
        total_procs=total_procs,
        promises=tuple(promises),
        snapshots=tuple(snapshots),  # aligned with the input job order
        events=tuple(events),
        actual_starts=tuple(starts),
        unschedulable=tuple(unschedulable),
        missing_requested_time=missing_req,
        extended_reservations=extended_count,
    )


def snapshot_work_terms(
    waiting: Iterable[tuple[int, int]],
    running: Iterable[tuple[int, int, int]],
    now: int,
) -> tuple[int, int]:
    """Work totals at a submission instant.

    ``waiting`` holds (procs, reserved_duration) pairs; ``running`` holds
    (procs, start, reserved_duration) triples. Queued work counts the full
    reservation of every waiting job; remaining work counts what is left of
    each running job's reservation at ``now``. Both are processor-seconds.
    """
    queued = sum(procs * dur for procs, dur in waiting)
    remaining = sum(
        procs * max(0, (start + dur) - now) for procs, start, dur in running
    )
    return queued, remaining


@dataclass(frozen=True)
class AugmentedJob:
    """An SWF record plus the scheduler-derived columns for its submission."""

    record: JobRecord
    promised_wait: int | None
    queue_size: int
    queued_work: int
    remaining_work: int
    free_procs: int
    user_jobs: int

    @property
    def snapshot(self) -> QueueSnapshot:
        return QueueSnapshot(
            at_time=int(self.record.submit_time),
            queue_size=self.queue_size,
            queued_work=self.queued_work,
            remaining_work=self.remaining_work,
            free_procs=self.free_procs,
            user_jobs=self.user_jobs,
        )


def augmented_jobs(jobs: Sequence[JobRecord], sim: SimulationResult) -> list[AugmentedJob]:
    ordered = sorted(range(len(jobs)), key=lambda i: (jobs[i].submit_time, jobs[i].job_id))
    out = []
    for idx in ordered:
        snap = sim.snapshots[idx]
        promise = sim.promises[idx]
        out.append(
            AugmentedJob(
                record=jobs[idx],
                promised_wait=None if promise is None else promise.promised_wait,
                queue_size=snap.queue_size,
                queued_work=snap.queued_work,
                remaining_work=snap.remaining_work,
                free_procs=snap.free_procs,
                user_jobs=snap.user_jobs,
            )
        )
    return out


def write_augmented(
    path: str | Path,
    header: TraceHeader,
    jobs: Sequence[AugmentedJob],
    total_procs: int,
) -> None:
    """Write the input SWF columns plus the appended scheduler columns."""
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        if header.unix_start_time is not None:
            fp.write(f"; UnixStartTime: {header.unix_start_time}\n")
        if header.timezone_offset_seconds is not None:
            fp.write(f"; TimeZone: {header.timezone_offset_seconds}\n")
        fp.write(f"; MaxProcs: {total_procs}\n")
        if header.source_name is not None:
            fp.write(f"; Computer: {header.source_name}\n")
        fp.write("; Augmented: " + " ".join(AUGMENTED_COLUMNS) + "\n")
        for aug in jobs:
            extra = [
                -1 if aug.promised_wait is None else aug.promised_wait,
                aug.queue_size,
                aug.queued_work,
                aug.remaining_work,
                aug.free_procs,
                aug.user_jobs,
            ]
            fp.write(swf_line(aug.record) + " " + " ".join(str(v) for v in extra) + "\n")


def read_augmented(path: str | Path) -> tuple[TraceHeader, list[AugmentedJob], tuple]:
    """Parse an augmented trace back into records plus scheduler columns."""
    from .swf import _build_header, _parse_data_line, _parse_header_line

    width = SWF_FIELD_COUNT + len(AUGMENTED_COLUMNS)
    header_pairs: list[tuple[str, str]] = []
    out: list[AugmentedJob] = []
    skipped: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as fp:
        for lineno, raw in enumerate(fp, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith(";"):
                pair = _parse_header_line(line)
                if pair is not None:
                    header_pairs.append(pair)
                continue
            tokens = line.split()
            if len(tokens) != width:
                skipped.append((lineno, f"expected {width} fields, got {len(tokens)}"))
                continue
            try:
                record = _parse_data_line(tokens[:SWF_FIELD_COUNT])
                extra = [int(_coerce(float(tok))) for tok in tokens[SWF_FIELD_COUNT:]]
            except ValueError as exc:
                skipped.append((lineno, str(exc)))
                continue
            out.append(
                AugmentedJob(
                    record=record,
                    promised_wait=None if extra[0] == -1 else extra[0],
                    queue_size=extra[1],
                    queued_work=extra[2],
                    remaining_work=extra[3],
                    free_procs=extra[4],
                    user_jobs=extra[5],
                )
            )
    return _build_header(header_pairs), out, tuple(skipped)
