"""Synthetic workload generation.

Produces an SWF trace with diurnal/weekly submission rhythms, background
jobs from user-specific templates, and campaign bursts where a single user
floods the queue with one job shape. Waits come from replaying the generated
arrivals through the conservative-backfilling simulator, so the trace
behaves like a log scraped from a real backfilling cluster. Requested times
are realistically padded (often severalfold), which keeps scheduler
promises loose and wait tails hard to predict, and optional full-machine
maintenance jobs are simulated but dropped from the written trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backfill import simulate
from .swf import JobRecord, JobStatus, TraceHeader, swf_line

# Monday 2005-06-06 00:00:00 UTC
_DEFAULT_EPOCH = 1118016000


@dataclass(frozen=True)
class SynthConfig:
    jobs: int = 20000
    total_procs: int = 128
    users: int = 24
    queues: int = 3
    target_utilization: float = 0.68
    campaign_fraction: float = 0.35
    campaign_mean_size: int = 24
    campaign_run_range: tuple[float, float] = (1800.0, 30000.0)
    mega_campaigns: int = 3
    mega_size_range: tuple[int, int] = (80, 250)
    hold_prob: float = 0.3
    hold_log_mean: float = 7.5
    hold_log_sigma: float = 1.3
    drains: int = 3
    drain_hours: tuple[float, float] = (3.0, 8.0)
    unix_start_time: int = _DEFAULT_EPOCH
    source_name: str = "synthetic-bursty"


def _hourly_rate(abs_seconds: int) -> float:
    second_of_day = abs_seconds % 86400
    weekday = (abs_seconds // 86400 + 3) % 7
    rate = 3.0 if 8 * 3600 <= second_of_day < 18 * 3600 else 0.55
    if weekday >= 5:
        rate *= 0.3
    return rate


def _sample_times(rng: np.random.Generator, n: int, span: float, epoch: int) -> np.ndarray:
    """Arrival instants over [0, span) following the diurnal/weekly rhythm."""
    hours = int(np.ceil(span / 3600)) + 1
    weights = np.array([_hourly_rate(epoch + h * 3600) for h in range(hours)], dtype=float)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    slots = np.searchsorted(cdf, rng.random(n))
    times = (slots + rng.random(n)) * 3600.0
    return np.minimum(times, span - 1)


def _request_factor(rng: np.random.Generator) -> float:
    # most users pad their walltime request severalfold
    if rng.random() < 0.4:
        return float(rng.uniform(1.1, 2.0))
    return float(rng.uniform(2.0, 10.0))


def generate_trace(seed: int, cfg: SynthConfig = SynthConfig()) -> tuple[TraceHeader, list[JobRecord]]:
    """Deterministic synthetic trace: jobs sorted by submit time, waits
    produced by the backfilling simulator itself."""
    rng = np.random.default_rng(seed)

    user_weights = 1.0 / np.power(np.arange(1, cfg.users + 1), 1.1)
    user_weights /= user_weights.sum()
    background_procs = np.array([1, 1, 1, 2, 2, 4, 8])
    campaign_procs = np.array([4, 8, 8, 16, 16, 32, 64])

    templates = []
    for _ in range(cfg.users):
        user_templates = []
        for _ in range(int(rng.integers(1, 4))):
            user_templates.append(
                {
                    "procs": int(background_procs[rng.integers(0, len(background_procs))]),
                    "log_run": float(rng.uniform(np.log(300), np.log(20000))),
                    "spread": float(rng.uniform(0.25, 0.8)),
                    "request_factor": _request_factor(rng),
                    "queue": int(rng.integers(0, cfg.queues)),
                }
            )
        templates.append(user_templates)

    def job_shape(template) -> tuple[int, int, int]:
        run = int(np.exp(template["log_run"] + rng.normal(0.0, template["spread"])))
        run = max(30, min(run, 172800))
        requested = int(
            np.ceil(run * template["request_factor"] * rng.uniform(0.9, 1.1) / 900) * 900
        )
        return template["procs"], run, max(900, min(requested, 2 * 172800))

    n_campaign = int(cfg.jobs * cfg.campaign_fraction)
    n_background = cfg.jobs - n_campaign

    background = []
    for user in rng.choice(cfg.users, size=n_background, p=user_weights):
        template = templates[user][int(rng.integers(0, len(templates[user])))]
        background.append((int(user), template, *job_shape(template)))

    campaigns = []
    remaining = n_campaign
    # a few mega-campaigns: one user dumping a parameter sweep large enough
    # to back the machine up for days
    for _ in range(cfg.mega_campaigns):
        if remaining <= 0:
            break
        size = min(int(rng.integers(*cfg.mega_size_range)), remaining)
        user = int(rng.choice(cfg.users, p=user_weights))
        template = {
            "procs": int(rng.choice((32, 64))),
            "log_run": float(rng.uniform(np.log(3600), np.log(14400))),
            "spread": float(rng.uniform(0.1, 0.3)),
            "request_factor": _request_factor(rng),
            "queue": int(rng.integers(0, cfg.queues)),
        }
        campaigns.append((user, template, [job_shape(template) for _ in range(size)]))
        remaining -= size
    while remaining > 0:
        size = min(1 + int(rng.geometric(1.0 / cfg.campaign_mean_size)), remaining)
        user = int(rng.choice(cfg.users, p=user_weights))
        template = {
            "procs": int(campaign_procs[rng.integers(0, len(campaign_procs))]),
            "log_run": float(
                rng.uniform(np.log(cfg.campaign_run_range[0]), np.log(cfg.campaign_run_range[1]))
            ),
            "spread": float(rng.uniform(0.15, 0.4)),
            "request_factor": _request_factor(rng),
            "queue": int(rng.integers(0, cfg.queues)),
        }
        campaigns.append((user, template, [job_shape(template) for _ in range(size)]))
        remaining -= size

    total_work = sum(p * r for _, _, p, r, _ in background)
    total_work += sum(p * r for _, _, shapes in campaigns for p, r, _ in shapes)
    span = total_work / (cfg.total_procs * cfg.target_utilization)

    entries = []  # (submit, user, procs, run, requested, queue)
    for when, (user, template, procs, run, requested) in zip(
        _sample_times(rng, n_background, span, cfg.unix_start_time), background
    ):
        entries.append((int(when), user, procs, run, requested, template["queue"]))
    for when, (user, template, shapes) in zip(
        _sample_times(rng, len(campaigns), span * 0.97, cfg.unix_start_time), campaigns
    ):
        t = float(when)
        for procs, run, requested in shapes:
            entries.append((int(t), user, procs, run, requested, template["queue"]))
            t += float(rng.exponential(90.0))
    entries.sort(key=lambda e: e[0])

    # invisible holds (user holds, dependencies, staging): the job reaches
    # the scheduler only after the hold, but the log records the submit time,
    # so part of every held job's wait is irreducible noise to any model
    holds = np.where(
        rng.random(len(entries)) < cfg.hold_prob,
        np.exp(rng.normal(cfg.hold_log_mean, cfg.hold_log_sigma, len(entries))).astype(int),
        0,
    )

    records = []
    scheduler_view = []
    for i, (submit, user, procs, run, requested, queue) in enumerate(entries):
        record = JobRecord(
            job_id=i + 1,
            submit_time=submit,
            wait_time=0,
            run_time=run,
            allocated_procs=procs,
            requested_procs=procs,
            requested_time=requested,
            user_id=user + 1,
            group_id=user % 6 + 1,
            queue_id=queue + 1,
            status=JobStatus.COMPLETED,
        )
        records.append(record)
        scheduler_view.append(
            record if holds[i] == 0 else JobRecord(
                job_id=record.job_id,
                submit_time=submit + int(holds[i]),
                wait_time=0,
                run_time=run,
                allocated_procs=procs,
                requested_procs=procs,
                requested_time=requested,
                user_id=record.user_id,
                group_id=record.group_id,
                queue_id=record.queue_id,
                status=record.status,
            )
        )

    # full-machine maintenance jobs: simulated, then dropped from the trace,
    # so their queue disruption stays in the labels but not in the log
    admin = []
    for k in range(cfg.drains):
        duration = int(rng.uniform(*cfg.drain_hours) * 3600)
        when = int(span * (k + 1) / (cfg.drains + 1) + rng.uniform(-0.5, 0.5) * 86400)
        admin.append(
            JobRecord(
                job_id=cfg.jobs + k + 1,
                submit_time=max(0, when),
                wait_time=0,
                run_time=duration,
                allocated_procs=cfg.total_procs,
                requested_procs=cfg.total_procs,
                requested_time=duration,
                user_id=0,
                group_id=0,
                queue_id=0,
                status=JobStatus.COMPLETED,
            )
        )

    sim = simulate(scheduler_view + admin, total_procs=cfg.total_procs)
    final = []
    for i, record in enumerate(records):
        start = sim.actual_starts[i]
        assert start is not None and start >= record.submit_time
        final.append(
            JobRecord(
                job_id=record.job_id,
                submit_time=record.submit_time,
                wait_time=start - record.submit_time,
                run_time=record.run_time,
                allocated_procs=record.allocated_procs,
                requested_procs=record.requested_procs,
                requested_time=record.requested_time,
                user_id=record.user_id,
                group_id=record.group_id,
                queue_id=record.queue_id,
                status=record.status,
            )
        )
    header = TraceHeader(
        unix_start_time=cfg.unix_start_time,
        timezone_offset_seconds=0,
        max_procs=cfg.total_procs,
        source_name=cfg.source_name,
    )
    return header, final


def write_trace(path: str | Path, header: TraceHeader, jobs: Sequence[JobRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        if header.unix_start_time is not None:
            fp.write(f"; UnixStartTime: {header.unix_start_time}\n")
        if header.timezone_offset_seconds is not None:
            fp.write(f"; TimeZone: {header.timezone_offset_seconds}\n")
        if header.max_procs is not None:
            fp.write(f"; MaxProcs: {header.max_procs}\n")
        if header.source_name is not None:
            fp.write(f"; Computer: {header.source_name}\n")
        for record in jobs:
            fp.write(swf_line(record) + "\n")
