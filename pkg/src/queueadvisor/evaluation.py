"""Replay harness: stream test jobs through the estimators and the advisor.

Placement decisions are counterfactual: jobs sent to the cloud stay in the
log, so queue dynamics and every job's actual wait/run times are unchanged.
Wait labels enter the wait knowledge base at a job's actual start; run labels
at its actual finish; never earlier. Saved time compares each cloud placement
against the always-local strategy, whose saved time is identically zero.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

from .advisor import (
    AdvisorPrediction,
    CutoffModel,
    CutoffPoint,
    DegenerateCutoffData,
    Environment,
    Reason,
    Verdict,
    decide,
    fit_cutoff,
)
from .backfill import AugmentedJob
from .cloud import CloudModel, EmpiricalRatioModel
from .estimator import EstimatorParams, KnowledgeBase
from .features import FeatureSchema, extract_augmented
from .swf import TraceHeader

ReplayMode = Literal["with_cutoff", "without_cutoff"]

_INSERT, _PREDICT = 0, 1


@dataclass(frozen=True)
class EstimatorSetup:
    params: EstimatorParams
    schema: FeatureSchema


@dataclass(frozen=True)
class TimelinePrediction:
    job: AugmentedJob
    prediction: AdvisorPrediction


def predict_timeline(
    history: Sequence[AugmentedJob],
    targets: Sequence[AugmentedJob],
    wait: EstimatorSetup,
    run: EstimatorSetup,
    header: TraceHeader,
) -> list[TimelinePrediction]:
    """Predict wait and runtime for each target at its submission instant.

    History jobs only feed the knowledge bases; their labels (and the
    targets' own labels) become available at the true start/finish times, so
    no example is visible before a prediction that precedes it. Events at
    equal timestamps process inserts before predictions, except that a job's
    own labels are only scheduled once its prediction has happened.
    """
    wait_kb = KnowledgeBase(wait.schema, wait.params.window_size)
    run_kb = KnowledgeBase(run.schema, run.params.window_size)

    heap: list[tuple] = []
    counter = 0

    def push(time: float, priority: int, payload) -> None:
        nonlocal counter
        heapq.heappush(heap, (time, priority, counter, payload))
        counter += 1

    def push_labels(job: AugmentedJob) -> None:
        record = job.record
        w_a, r_a = record.wait_time, record.run_time
        if w_a is None or w_a < 0 or r_a is None or r_a < 0:
            raise RuntimeError(
                f"job {record.job_id}: label availability would precede its prediction"
            )
        start = record.submit_time + w_a
        push(start, _INSERT, ("wait", job))
        push(start + r_a, _INSERT, ("run", job))

    for job in history:
        push_labels(job)
    for i, job in enumerate(targets):
        push(job.record.submit_time, _PREDICT, ("predict", i, job))

    results: list[TimelinePrediction | None] = [None] * len(targets)
    last_time = -math.inf
    while heap:
        time, priority, _, payload = heapq.heappop(heap)
        assert time >= last_time, "replay events regressed in time"
        last_time = time
        if priority == _INSERT:
            kind, job = payload
            if kind == "wait":
                wait_kb.insert(
                    extract_augmented(job, header, wait.schema), float(job.record.wait_time)
                )
            else:
                run_kb.insert(
                    extract_augmented(job, header, run.schema), float(job.record.run_time)
                )
        else:
            _, i, job = payload
            wp = wait_kb.predict(extract_augmented(job, header, wait.schema), wait.params)
            rp = run_kb.predict(extract_augmented(job, header, run.schema), run.params)
            results[i] = TimelinePrediction(
                job,
                AdvisorPrediction(
                    wait_estimate=wp.estimate,
                    wait_variance=wp.variance,
                    run_estimate=rp.estimate,
                    run_variance=rp.variance,
                ),
            )
            push_labels(job)
    assert all(r is not None for r in results)
    return results  # type: ignore[return-value]


@dataclass(frozen=True)
class DecisionRecord:
    """One advised job with its realized outcome."""

    job_id: int
    prediction: AdvisorPrediction
    speed_s: float | None
    verdict: Verdict
    actual_wait: float
    actual_local_run: float
    actual_cloud_run: float | None
    saved_time: float
    hit: bool
    excluded: bool  # outside the cloud model's measured processor range


def _job_procs(job: AugmentedJob) -> int:
    procs = job.record.requested_procs
    assert procs is not None and procs > 0
    return int(procs)


def _in_range(cloud: CloudModel, procs: int) -> bool:
    if isinstance(cloud, EmpiricalRatioModel):
        return cloud.supports(procs)
    return True


def decision_records(
    predictions: Sequence[TimelinePrediction],
    cloud: CloudModel,
    cutoff: CutoffModel | None,
    *,
    saved_scale: float = 1.0,
) -> list[DecisionRecord]:
    """Apply the advisor to each prediction and score the realized outcome.

    ``cutoff=None`` is the without-cutoff mode. Jobs outside an empirical
    model's measured range are marked excluded, verdict local.
    """
    out: list[DecisionRecord] = []
    for tp in predictions:
        record = tp.job.record
        procs = _job_procs(tp.job)
        w_a = float(record.wait_time)
        r_a = float(record.run_time)
        if not _in_range(cloud, procs):
            out.append(
                DecisionRecord(
                    job_id=record.job_id,
                    prediction=tp.prediction,
                    speed_s=None,
                    verdict=Verdict(Environment.LOCAL, Reason.CUTOFF_EXCEEDED),
                    actual_wait=w_a,
                    actual_local_run=r_a,
                    actual_cloud_run=None,
                    saved_time=0.0,
                    hit=True,
                    excluded=True,
                )
            )
            continue
        speed = cloud.speed_ratio(procs)
        cloud_run_actual = cloud.cloud_runtime(procs, r_a)
        verdict = decide(tp.prediction, procs, cloud, cutoff)
        saved = 0.0
        if verdict.environment is Environment.CLOUD:
            saved = saved_scale * ((r_a + w_a) - cloud_run_actual)
        raw = decide(tp.prediction, procs, cloud, None)
        best_is_cloud = (r_a + w_a) > cloud_run_actual  # ties favor local
        hit = (raw.environment is Environment.CLOUD) == best_is_cloud
        out.append(
            DecisionRecord(
                job_id=record.job_id,
                prediction=tp.prediction,
                speed_s=speed,
                verdict=verdict,
                actual_wait=w_a,
                actual_local_run=r_a,
                actual_cloud_run=cloud_run_actual,
                saved_time=saved,
                hit=hit,
                excluded=False,
            )
        )
    return out


def replay(
    history: Sequence[AugmentedJob],
    targets: Sequence[AugmentedJob],
    wait: EstimatorSetup,
    run: EstimatorSetup,
    header: TraceHeader,
    cloud: CloudModel,
    cutoff: CutoffModel | None,
    mode: ReplayMode,
    *,
    saved_scale: float = 1.0,
) -> list[DecisionRecord]:
    """Full replay: timeline predictions, then decisions under ``mode``."""
    predictions = predict_timeline(history, targets, wait, run, header)
    effective = cutoff if mode == "with_cutoff" else None
    return decision_records(predictions, cloud, effective, saved_scale=saved_scale)


def saved_time(record: DecisionRecord) -> float:
    """Realized local turnaround minus realized cloud runtime for cloud
    placements; zero for local ones. Negative values are losses against the
    always-local baseline."""
    return record.saved_time


@dataclass(frozen=True)
class ModeTotals:
    on_premise: int
    on_cloud: int
    saved_time: float


def totals(records: Sequence[DecisionRecord]) -> ModeTotals:
    included = [r for r in records if not r.excluded]
    on_cloud = sum(1 for r in included if r.verdict.environment is Environment.CLOUD)
    return ModeTotals(
        on_premise=len(included) - on_cloud,
        on_cloud=on_cloud,
        saved_time=math.fsum(r.saved_time for r in included),
    )


def optimal_allocation(
    predictions: Sequence[TimelinePrediction],
    cloud: CloudModel,
    *,
    saved_scale: float = 1.0,
) -> ModeTotals:
    """Clairvoyant baseline: send a job to the cloud exactly when its realized
    turnaround is strictly better there (ties stay local)."""
    on_cloud = 0
    n = 0
    saved: list[float] = []
    for tp in predictions:
        record = tp.job.record
        procs = _job_procs(tp.job)
        if not _in_range(cloud, procs):
            continue
        n += 1
        w_a, r_a = float(record.wait_time), float(record.run_time)
        cloud_run = cloud.cloud_runtime(procs, r_a)
        gain = (r_a + w_a) - cloud_run
        if gain > 0:
            on_cloud += 1
            saved.append(saved_scale * gain)
    return ModeTotals(on_premise=n - on_cloud, on_cloud=on_cloud,
                      saved_time=math.fsum(saved))


def hit_miss(records: Sequence[DecisionRecord]) -> tuple[int, int]:
    """Agreement counts between the raw predicted comparison and reality."""
    included = [r for r in records if not r.excluded]
    hits = sum(1 for r in included if r.hit)
    return hits, len(included) - hits


def rmse_report(
    predictions: Sequence[TimelinePrediction], target: Literal["wait", "run"]
) -> float:
    """Root mean squared error of the replay's predictions for one label."""
    if not predictions:
        raise ValueError("no predictions to score")
    total = 0.0
    for tp in predictions:
        if target == "wait":
            err = tp.prediction.wait_estimate - float(tp.job.record.wait_time)
        else:
            err = tp.prediction.run_estimate - float(tp.job.record.run_time)
        total += err * err
    return math.sqrt(total / len(predictions))


def cutoff_training_points(
    tune_predictions: Sequence[TimelinePrediction],
    cloud: CloudModel,
    *,
    gated_only: bool = True,
) -> list[CutoffPoint]:
    """Label tuning-window predictions as hits/misses for cutoff fitting.

    A point is a hit when the raw comparison (no cutoff) picks the side that
    realized the smaller turnaround; ties favor local. By default only
    cloud-predicted points are returned: those are the only decisions the
    cutoff ever gates, and training on the local-predicted bulk drowns the
    boundary in irrelevant agreements.
    """
    points = []
    for tp in tune_predictions:
        record = tp.job.record
        procs = _job_procs(tp.job)
        if not _in_range(cloud, procs):
            continue
        speed = cloud.speed_ratio(procs)
        raw = decide(tp.prediction, procs, cloud, None)
        if gated_only and raw.environment is not Environment.CLOUD:
            continue
        cloud_run_actual = cloud.cloud_runtime(procs, float(record.run_time))
        best_is_cloud = (float(record.run_time) + float(record.wait_time)) > cloud_run_actual
        hit = (raw.environment is Environment.CLOUD) == best_is_cloud
        points.append(CutoffPoint(speed, tp.prediction.wait_variance, hit))
    return points


@dataclass(frozen=True)
class CutoffSpec:
    """How the with-cutoff mode obtains its cutoff."""

    mode: Literal["fit", "fixed", "disabled"] = "fit"
    alpha: float | None = None
    beta: float | None = None
    fallback_variance: float = 1e12

    def resolve(
        self,
        tune_predictions: Sequence[TimelinePrediction],
        clouds: Sequence[CloudModel],
    ) -> tuple[CutoffModel | None, str]:
        """One cutoff for a whole evaluation sweep.

        Fitting pools the labeled tuning points of every cloud model in the
        sweep: the training set then spans fast and slow configurations and a
        single (alpha, beta) pair serves the entire grid, applied per job at
        its own speed ratio.
        """
        if self.mode == "disabled":
            return None, "disabled"
        if self.mode == "fixed":
            if self.alpha is None or self.beta is None:
                raise ValueError("fixed cutoff requires alpha and beta")
            return CutoffModel(self.alpha, self.beta), "fixed"
        points: list[CutoffPoint] = []
        for cloud in clouds:
            points.extend(cutoff_training_points(tune_predictions, cloud))
        try:
            return fit_cutoff(points), "fitted"
        except DegenerateCutoffData:
            return CutoffModel(alpha=self.fallback_variance, beta=0.0), "fallback"


@dataclass(frozen=True)
class GridRow:
    key: str
    factor: float | None
    without_cutoff: ModeTotals
    with_cutoff: ModeTotals
    optimal: ModeTotals
    wait_rmse: float
    run_rmse: float
    hits: int
    misses: int
    excluded: int
    cutoff_alpha: float | None
    cutoff_beta: float | None
    cutoff_source: str


def evaluate_models(
    tune_predictions: Sequence[TimelinePrediction],
    test_predictions: Sequence[TimelinePrediction],
    models: Sequence[tuple[str, float | None, CloudModel]],
    cutoff_spec: CutoffSpec,
    *,
    saved_scale: float = 1.0,
    max_workers: int = 1,
) -> list[GridRow]:
    """Score every cloud model (factor grid or scenario set) in both modes.

    Timeline predictions do not depend on the cloud model (placements never
    change the log), so they are computed once by the caller and shared here.
    Rows come back in input order regardless of worker count.
    """
    wait_rmse = rmse_report(test_predictions, "wait")
    run_rmse = rmse_report(test_predictions, "run")
    cutoff, source = cutoff_spec.resolve(tune_predictions, [m[2] for m in models])

    def evaluate(entry: tuple[str, float | None, CloudModel]) -> GridRow:
        key, factor, cloud = entry
        without = decision_records(test_predictions, cloud, None, saved_scale=saved_scale)
        with_records = decision_records(test_predictions, cloud, cutoff, saved_scale=saved_scale)
        hits, misses = hit_miss(without)
        return GridRow(
            key=key,
            factor=factor,
            without_cutoff=totals(without),
            with_cutoff=totals(with_records),
            optimal=optimal_allocation(test_predictions, cloud, saved_scale=saved_scale),
            wait_rmse=wait_rmse,
            run_rmse=run_rmse,
            hits=hits,
            misses=misses,
            excluded=sum(1 for r in without if r.excluded),
            cutoff_alpha=None if cutoff is None else cutoff.alpha,
            cutoff_beta=None if cutoff is None else cutoff.beta,
            cutoff_source=source,
        )

    if max_workers <= 1:
        return [evaluate(m) for m in models]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(evaluate, models))
