"""Placement decisions from predictions, a cloud model, and a variance cutoff.

A job goes to the cloud only when the predicted local turnaround exceeds the
predicted cloud runtime AND the wait-time prediction is trusted: its variance
must stay below an exponential cutoff of the cloud/local speed ratio. The
cutoff shrinks as the cloud gets slower, because mistakes cost more there.
Runtime variance is deliberately ignored; wait-time uncertainty dominates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .cloud import CloudModel, RatioRangeError

VARIANCE_FLOOR = 1e-6  # seconds^2; keeps log(variance) defined when fitting


class Environment(Enum):
    CLOUD = "cloud"
    LOCAL = "local"


class Reason(Enum):
    TIME_SAVING_AND_CONFIDENT = "time_saving_and_confident"
    CUTOFF_EXCEEDED = "cutoff_exceeded"
    LOCAL_FASTER = "local_faster"


@dataclass(frozen=True)
class Verdict:
    environment: Environment
    reason: Reason

    def __post_init__(self):
        if (
            self.environment is Environment.CLOUD
            and self.reason is not Reason.TIME_SAVING_AND_CONFIDENT
        ):
            raise ValueError("a cloud verdict must be time-saving and confident")


@dataclass(frozen=True)
class AdvisorPrediction:
    """Wait and runtime estimates with their variances, all finite."""

    wait_estimate: float
    wait_variance: float
    run_estimate: float
    run_variance: float

    def __post_init__(self):
        for v in (self.wait_estimate, self.wait_variance, self.run_estimate, self.run_variance):
            if not math.isfinite(v):
                raise ValueError("prediction fields must be finite")
        if self.wait_variance < 0 or self.run_variance < 0:
            raise ValueError("variances must be non-negative")


@dataclass(frozen=True)
class CutoffModel:
    """Maximum trusted wait variance as a function of the speed ratio."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError("alpha must be positive")

    def cutoff(self, speed_ratio: float) -> float:
        return self.alpha * math.exp(self.beta * speed_ratio)


def decide(
    prediction: AdvisorPrediction,
    job_procs: int,
    cloud: CloudModel,
    cutoff: CutoffModel | None,
) -> Verdict:
    """Pick an execution environment for one job.

    ``cutoff=None`` drops the confidence test and leaves the pure time
    comparison. Ties go local (strict inequality). Jobs outside an empirical
    model's measured range fall back to a local verdict; callers doing
    scenario evaluation exclude them separately.
    """
    try:
        speed = cloud.speed_ratio(job_procs)
    except RatioRangeError:
        return Verdict(Environment.LOCAL, Reason.CUTOFF_EXCEEDED)
    predicted_cloud_run = cloud.cloud_runtime(job_procs, prediction.run_estimate)
    if not (prediction.wait_estimate + prediction.run_estimate > predicted_cloud_run):
        return Verdict(Environment.LOCAL, Reason.LOCAL_FASTER)
    if cutoff is not None and not (prediction.wait_variance < cutoff.cutoff(speed)):
        return Verdict(Environment.LOCAL, Reason.CUTOFF_EXCEEDED)
    return Verdict(Environment.CLOUD, Reason.TIME_SAVING_AND_CONFIDENT)


@dataclass(frozen=True)
class CutoffPoint:
    """One training observation: speed ratio, wait variance, and whether the
    raw (cutoff-free) comparison agreed with the realized best environment."""

    speed_ratio: float
    wait_variance: float
    hit: bool


class DegenerateCutoffData(ValueError):
    """Training data holds a single class; fit a constant cutoff from
    configuration instead."""


def _logistic_fit(x: np.ndarray, y: np.ndarray, sample_weight: np.ndarray,
                  ridge: float = 1e-3, max_iter: int = 200) -> np.ndarray:
    """Newton/IRLS for weighted logistic regression with a small ridge.

    ``x`` is (n, d) without the intercept column; returns (d+1,) coefficients
    [intercept, b_1..b_d] on the standardized inputs handed in.
    """
    n, d = x.shape
    X = np.hstack([np.ones((n, 1)), x])
    beta = np.zeros(d + 1)
    penalty = np.full(d + 1, ridge)
    penalty[0] = 0.0  # the intercept is not shrunk
    for _ in range(max_iter):
        z = X @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -35, 35)))
        g = X.T @ (sample_weight * (p - y)) + penalty * beta
        w = sample_weight * p * (1.0 - p)
        h = (X * w[:, None]).T @ X + np.diag(penalty)
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, g, rcond=None)[0]
        beta = beta - step
        if np.max(np.abs(step)) < 1e-10:
            break
    return beta


def fit_cutoff(
    points: Sequence[CutoffPoint],
    *,
    variance_floor: float = VARIANCE_FLOOR,
) -> CutoffModel:
    """Fit the exponential cutoff from labeled (speed, variance) pairs.

    Fits a linear hit/miss boundary in (s, log variance) space by minimizing
    class-balanced logistic loss; the boundary line log C(s) = beta*s +
    log(alpha) separates trusted (below) from distrusted (above) variances.
    Variances below ``variance_floor`` are floored before taking logs.
    """
    if not points:
        raise DegenerateCutoffData("no training points")
    hits = sum(p.hit for p in points)
    misses = len(points) - hits
    if hits == 0 or misses == 0:
        raise DegenerateCutoffData(
            "training data holds a single class; configure a fallback constant cutoff"
        )
    s = np.array([p.speed_ratio for p in points])
    logv = np.log(np.maximum([p.wait_variance for p in points], variance_floor))
    y = np.array([0.0 if p.hit else 1.0 for p in points])  # 1 = miss
    # class balancing: reweight inversely to frequency
    w = np.where(y == 1.0, len(points) / (2.0 * misses), len(points) / (2.0 * hits))

    features = np.column_stack([s, logv])
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale == 0] = 1.0
    beta_std = _logistic_fit((features - mean) / scale, y, w)
    # undo standardization: z = b0 + sum b_j (x_j - m_j) / s_j
    b = beta_std[1:] / scale
    b0 = beta_std[0] - float(np.dot(beta_std[1:], mean / scale))

    b_s, b_logv = float(b[0]), float(b[1])
    if b_logv <= 1e-12:
        # misses do not increase with variance here; fall back to a flat
        # threshold between the class-conditional mean log variances
        mid = 0.5 * (logv[y == 0].mean() + logv[y == 1].mean())
        return CutoffModel(alpha=math.exp(mid), beta=0.0)
    return CutoffModel(alpha=math.exp(-b0 / b_logv), beta=-b_s / b_logv)
