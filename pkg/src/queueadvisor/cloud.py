"""Cloud runtime models: how much slower (or faster) a job runs off-premise.

Two models produce the per-job speed ratio s = cloud runtime / local runtime:
a linear function of the processor count, and an empirical table of measured
ratios interpolated over processor counts in [1, 256].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# Overhead factors used by the evaluation sweep.
DEFAULT_OVERHEAD_GRID = (0.01, 0.05, 0.10, 0.20, 0.30, 0.40, 0.50, 0.75, 1.00, 10.00)

MAX_MEASURED_PROCS = 256


class RatioRangeError(ValueError):
    """Processor count outside the measured range of an empirical model."""


@dataclass(frozen=True)
class LinearCloudModel:
    """speed_ratio(j) = overhead * j + base.

    ``base`` folds in per-processor speed differences; provisioning time is
    an additive seconds constant, negligible (0) by default.
    """

    overhead: float
    base: float = 1.0
    provisioning_s: float = 0.0

    def __post_init__(self):
        if self.overhead < 0:
            raise ValueError("overhead must be non-negative")
        if not (self.base > 0):
            raise ValueError("base factor must be positive")
        if self.provisioning_s < 0:
            raise ValueError("provisioning time must be non-negative")

    def speed_ratio(self, procs: int) -> float:
        if procs < 1:
            raise ValueError("processor count must be at least 1")
        return self.overhead * procs + self.base

    def cloud_runtime(self, procs: int, local_runtime: float) -> float:
        if local_runtime < 0:
            raise ValueError("local runtime must be non-negative")
        return self.speed_ratio(procs) * local_runtime + self.provisioning_s


@dataclass(frozen=True)
class ScenarioId:
    cloud_name: str
    local_name: str
    application_name: str

    def __str__(self) -> str:
        return f"{self.cloud_name}/{self.local_name}/{self.application_name}"


@dataclass(frozen=True)
class EmpiricalRatioModel:
    """Measured (procs, ratio) points for one (cloud, local, application).

    Ratios between measured points are piecewise-linearly interpolated;
    beyond the table ends (still within [1, 256]) the nearest measured ratio
    extends constantly. Jobs outside [1, 256] processors are out of range.
    """

    scenario: ScenarioId
    procs: tuple[int, ...]
    ratios: tuple[float, ...]
    provisioning_s: float = 0.0

    def __post_init__(self):
        if len(self.procs) != len(self.ratios) or not self.procs:
            raise ValueError("need matching, non-empty procs and ratios")
        if any(b <= a for a, b in zip(self.procs, self.procs[1:])):
            raise ValueError("procs must be strictly increasing")
        if self.procs[0] < 1 or self.procs[-1] > MAX_MEASURED_PROCS:
            raise ValueError(f"procs must lie within [1, {MAX_MEASURED_PROCS}]")
        if any(not (r > 0) for r in self.ratios):
            raise ValueError("ratios must be positive")

    def speed_ratio(self, procs: int) -> float:
        if procs < 1:
            raise ValueError("processor count must be at least 1")
        if procs > MAX_MEASURED_PROCS:
            raise RatioRangeError(
                f"{procs} processors outside measured range [1, {MAX_MEASURED_PROCS}]"
            )
        return float(np.interp(procs, self.procs, self.ratios))

    def cloud_runtime(self, procs: int, local_runtime: float) -> float:
        if local_runtime < 0:
            raise ValueError("local runtime must be non-negative")
        return self.speed_ratio(procs) * local_runtime + self.provisioning_s

    def supports(self, procs: int) -> bool:
        return 1 <= procs <= MAX_MEASURED_PROCS


CloudModel = LinearCloudModel | EmpiricalRatioModel


def write_ratio_tables(path: str | Path, models: Sequence[EmpiricalRatioModel]) -> None:
    """scenario header line, then one "procs ratio" pair per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for model in models:
            fp.write(
                f"scenario {model.scenario.cloud_name} {model.scenario.local_name} "
                f"{model.scenario.application_name}\n"
            )
            for p, r in zip(model.procs, model.ratios):
                fp.write(f"{p} {r!r}\n")


def parse_ratio_tables(path: str | Path) -> list[EmpiricalRatioModel]:
    """Strict parser for the ratio-table format; errors carry line numbers."""
    models: list[EmpiricalRatioModel] = []
    scenario: ScenarioId | None = None
    procs: list[int] = []
    ratios: list[float] = []

    def flush(lineno: int) -> None:
        nonlocal scenario, procs, ratios
        if scenario is None:
            return
        if not procs:
            raise ValueError(f"line {lineno}: scenario {scenario} has no data points")
        models.append(EmpiricalRatioModel(scenario, tuple(procs), tuple(ratios)))
        scenario, procs, ratios = None, [], []

    with open(path, "r", encoding="utf-8") as fp:
        lineno = 0
        for lineno, raw in enumerate(fp, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if tokens[0] == "scenario":
                if len(tokens) != 4:
                    raise ValueError(
                        f"line {lineno}: scenario header needs cloud, local, application"
                    )
                flush(lineno)
                scenario = ScenarioId(tokens[1], tokens[2], tokens[3])
                continue
            if scenario is None:
                raise ValueError(f"line {lineno}: data before any scenario header")
            if len(tokens) != 2:
                raise ValueError(f"line {lineno}: expected 'procs ratio'")
            try:
                procs.append(int(tokens[0]))
                ratios.append(float(tokens[1]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        flush(lineno + 1)
    return models


def sample_ratio_tables(seed: int = 7) -> list[EmpiricalRatioModel]:
    """Synthetic stand-in for measured speedup curves: 3 clouds x 3 locals x
    8 applications, ratios drifting with processor count. Real measurements
    are external data; this sample only exercises the file format and the
    scenario evaluation path."""
    rng = np.random.default_rng(seed)
    points = (1, 2, 4, 8, 16, 32, 64, 128, 256)
    clouds = ("cloudA", "cloudB", "cloudC")
    locals_ = ("siteX", "siteY", "siteZ")
    apps = tuple(f"app{i}" for i in range(1, 9))
    models = []
    for cloud in clouds:
        cloud_penalty = rng.uniform(0.02, 0.25)
        for local in locals_:
            base = rng.uniform(0.8, 1.4)
            for app in apps:
                sensitivity = rng.uniform(0.2, 1.5)
                ratios = []
                for p in points:
                    drift = 1.0 + cloud_penalty * sensitivity * np.log2(p)
                    noise = rng.uniform(0.95, 1.05)
                    ratios.append(max(0.05, base * drift * noise))
                models.append(
                    EmpiricalRatioModel(
                        ScenarioId(cloud, local, app), points, tuple(ratios)
                    )
                )
    return models
