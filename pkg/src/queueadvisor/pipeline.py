"""Configuration handling and end-to-end orchestration for the CLI.

Partition layout, in submit order: [discard | tune | train | test]. The
discard prefix is never evaluated but seeds the knowledge base for the
tuning phase (cold-start prevention); the training fill seeds the final
evaluation replay; cutoff fitting uses predictions on the tuning slice only.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .backfill import AugmentedJob, read_augmented
from .cloud import (
    DEFAULT_OVERHEAD_GRID,
    CloudModel,
    EmpiricalRatioModel,
    LinearCloudModel,
    parse_ratio_tables,
)
from .estimator import EstimatorParams
from .evaluation import (
    CutoffSpec,
    EstimatorSetup,
    GridRow,
    TimelinePrediction,
    evaluate_models,
    predict_timeline,
)
from .features import FULL_FEATURE_NAMES, FeatureSchema, extract_augmented
from .swf import StudyPartitions, TraceHeader, partition_for_study
from .tuning import (
    DEFAULT_K_GRID,
    DEFAULT_OMEGA_GRID,
    Example,
    GAConfig,
    ga_optimize,
    tune_correlation,
)


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""


DEFAULT_CONFIG: dict = {
    "seed": 1,
    "partitions": {"discard": 5000, "tune": 500, "train": None, "test": 10000},
    "features": {"active": list(FULL_FEATURE_NAMES)},
    "correlation": {
        "k_grid": list(DEFAULT_K_GRID),
        "omega_grid": list(DEFAULT_OMEGA_GRID),
        "window": None,
    },
    "ga": {
        "population": 50,
        "generations": 100,
        "crossover_prob": 0.8,
        "mutation_prob": 0.1,
        "elitism_frac": 0.05,
        "k_bounds": [6, 33],
        "omega_bounds": [0.01, 5.0],
        "window_min": 100,
    },
    "cloud": {
        "model": "linear",
        "base": 1.0,
        "provisioning_s": 0.0,
        "factors": list(DEFAULT_OVERHEAD_GRID),
        "ratio_tables": None,
    },
    "cutoff": {"mode": "fit", "alpha": None, "beta": None, "fallback_variance": 1e12},
    "evaluation": {"saved_scale": 1.0, "workers": 1, "audit": False},
    "subset": {"k": 16, "omega": 0.5, "max_train": 2500, "max_validate": 250},
}


def _merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ConfigError(f"unknown configuration key: {key}")
        if isinstance(out[key], dict) and isinstance(value, Mapping):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None, overrides: Mapping | None = None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fp:
                config = _merge(config, json.load(fp))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    if overrides:
        config = _merge(config, overrides)
    return config


def schema_from_config(config: Mapping) -> FeatureSchema:
    try:
        return FeatureSchema(tuple(config["features"]["active"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_study(
    augmented_path: str | Path, config: Mapping
) -> tuple[TraceHeader, StudyPartitions]:
    header, jobs, _skipped = read_augmented(augmented_path)
    parts = config["partitions"]
    partitions = partition_for_study(
        jobs,
        discard=int(parts["discard"]),
        tune=int(parts["tune"]),
        test=int(parts["test"]),
        train=None if parts["train"] is None else int(parts["train"]),
        record_of=lambda aug: aug.record,
    )
    return header, partitions


def examples_of(
    jobs: Sequence[AugmentedJob],
    header: TraceHeader,
    schema: FeatureSchema,
    target: str,
) -> list[Example]:
    out: list[Example] = []
    for aug in jobs:
        label = aug.record.wait_time if target == "wait" else aug.record.run_time
        out.append((extract_augmented(aug, header, schema), float(label)))
    return out


@dataclass(frozen=True)
class TuneOutcome:
    target: str
    method: str
    params: EstimatorParams
    validation_rmse: float
    trace_lines: tuple[str, ...]


def run_tuning(
    header: TraceHeader,
    partitions: StudyPartitions,
    schema: FeatureSchema,
    target: str,
    method: str,
    config: Mapping,
) -> TuneOutcome:
    if target not in ("wait", "run"):
        raise ConfigError("target must be wait or run")
    if not partitions.discard:
        raise ConfigError("tuning needs a non-empty discard prefix to seed the knowledge base")
    if not partitions.tune:
        raise ConfigError("tuning needs a non-empty tune slice")
    train = examples_of(partitions.discard, header, schema, target)
    validate = examples_of(partitions.tune, header, schema, target)
    if method == "correlation":
        c = config["correlation"]
        result = tune_correlation(
            train,
            validate,
            schema,
            k_grid=tuple(int(k) for k in c["k_grid"]),
            omega_grid=tuple(float(o) for o in c["omega_grid"]),
            window_size=None if c["window"] is None else int(c["window"]),
        )
        lines = tuple(f"{k}\t{omega!r}\t{rmse!r}" for k, omega, rmse in result.grid_trace)
        return TuneOutcome(target, method, result.params, result.rmse, lines)
    if method == "ga":
        g = config["ga"]
        ga_config = GAConfig(
            population=int(g["population"]),
            generations=int(g["generations"]),
            crossover_prob=float(g["crossover_prob"]),
            mutation_prob=float(g["mutation_prob"]),
            elitism_frac=float(g["elitism_frac"]),
            k_bounds=(int(g["k_bounds"][0]), int(g["k_bounds"][1])),
            omega_bounds=(float(g["omega_bounds"][0]), float(g["omega_bounds"][1])),
            window_min=int(g["window_min"]),
        )
        result = ga_optimize(train, validate, schema, int(config["seed"]), ga_config)
        lines = tuple(f"{gen}\t{best!r}\t{mean!r}" for gen, best, mean in result.history)
        return TuneOutcome(target, method, result.params, result.rmse, lines)
    raise ConfigError("method must be ga or correlation")


def params_payload(outcome: TuneOutcome, schema: FeatureSchema, config: Mapping) -> dict:
    return {
        "target": outcome.target,
        "method": outcome.method,
        "k": outcome.params.k,
        "omega": outcome.params.omega,
        "window_size": outcome.params.window_size,
        "feature_weights": {
            name: outcome.params.feature_weights.get(name, 0.0) for name in schema.active
        },
        "schema_active": list(schema.active),
        "validation_rmse": outcome.validation_rmse,
        "config": copy.deepcopy(dict(config)),
    }


def setup_from_payload(payload: Mapping) -> EstimatorSetup:
    try:
        schema = FeatureSchema(tuple(payload["schema_active"]))
        params = EstimatorParams(
            k=int(payload["k"]),
            omega=float(payload["omega"]),
            window_size=int(payload["window_size"]),
            feature_weights={k: float(v) for k, v in payload["feature_weights"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad estimator parameters file: {exc}") from exc
    return EstimatorSetup(params, schema)


def load_setup(path: str | Path) -> EstimatorSetup:
    try:
        with open(path, "r", encoding="utf-8") as fp:
            return setup_from_payload(json.load(fp))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read parameters {path}: {exc}") from exc


def cloud_models_from_config(config: Mapping) -> list[tuple[str, float | None, CloudModel]]:
    cloud = config["cloud"]
    if cloud["model"] == "linear":
        base = float(cloud["base"])
        prov = float(cloud["provisioning_s"])
        return [
            (f"factor={factor}", float(factor),
             LinearCloudModel(float(factor), base, prov))
            for factor in cloud["factors"]
        ]
    if cloud["model"] == "empirical":
        if not cloud["ratio_tables"]:
            raise ConfigError("empirical cloud model needs cloud.ratio_tables")
        models = parse_ratio_tables(cloud["ratio_tables"])
        return [(str(m.scenario), None, m) for m in models]
    raise ConfigError("cloud.model must be linear or empirical")


def cutoff_spec_from_config(config: Mapping) -> CutoffSpec:
    cut = config["cutoff"]
    if cut["mode"] not in ("fit", "fixed", "disabled"):
        raise ConfigError("cutoff.mode must be fit, fixed, or disabled")
    return CutoffSpec(
        mode=cut["mode"],
        alpha=None if cut["alpha"] is None else float(cut["alpha"]),
        beta=None if cut["beta"] is None else float(cut["beta"]),
        fallback_variance=float(cut["fallback_variance"]),
    )


@dataclass(frozen=True)
class StudyPredictions:
    tune: list[TimelinePrediction]
    test: list[TimelinePrediction]


def study_predictions(
    header: TraceHeader,
    partitions: StudyPartitions,
    wait: EstimatorSetup,
    run: EstimatorSetup,
) -> StudyPredictions:
    """Timeline predictions for the tuning slice (seeded by the discard
    prefix) and the test window (seeded by the training fill)."""
    tune_preds = predict_timeline(partitions.discard, partitions.tune, wait, run, header)
    test_preds = predict_timeline(partitions.train, partitions.test, wait, run, header)
    return StudyPredictions(tune_preds, test_preds)


def run_evaluation(
    header: TraceHeader,
    partitions: StudyPartitions,
    wait: EstimatorSetup,
    run: EstimatorSetup,
    config: Mapping,
    predictions: StudyPredictions | None = None,
) -> tuple[list[GridRow], StudyPredictions]:
    if predictions is None:
        predictions = study_predictions(header, partitions, wait, run)
    rows = evaluate_models(
        predictions.tune,
        predictions.test,
        cloud_models_from_config(config),
        cutoff_spec_from_config(config),
        saved_scale=float(config["evaluation"]["saved_scale"]),
        max_workers=int(config["evaluation"]["workers"]),
    )
    return rows, predictions


# -- report writing ----------------------------------------------------------

_REPORT_COLUMNS = (
    "key",
    "factor",
    "without_on_premise",
    "without_on_cloud",
    "without_saved_s",
    "without_saved_millions",
    "with_on_premise",
    "with_on_cloud",
    "with_saved_s",
    "with_saved_millions",
    "optimal_on_premise",
    "optimal_on_cloud",
    "optimal_saved_s",
    "optimal_saved_millions",
    "wait_rmse",
    "run_rmse",
    "hits",
    "misses",
    "excluded",
    "cutoff_alpha",
    "cutoff_beta",
    "cutoff_source",
)


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(path: str | Path, rows: Sequence[GridRow]) -> None:
    """Tab-separated evaluation table, one row per factor or scenario."""
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write("\t".join(_REPORT_COLUMNS) + "\n")
        for row in rows:
            cells = [
                row.key,
                _cell(row.factor),
                _cell(row.without_cutoff.on_premise),
                _cell(row.without_cutoff.on_cloud),
                _cell(row.without_cutoff.saved_time),
                f"{row.without_cutoff.saved_time / 1e6:.2f}",
                _cell(row.with_cutoff.on_premise),
                _cell(row.with_cutoff.on_cloud),
                _cell(row.with_cutoff.saved_time),
                f"{row.with_cutoff.saved_time / 1e6:.2f}",
                _cell(row.optimal.on_premise),
                _cell(row.optimal.on_cloud),
                _cell(row.optimal.saved_time),
                f"{row.optimal.saved_time / 1e6:.2f}",
                _cell(row.wait_rmse),
                _cell(row.run_rmse),
                _cell(row.hits),
                _cell(row.misses),
                _cell(row.excluded),
                _cell(row.cutoff_alpha),
                _cell(row.cutoff_beta),
                row.cutoff_source,
            ]
            fp.write("\t".join(cells) + "\n")


def write_audit(path: str | Path, key: str, records) -> None:
    """Machine-readable per-decision records for one cloud model."""
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for r in records:
            fp.write(
                json.dumps(
                    {
                        "model": key,
                        "job_id": r.job_id,
                        "wait_estimate": r.prediction.wait_estimate,
                        "wait_variance": r.prediction.wait_variance,
                        "run_estimate": r.prediction.run_estimate,
                        "run_variance": r.prediction.run_variance,
                        "speed_s": r.speed_s,
                        "verdict": r.verdict.environment.value,
                        "reason": r.verdict.reason.value,
                        "actual_wait": r.actual_wait,
                        "actual_local_run": r.actual_local_run,
                        "actual_cloud_run": r.actual_cloud_run,
                        "saved_time": r.saved_time,
                        "hit": r.hit,
                        "excluded": r.excluded,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def content_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_resolved_config(path: str | Path, config: Mapping) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(config, fp, indent=2, sort_keys=True)
        fp.write("\n")
