"""Command-line front end.

Subcommands cover the full pipeline: ingest, simulate, tune, subset,
fit-cutoff, evaluate, predict, plus generators for the bundled synthetic
trace and a sample ratio-table file. Every command is deterministic given
the same inputs, configuration, and seed.

Exit codes: 0 success, 2 configuration error, 3 input error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .backfill import augmented_jobs, read_augmented, simulate, write_augmented
from .cloud import sample_ratio_tables, write_ratio_tables
from .estimator import KnowledgeBase
from .features import FeatureVector
from .pipeline import (
    ConfigError,
    cloud_models_from_config,
    content_hash,
    cutoff_spec_from_config,
    examples_of,
    load_config,
    load_setup,
    load_study,
    params_payload,
    run_evaluation,
    run_tuning,
    schema_from_config,
    setup_from_payload,
    study_predictions,
    write_audit,
    write_report,
    write_resolved_config,
)
from .swf import parse_swf, write_partition_manifest
from .synth import SynthConfig, generate_trace, write_trace
from .tuning import best_subset, correlation_weights

EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_INTERNAL = 4


class InputError(RuntimeError):
    pass


def _read_trace(path: str):
    try:
        with open(path, "r", encoding="utf-8", errors="replace") as fp:
            return parse_swf(fp)
    except OSError as exc:
        raise InputError(f"cannot read trace {path}: {exc}") from exc


def cmd_ingest(args) -> int:
    parsed = _read_trace(args.trace)
    header = parsed.header
    print(f"records: {len(parsed.jobs)}")
    print(f"skipped: {parsed.skip_count}")
    for lineno, reason in parsed.skipped[:10]:
        print(f"  line {lineno}: {reason}")
    print(f"unix_start_time: {header.unix_start_time}")
    print(f"timezone_offset_seconds: {header.timezone_offset_seconds}")
    print(f"max_procs: {header.max_procs}")
    print(f"source: {header.source_name}")
    if parsed.skip_count and not parsed.jobs:
        print("warning: no parsable records in trace")
    return 0


def cmd_simulate(args) -> int:
    parsed = _read_trace(args.trace)
    sim = simulate(parsed.jobs, total_procs=args.procs, header=parsed.header)
    jobs = augmented_jobs(parsed.jobs, sim)
    write_augmented(args.output, parsed.header, jobs, sim.total_procs)
    print(f"simulated {len(parsed.jobs)} jobs on {sim.total_procs} processors")
    print(f"unschedulable: {len(sim.unschedulable)}")
    print(f"requested_time_substituted: {sim.missing_requested_time}")
    print(f"reservations_extended_to_runtime: {sim.extended_reservations}")
    print(f"augmented trace: {args.output}")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(jobs=args.jobs, total_procs=args.procs, users=args.users)
    header, jobs = generate_trace(args.seed, cfg)
    write_trace(args.output, header, jobs)
    waits = [j.wait_time for j in jobs]
    print(f"wrote {len(jobs)} jobs to {args.output}")
    print(f"mean_wait: {sum(waits) / len(waits):.1f}s")
    return 0


def cmd_gen_ratios(args) -> int:
    models = sample_ratio_tables(args.seed)
    write_ratio_tables(args.output, models)
    print(f"wrote {len(models)} scenarios to {args.output}")
    return 0


def _load_study(args, config):
    try:
        return load_study(args.augmented, config)
    except OSError as exc:
        raise InputError(f"cannot read augmented trace {args.augmented}: {exc}") from exc


def cmd_tune(args) -> int:
    config = load_config(args.config, {"seed": args.seed} if args.seed is not None else None)
    schema = schema_from_config(config)
    header, partitions = _load_study(args, config)
    outcome = run_tuning(header, partitions, schema, args.target, args.method, config)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / f"params_{args.target}.json", "w", encoding="utf-8", newline="\n") as fp:
        json.dump(params_payload(outcome, schema, config), fp, indent=2, sort_keys=True)
        fp.write("\n")
    trace_name = "ga_fitness.tsv" if args.method == "ga" else "correlation_grid.tsv"
    with open(outdir / trace_name, "w", encoding="utf-8", newline="\n") as fp:
        for line in outcome.trace_lines:
            fp.write(line + "\n")
    print(f"method: {outcome.method}")
    print(f"validation_rmse: {outcome.validation_rmse!r}")
    print(f"params: {outdir / f'params_{args.target}.json'}")
    return 0


def cmd_subset(args) -> int:
    config = load_config(args.config)
    schema = schema_from_config(config)
    header, partitions = _load_study(args, config)
    sub = config["subset"]
    train = examples_of(partitions.discard, header, schema, args.target)
    validate = examples_of(partitions.tune, header, schema, args.target)
    if not train or not validate:
        raise ConfigError("subset selection needs non-empty discard and tune partitions")
    train = train[-int(sub["max_train"]):]
    validate = validate[: int(sub["max_validate"])]
    sweep = best_subset(
        train,
        validate,
        schema,
        k=int(sub["k"]),
        omega=float(sub["omega"]),
    )
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    table = outdir / f"subset_{args.target}.tsv"
    with open(table, "w", encoding="utf-8", newline="\n") as fp:
        fp.write("size\trmse\tfeatures\tweights\n")
        for result in sweep.per_size:
            pairs = " ".join(f"{n}:{result.weights[n]:.4f}" for n in result.features)
            fp.write(f"{result.size}\t{result.rmse!r}\t{','.join(result.features)}\t{pairs}\n")
    print(f"models_evaluated: {sweep.models_evaluated}")
    print(f"best_size: {sweep.best.size}")
    print(f"best_rmse: {sweep.best.rmse!r}")
    print(f"table: {table}")
    return 0


def cmd_fit_cutoff(args) -> int:
    overrides: dict = {}
    if args.factor is not None:
        overrides["cloud"] = {"model": "linear", "factors": [args.factor]}
    if args.ratio_tables is not None:
        overrides["cloud"] = {"model": "empirical", "ratio_tables": args.ratio_tables}
    config = load_config(args.config, overrides)
    header, partitions = _load_study(args, config)
    wait = load_setup(args.wait_params)
    run = load_setup(args.run_params)
    preds = study_predictions(header, partitions, wait, run)
    spec = cutoff_spec_from_config(config)
    entries = []
    for key, factor, cloud in cloud_models_from_config(config):
        cutoff, source = spec.resolve(preds.tune, [cloud])
        entries.append(
            {
                "model": key,
                "factor": factor,
                "alpha": None if cutoff is None else cutoff.alpha,
                "beta": None if cutoff is None else cutoff.beta,
                "source": source,
            }
        )
    payload = {
        "cutoffs": entries,
        "provenance": {
            "augmented_trace": str(args.augmented),
            "content_sha256": content_hash(args.augmented),
            "partitions": dict(config["partitions"]),
            "tune_size": len(partitions.tune),
        },
    }
    with open(args.output, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(payload, fp, indent=2, sort_keys=True)
        fp.write("\n")
    print(f"cutoffs: {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    overrides: dict = {"evaluation": {}}
    if args.workers is not None:
        overrides["evaluation"]["workers"] = args.workers
    if args.audit:
        overrides["evaluation"]["audit"] = True
    config = load_config(args.config, overrides)
    header, partitions = _load_study(args, config)
    wait = load_setup(args.wait_params)
    run = load_setup(args.run_params)
    rows, preds = run_evaluation(header, partitions, wait, run, config)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    write_report(outdir / "evaluation_report.tsv", rows)
    write_resolved_config(outdir / "config_resolved.json", config)
    write_partition_manifest(
        partitions, outdir / "partition_manifest.jsonl", record_of=lambda aug: aug.record
    )
    if config["evaluation"]["audit"]:
        from .evaluation import decision_records

        spec = cutoff_spec_from_config(config)
        entries = cloud_models_from_config(config)
        cutoff, _source = spec.resolve(preds.tune, [m[2] for m in entries])
        for i, (key, _factor, cloud) in enumerate(entries):
            records = decision_records(
                preds.test, cloud, cutoff,
                saved_scale=float(config["evaluation"]["saved_scale"]),
            )
            write_audit(outdir / f"decisions_{i:02d}.jsonl", key, records)
    print(f"rows: {len(rows)}")
    print(f"report: {outdir / 'evaluation_report.tsv'}")
    return 0


def cmd_predict(args) -> int:
    try:
        kb = KnowledgeBase.load(args.kb)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load knowledge base {args.kb}: {exc}") from exc
    setup = load_setup(args.params)
    try:
        with open(args.query, "r", encoding="utf-8") as fp:
            query = FeatureVector(json.load(fp))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read query {args.query}: {exc}") from exc
    prediction = kb.predict(query, setup.params)
    print(
        json.dumps(
            {
                "estimate": prediction.estimate,
                "variance": prediction.variance,
                "neighbor_count": prediction.neighbor_count,
                "neighbor_ids": list(prediction.neighbor_ids),
            },
            sort_keys=True,
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="queueadvisor",
        description="HPC wait/runtime prediction and hybrid-cloud placement advice",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a trace and print summary statistics")
    p.add_argument("trace")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="replay a trace and write the augmented trace")
    p.add_argument("trace")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--procs", type=int, default=None, help="override machine size")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="generate a synthetic bursty trace")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--jobs", type=int, default=20000)
    p.add_argument("--procs", type=int, default=128)
    p.add_argument("--users", type=int, default=24)
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-ratios", help="write a sample empirical ratio-table file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_ratios)

    p = sub.add_parser("tune", help="fit estimator parameters")
    p.add_argument("augmented")
    p.add_argument("--target", choices=("wait", "run"), required=True)
    p.add_argument("--method", choices=("ga", "correlation"), required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("subset", help="best-subset feature selection")
    p.add_argument("augmented")
    p.add_argument("--target", choices=("wait", "run"), required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("fit-cutoff", help="fit the variance cutoff on the tuning slice")
    p.add_argument("augmented")
    p.add_argument("--wait-params", required=True)
    p.add_argument("--run-params", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--factor", type=float, default=None)
    p.add_argument("--ratio-tables", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_fit_cutoff)

    p = sub.add_parser("evaluate", help="replay the test window across cloud models")
    p.add_argument("augmented")
    p.add_argument("--wait-params", required=True)
    p.add_argument("--run-params", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--audit", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="single-query debug prediction")
    p.add_argument("--kb", required=True, help="knowledge-base checkpoint")
    p.add_argument("--params", required=True)
    p.add_argument("--query", required=True, help="JSON file of feature values")
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AssertionError, RuntimeError) as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
