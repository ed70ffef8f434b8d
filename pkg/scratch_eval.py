# scratch experiment driver (not part of the package)
import sys
import time

import numpy as np

from queueadvisor.backfill import augmented_jobs, simulate
from queueadvisor.cloud import DEFAULT_OVERHEAD_GRID, LinearCloudModel
from queueadvisor.evaluation import (
    CutoffSpec,
    EstimatorSetup,
    evaluate_models,
    predict_timeline,
    rmse_report,
)
from queueadvisor.features import FeatureSchema
from queueadvisor.pipeline import examples_of
from queueadvisor.swf import partition_for_study
from queueadvisor.synth import SynthConfig, generate_trace
from queueadvisor.tuning import tune_correlation


def run(seed=2024, cfg=SynthConfig(), verbose=True):
    t0 = time.time()
    header, jobs = generate_trace(seed, cfg)
    waits = np.array([j.wait_time for j in jobs], dtype=float)
    runs = np.array([j.run_time for j in jobs], dtype=float)
    if verbose:
        print(f"wait mean={waits.mean():.0f} med={np.median(waits):.0f} "
              f"zero={np.mean(waits==0):.2f} wait>run={np.mean(waits>runs):.2f} [{time.time()-t0:.0f}s]")
    sim = simulate(jobs, total_procs=cfg.total_procs)
    aug = augmented_jobs(jobs, sim)
    parts = partition_for_study(aug, discard=5000, tune=500, test=10000,
                                record_of=lambda a: a.record)
    full = FeatureSchema.full()
    base = FeatureSchema.without("promise")

    wait_t = tune_correlation(examples_of(parts.discard, header, full, "wait"),
                              examples_of(parts.tune, header, full, "wait"), full)
    run_t = tune_correlation(examples_of(parts.discard, header, full, "run"),
                             examples_of(parts.tune, header, full, "run"), full)
    ws, rs = EstimatorSetup(wait_t.params, full), EstimatorSetup(run_t.params, full)
    tune_preds = predict_timeline(parts.discard, parts.tune, ws, rs, header)
    test_preds = predict_timeline(parts.train, parts.test, ws, rs, header)

    wait_b = tune_correlation(examples_of(parts.discard, header, base, "wait"),
                              examples_of(parts.tune, header, base, "wait"), base)
    test_preds_b = predict_timeline(parts.train, parts.test,
                                    EstimatorSetup(wait_b.params, base), rs, header)
    r_full, r_base = rmse_report(test_preds, "wait"), rmse_report(test_preds_b, "wait")
    reduction = (r_base - r_full) / r_base * 100
    print(f"promise RMSE {r_full:.0f} vs baseline {r_base:.0f}: reduction {reduction:.1f}%")

    models = [(f"factor={f}", f, LinearCloudModel(f)) for f in DEFAULT_OVERHEAD_GRID]
    rows = evaluate_models(tune_preds, test_preds, models, CutoffSpec(mode="fit"))
    print(f"cutoff: alpha={rows[0].cutoff_alpha:.4g} beta={rows[0].cutoff_beta:.4f} "
          f"({rows[0].cutoff_source})  run_rmse={rows[0].run_rmse:.0f}")
    if verbose:
        print(f"{'factor':>7} {'wo_cloud':>8} {'wo_saved(M)':>12} {'w_cloud':>8} "
              f"{'w_saved(M)':>11} {'opt_cloud':>9} {'opt_saved(M)':>12} {'hits':>6} {'miss':>5}")
        for r in rows:
            print(f"{r.factor:>7} {r.without_cutoff.on_cloud:>8} "
                  f"{r.without_cutoff.saved_time/1e6:>12.2f} {r.with_cutoff.on_cloud:>8} "
                  f"{r.with_cutoff.saved_time/1e6:>11.2f} {r.optimal.on_cloud:>9} "
                  f"{r.optimal.saved_time/1e6:>12.2f} {r.hits:>6} {r.misses:>5}")
    ok_a = all(rows[i].with_cutoff.on_cloud >= rows[i + 1].with_cutoff.on_cloud
               for i in range(1, len(rows) - 1))
    ok_c = all(r.with_cutoff.saved_time >= r.without_cutoff.saved_time
               for r in rows if r.factor >= 0.5)
    ok_opt = all(r.optimal.saved_time >= max(0.0, r.without_cutoff.saved_time,
                                             r.with_cutoff.saved_time) for r in rows)
    print(f"(a)={ok_a} (c)={ok_c} opt={ok_opt} reduction={reduction:.1f}% [{time.time()-t0:.0f}s]")
    return reduction, rows


if __name__ == "__main__":
    run(int(sys.argv[1]) if len(sys.argv) > 1 else 2024)
