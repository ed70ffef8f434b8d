# scratch parameter sweep (not part of the package)
import sys
import time
from dataclasses import replace

import numpy as np

from queueadvisor.backfill import augmented_jobs, simulate
from queueadvisor.cloud import DEFAULT_OVERHEAD_GRID, LinearCloudModel
from queueadvisor.evaluation import (CutoffSpec, EstimatorSetup, evaluate_models,
                                     predict_timeline, rmse_report)
from queueadvisor.features import FeatureSchema
from queueadvisor.pipeline import examples_of
from queueadvisor.swf import partition_for_study
from queueadvisor.synth import SynthConfig, generate_trace
from queueadvisor.tuning import tune_correlation


def pipeline(cfg, seed, discard, tune_n, test_n):
    header, jobs = generate_trace(seed, cfg)
    waits = np.array([j.wait_time for j in jobs], dtype=float)
    runs = np.array([j.run_time for j in jobs], dtype=float)
    stats = (f"wait mean={waits.mean():.0f} med={np.median(waits):.0f} "
             f"zero={np.mean(waits==0):.2f} w>r={np.mean(waits>runs):.2f}")
    sim = simulate(jobs, total_procs=cfg.total_procs)
    aug = augmented_jobs(jobs, sim)
    parts = partition_for_study(aug, discard=discard, tune=tune_n, test=test_n,
                                record_of=lambda a: a.record)
    full = FeatureSchema.full()
    base = FeatureSchema.without("promise")

    wt_f = tune_correlation(examples_of(parts.discard, header, full, "wait"),
                            examples_of(parts.tune, header, full, "wait"), full)
    rt_f = tune_correlation(examples_of(parts.discard, header, full, "run"),
                            examples_of(parts.tune, header, full, "run"), full)
    ws, rs = EstimatorSetup(wt_f.params, full), EstimatorSetup(rt_f.params, full)
    tune_preds = predict_timeline(parts.discard, parts.tune, ws, rs, header)
    test_preds = predict_timeline(parts.train, parts.test, ws, rs, header)

    models = [(f"f={f}", f, LinearCloudModel(f)) for f in DEFAULT_OVERHEAD_GRID]
    rows = evaluate_models(tune_preds, test_preds, models, CutoffSpec(mode="fit"))

    wt_b = tune_correlation(examples_of(parts.discard, header, base, "wait"),
                            examples_of(parts.tune, header, base, "wait"), base)
    preds_base = predict_timeline(parts.train, parts.test,
                                  EstimatorSetup(wt_b.params, base), rs, header)
    r_f, r_b = rmse_report(test_preds, "wait"), rmse_report(preds_base, "wait")
    reduction = (r_b - r_f) / r_b * 100
    return stats, rows, reduction


def report(tag, stats, rows, reduction):
    ok_a = all(rows[i].with_cutoff.on_cloud >= rows[i + 1].with_cutoff.on_cloud
               for i in range(1, len(rows) - 1))
    ok_c = all(r.with_cutoff.saved_time >= r.without_cutoff.saved_time
               for r in rows if r.factor >= 0.5)
    wo = {r.factor: r.without_cutoff.saved_time / 1e6 for r in rows}
    w = {r.factor: r.with_cutoff.saved_time / 1e6 for r in rows}
    beta = rows[0].cutoff_beta
    print(f"{tag}: {stats}")
    print(f"    red={reduction:.1f}% (a)={ok_a} (c)={ok_c} beta={beta:.3f} "
          f"wo@[.5,.75,1,10]={wo[0.5]:.2f},{wo[0.75]:.2f},{wo[1.0]:.2f},{wo[10.0]:.2f} "
          f"w@={w[0.5]:.2f},{w[0.75]:.2f},{w[1.0]:.2f},{w[10.0]:.2f}")
    return ok_a, ok_c, reduction


CONFIGS = {
    "A": dict(target_utilization=0.58, campaign_fraction=0.25, campaign_mean_size=8,
              campaign_run_range=(600.0, 3600.0), hold_prob=0.0, drains=3),
    "B": dict(target_utilization=0.58, campaign_fraction=0.25, campaign_mean_size=8,
              campaign_run_range=(600.0, 3600.0), hold_prob=0.0, drains=6),
    "C": dict(target_utilization=0.55, campaign_fraction=0.28, campaign_mean_size=8,
              campaign_run_range=(600.0, 3600.0), hold_prob=0.0, drains=5),
    "D": dict(target_utilization=0.58, campaign_fraction=0.25, campaign_mean_size=8,
              campaign_run_range=(600.0, 3600.0), hold_prob=0.25, hold_log_mean=6.0,
              hold_log_sigma=1.0, drains=4),
}

if __name__ == "__main__":
    which = sys.argv[1]
    seed = int(sys.argv[2])
    t0 = time.time()
    cfg = replace(SynthConfig(), jobs=20000, **CONFIGS[which])
    stats, rows, reduction = pipeline(cfg, seed, 5000, 500, 10000)
    report(f"{which} seed={seed}", stats, rows, reduction)
    print(f"    [{time.time()-t0:.0f}s]")
