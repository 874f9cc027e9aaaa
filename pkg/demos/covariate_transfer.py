"""The synthetic covariate-transfer benchmark for every model kind.

32 genes, two cell types and six perturbations with bimodal responses.  Half
of each cell type's perturbations are held out; each of them was observed in
the other cell type.  Every flow model gets the same budget of 20k training
samples.  The linear additive baseline predicts the mean exactly but not the
spread, which is what MMD picks up.

    python demos/covariate_transfer.py [seed]
"""

import sys

import numpy as np

from pertflow.benchmark import benchmark_dataset, control_mmd, linear_additive_run, run_model

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
ds = benchmark_dataset(seed)
ctrl = control_mmd(ds)
rows = {"control cells": (float(np.mean(list(ctrl.values()))), None, None)}
la = linear_additive_run(ds, seed)
rows["linear additive"] = (float(np.mean(la.values("mmd_gex"))), float(np.mean(la.values("deg_recall"))), None)
for kind in ("primeflow_unet", "primeflow_mlp", "fm_pca", "fm_pca_ot"):
    run = run_model(kind, ds, seed)
    rows[kind] = (run.mean("mmd_gex"), run.mean("deg_recall"), run.train_seconds + run.sample_seconds)
    print(f"finished {kind}", file=sys.stderr)

print(f"{'model':<18}{'MMD':>8}{'DEG recall@10':>15}{'seconds':>9}")
for name, (mmd, recall, secs) in rows.items():
    rec = "" if recall is None else f"{recall:.3f}"
    sec = "" if secs is None else f"{secs:.0f}"
    print(f"{name:<18}{mmd:>8.3f}{rec:>15}{sec:>9}")
