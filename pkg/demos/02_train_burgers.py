"""
Learning a composition policy with evolution strategies
=======================================================

A small tanh network reads dimensionless regime features (Reynolds-like
ratio, field variation, horizon) and writes a program for each query. It is
trained without gradients: antithetic Gaussian perturbations, centered
ranks, and a decayed step. This desk run is small enough for a laptop; the
acceptance run in tests/ uses 2000 samples and 100 directions.
"""

import time

import numpy as np

from hycop.datagen import build_dataset, default_spec
from hycop.es import EsConfig
from hycop.executor import strang_calls
from hycop import experiments as ex
from hycop.primitives import SystemTag, dictionary

ds = build_dataset(default_spec(SystemTag.BURGERS1D, n_train=400, n_id=50, n_ood=50, seed=0))
specs = dictionary(SystemTag.BURGERS1D)

cfg = EsConfig(population=40, sigma=0.02, lr=5e-3, generations=30, batch_size=8, seed=0)
t0 = time.perf_counter()
res = ex.train_policy(ds["train"], specs, cfg,
                      log=lambda r: print(r.line()) if r.generation % 5 == 0 else None)
print(f"trained {res.best.arch.size} parameters in {time.perf_counter() - t0:.0f}s")

for split in ("id", "ood"):
    row, pred = ex.evaluate(res.best, ds[split], specs, split)
    base = ex.constant_row(ds[split], split)
    print(f"{split}: RelL2 {row.values['RelL2']:.2e} (constant predictor "
          f"{base.values['RelL2']:.2e}), mean program length {pred.k.mean():.1f}")

# the same budget spent on the fixed Strang schedule
pred = ex.predict(res.best, ds["id"], specs)
N = ex.matched_substeps(pred.calls.mean(), len(specs))
print(f"Strang with N={N} ({strang_calls(2, N)} calls): RelL2 "
      f"{ex.strang_rel_l2(ds['id'], specs, N):.2e}")

# one decoded program, and how it shifts with viscosity
d = ds["id"]
for i in np.argsort(d.params["nu"])[[0, -1]]:
    steps = [(int(j), round(float(t), 3)) for j, t in zip(pred.index[i, :pred.k[i]],
                                                          pred.tau[i, :pred.k[i]])]
    print(f"nu={d.params['nu'][i]:.3f}: {steps}")
