"""
Where does the error come from?
===============================

The total error of a program splits into a splitting part (exact sub-flows
composed in the wrong way) and a primitive part (inexact sub-flows). The
fine prediction re-runs the same program with ten times more substeps, so
|ref - coarse| <= |ref - fine| + |fine - coarse| always holds.
"""

import numpy as np

from hycop.datagen import build_dataset, default_spec
from hycop import experiments as ex
from hycop.executor import strang_steps
from hycop.primitives import SystemTag, dictionary


def strang_decomposition(data, specs, N):
    idx, frac = strang_steps(len(specs), 1.0, N)
    index = np.tile(idx, (len(data), 1))
    dec, _ = ex.decomposition(index, data.T[:, None] * frac[None], data, specs)
    return dec.relative()


# exact primitives: the primitive part vanishes and only splitting is left
ad = build_dataset(default_spec(SystemTag.AD1D, n_train=0, n_id=20, n_ood=0))["id"]
r = strang_decomposition(ad, dictionary(SystemTag.AD1D), 2)
print(f"AD1D: total {r.total.mean():.1e}, primitive {r.primitive.max():.1e}")

# Burgers: both parts are present and both shrink with N
bu = build_dataset(default_spec(SystemTag.BURGERS1D, n_train=0, n_id=20, n_ood=0))["id"]
for N in (1, 4):
    r = strang_decomposition(bu, dictionary(SystemTag.BURGERS1D), N)
    print(f"Burgers N={N}: total {r.total.mean():.2e}, splitting {r.splitting.mean():.2e}, "
          f"primitive {r.primitive.mean():.2e}, max residual {r.residual.max():.1e}")

# a dictionary that lacks the reaction: the missing physics shows up as splitting error
adr = build_dataset(default_spec(SystemTag.ADR2D, n_train=0, n_id=20, n_ood=0))["id"]
r = strang_decomposition(adr, dictionary(SystemTag.ADR2D)[:2], 1)
print(f"ADR2D without reaction: total {r.total.mean():.3f}, splitting {r.splitting.mean():.3f}, "
      f"primitive {r.primitive.mean():.1e}")
