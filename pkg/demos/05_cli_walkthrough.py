"""
The command-line pipeline
=========================

The same steps as the library demos, through the `hycop` command: generate
a dataset from a YAML config, train, evaluate, compare with Strang, and
decompose the error. Every output is a CSV or a plain .dat file.
"""

import tempfile
from pathlib import Path

from hycop.cli import main

CONFIG = """seed: 0
benchmarks:
  - name: burgers
    system: Burgers1D
    n_train: 200
    n_id: 40
    n_ood: 40
es:
  population: 20
  generations: 10
  batch_size: 8
"""

work = Path(tempfile.mkdtemp(prefix="hycop-demo-"))
(work / "burgers.yaml").write_text(CONFIG)
data, ckpt = work / "burgers.dat", work / "policy.ckpt"

for argv in (["gen-data", work / "burgers.yaml", "--out-dir", work],
             ["train", work / "burgers.yaml", "--dataset", data, "--out-dir", work],
             ["eval", ckpt, "--dataset", data, "--out-dir", work],
             ["compare-strang", ckpt, "--dataset", data, "--out-dir", work, "--substeps", 1, 2, 4],
             ["diagnose", "--checkpoint", ckpt, "--dataset", data, "--out-dir", work]):
    print("$ hycop", " ".join(str(a) for a in argv))
    assert main([str(a) for a in argv]) == 0

print("\nfiles in", work)
for f in sorted(work.iterdir()):
    print(f"  {f.name:26s} {f.stat().st_size:>9d} bytes")
print("\ncheckpoint header:")
print("".join(ckpt.read_text().split("theta:")[0]))
