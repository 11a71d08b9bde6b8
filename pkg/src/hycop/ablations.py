"""Desk-scale ablations: ES sensitivity grid, feature ablation, resolution transfer.

Every function is a pure function of its inputs and the master seed in the
EsConfig. Each returns a list of row dicts; ``write_csv`` emits one summary
CSV per ablation.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .datagen import BenchmarkDataset, SplitData, regrid_split
from .es import EsConfig
from .policy import PolicyParams
from .primitives import dictionary

SWEEP_GENERATIONS = 60


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0])
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(f"{r[c]:.6e}" if isinstance(r[c], float) else str(r[c])
                              for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


def half(data: SplitData, seed: int) -> SplitData:
    """Seeded half of a split, used by the reduced-budget sweep."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x68616C66]))
    return data.subset(np.sort(rng.choice(len(data), size=max(1, len(data) // 2), replace=False)))


def run_es_sweep(ds: BenchmarkDataset, base: EsConfig, populations, sigmas,
                 generations: int = SWEEP_GENERATIONS, eval_split="id", threads: int = 1,
                 jobs: int = 1) -> list[dict]:
    """One policy per (M, sigma) cell on half the training set; RelL2 on ``eval_split``."""
    specs = dictionary(ds.system)
    train = half(ds["train"], base.seed)
    data = ds[eval_split]
    cells = [(int(M), float(s)) for M in populations for s in sigmas]

    def cell(ms):
        M, s = ms
        cfg = replace(base, population=M, sigma=s, generations=generations)
        res = ex.train_policy(train, specs, cfg, threads=threads)
        row, _ = ex.evaluate(res.best, data, specs, eval_split)
        return {"M": M, "sigma": s, "RelL2": row.values["RelL2"]}

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(cell, cells))
    return [cell(c) for c in cells]


def plateau_ok(rows: list[dict], sigma=0.02, factor=2.0) -> bool:
    """Best cell within ``factor`` of the best cell in the sigma column."""
    best = min(r["RelL2"] for r in rows)
    col = [r["RelL2"] for r in rows if np.isclose(r["sigma"], sigma)]
    return bool(col) and min(col) <= factor * best


def run_resolution_transfer(policy: PolicyParams, ds: BenchmarkDataset, n_points,
                            splits=("id", "ood"), feature_set="dimensionless") -> list[dict]:
    """Evaluate one checkpoint on ICs re-sampled analytically at each grid size."""
    specs = dictionary(ds.system)
    if policy.arch.n != len(specs):
        raise ValueError("checkpoint dictionary size does not match the system dictionary")
    rows = []
    for split in splits:
        for n in n_points:
            t0 = time.perf_counter()
            data = regrid_split(ds, split, int(n))
            t1 = time.perf_counter()
            row, _ = ex.evaluate(policy, data, specs, split, feature_set=feature_set)
            t2 = time.perf_counter()
            rows.append({"split": split, "N": int(n), "RelL2": row.values["RelL2"],
                         "RMSE": row.values["RMSE"], "MaxErr": row.values["MaxErr"],
                         "reference_s": t1 - t0, "policy_s": t2 - t1})
    return rows


def run_feature_ablation(ds: BenchmarkDataset, cfg: EsConfig, threads: int = 1,
                         feature_sets=("dimensionless", "raw")) -> list[dict]:
    """Twin policies on identical data and seeds, differing only in their inputs."""
    specs = dictionary(ds.system)
    rows = []
    for fs in feature_sets:
        res = ex.train_policy(ds["train"], specs, cfg, fs, threads=threads)
        row = {"features": fs}
        for split in ("id", "ood"):
            r, _ = ex.evaluate(res.best, ds[split], specs, split, feature_set=fs)
            for m in ("RelL2", "RMSE", "MaxErr"):
                row[f"{split}_{m}"] = r.values[m]
        rows.append(row)
    if len(rows) == 2:
        a, b = rows[0]["ood_RelL2"], rows[1]["ood_RelL2"]
        for r in rows:
            r["ood_improvement"] = float((b - a) / b) if b > 0 else float("nan")
    return rows
