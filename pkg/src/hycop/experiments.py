"""Glue between datasets, policies and metrics shared by the CLI and the ablations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import SplitData
from .es import EsConfig, TrainResult, TrainingTask, train
from .executor import execute_batch, policy_inputs, strang_batch, strang_calls
from .features import feature_dim
from .metrics import (MetricRow, decompose, ks_attractor_metrics, metric_row, rel_l2_batch)
from .policy import PolicyArch, PolicyParams, decode_batch, flow_durations
from .primitives import dictionary
from .reference import reference_batch

DEFAULT_HIDDEN = 4


def n_inputs(system, feature_set, data: SplitData) -> int:
    return feature_dim(system, feature_set, data.u0[0].size)


def default_arch(system, feature_set, data: SplitData, n=None, H=DEFAULT_HIDDEN, K_max=18,
                 k_min=3) -> PolicyArch:
    n = len(dictionary(system)) if n is None else n
    return PolicyArch(n_inputs(system, feature_set, data), H, n, K_max, k_min)


def make_task(data: SplitData, specs, feature_set="dimensionless") -> TrainingTask:
    return TrainingTask(data.system, tuple(specs), data.grid, data.u0, data.params, data.T,
                        data.target, feature_set, cell_volume=data.cell_volume())


@dataclass
class Prediction:
    state: np.ndarray
    diverged_at: np.ndarray
    index: np.ndarray
    tau: np.ndarray
    k: np.ndarray

    @property
    def calls(self) -> np.ndarray:
        return np.sum(self.tau > 0, axis=1)

    def shares(self, n) -> np.ndarray:
        """(B, n) duration share of each primitive."""
        tot = self.tau.sum(axis=1, keepdims=True)
        return np.stack([np.where(self.index == j, self.tau, 0).sum(axis=1) for j in range(n)],
                        axis=1) / tot


def predict(policy: PolicyParams, data: SplitData, specs, feature_set="dimensionless",
            T=None, u0=None, params=None, refine=1, threads=1) -> Prediction:
    u0 = data.u0 if u0 is None else u0
    params = data.params if params is None else params
    T = data.T if T is None else np.broadcast_to(np.asarray(T, dtype=np.float64), (len(u0),))
    X = policy_inputs(data.system, feature_set, u0, params, T, data.grid)
    index, tau, k = decode_batch(policy.arch, policy.theta, X, T)
    run = flow_durations(index, tau, T)
    if threads > 1 and len(u0) > 1:
        from concurrent.futures import ThreadPoolExecutor
        edges = np.linspace(0, len(u0), min(threads, len(u0)) + 1).astype(int)
        sl = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda s: execute_batch(
                specs, index[s], run[s], {q: v[s] for q, v in params.items()}, u0[s],
                data.grid, refine), sl))
        out = np.concatenate([o for o, _ in parts])
        div = np.concatenate([d for _, d in parts])
    else:
        out, div = execute_batch(specs, index, run, params, u0, data.grid, refine)
    return Prediction(out, div, index, tau, k)


def evaluate(policy: PolicyParams, data: SplitData, specs, split: str, model="HyCOP",
             feature_set="dimensionless", threads=1) -> tuple[MetricRow, Prediction]:
    pred = predict(policy, data, specs, feature_set, threads=threads)
    return metric_row(model, split, pred.state, data.target, data.grid, data.system,
                      data.cell_volume()), pred


def constant_row(data: SplitData, split: str) -> MetricRow:
    return metric_row("constant", split, data.u0, data.target, data.grid, data.system,
                      data.cell_volume())


def mean_rel_l2(pred_state, data: SplitData) -> float:
    return float(np.mean(rel_l2_batch(pred_state, data.target)))


def strang_rel_l2(data: SplitData, specs, N: int) -> float:
    out, _ = strang_batch(specs, data.params, data.u0, data.T, data.grid, N)
    return mean_rel_l2(out, data)


def matched_substeps(mean_calls: float, n: int) -> int:
    """Strang substep count whose call budget is closest to ``mean_calls``."""
    per = strang_calls(n, 1)
    return max(1, int(np.floor(mean_calls / per + 0.5)))


def horizon_table(policy: PolicyParams, data: SplitData, specs, horizons=(1, 5, 10, 20),
                  n_steps=20, feature_set="dimensionless"):
    """Rows (horizon, time, mean RelL2) for query times h * T / n_steps."""
    rows = []
    for h in horizons:
        t = data.T * h / n_steps
        ref = reference_batch(data.system, data.u0, data.params, t, data.grid)
        pred = predict(policy, data, specs, feature_set, T=t)
        rows.append((h, float(np.mean(t)), float(np.mean(rel_l2_batch(pred.state, ref)))))
    return rows


def ks_trajectories(policy: PolicyParams, data: SplitData, specs,
                    feature_set="dimensionless") -> np.ndarray:
    """Predicted (B, S, N) trajectories, one independent program per snapshot time."""
    B, S, N = data.trajectory.shape
    frac = np.arange(1, S) / (S - 1)
    T = (data.T[:, None] * frac[None]).reshape(-1)
    u0 = np.repeat(data.u0, S - 1, axis=0)
    p = {k: np.repeat(v, S - 1) for k, v in data.params.items()}
    pred = predict(policy, data, specs, feature_set, T=T, u0=u0, params=p)
    return np.concatenate([data.u0[:, :1, :].reshape(B, 1, N),
                           pred.state[:, 0].reshape(B, S - 1, N)], axis=1)


def ks_metrics(pred_traj, data: SplitData) -> tuple[float, float]:
    m = np.array([ks_attractor_metrics(p, r) for p, r in zip(pred_traj, data.trajectory)])
    return float(m[:, 0].mean()), float(m[:, 1].mean())


def decomposition(index, tau_run, data: SplitData, specs, refine=10):
    coarse, _ = execute_batch(specs, index, tau_run, data.params, data.u0, data.grid)
    fine, _ = execute_batch(specs, index, tau_run, data.params, data.u0, data.grid, refine)
    return decompose(coarse, fine, data.target, data.cell_volume()), coarse


def train_policy(data: SplitData, specs, cfg: EsConfig, feature_set="dimensionless",
                 initial: PolicyParams | None = None, H=DEFAULT_HIDDEN, K_max=18, k_min=3,
                 start_generation=0, threads=1, log=None) -> TrainResult:
    if initial is None:
        arch = PolicyArch(n_inputs(data.system, feature_set, data), H, len(specs), K_max, k_min)
        initial = PolicyParams.init(arch, cfg.seed)
    task = make_task(data, specs, feature_set)
    return train(cfg, task, initial, start_generation, threads, log)
