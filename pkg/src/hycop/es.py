"""Evolution Strategies over the flat policy vector.

Each generation draws a minibatch and M Gaussian directions, scores the 2M
antithetic particles on the minibatch, replaces losses by centered ranks and
takes a decayed step along the rank-weighted direction average. All particle
programs of a generation run as one batched execution (optionally in chunks on
worker threads); per-element results do not depend on the chunking, so the run
is reproducible for any thread count.
"""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .errors import PolicyNumericalError, TrainingStalled
from .executor import execute_batch, policy_inputs
from .fields import Grid
from .metrics import l2_norm_batch
from .policy import PolicyArch, PolicyParams, decode_batch, flow_durations
from .primitives import PrimitiveSpec, SystemTag

RANK_FORMULA = "centered-ranks: w = 0.5 - rank/(2M-1), averaged ties, best loss -> +0.5"
PENALTY_FACTOR = 10.0
MONITOR_SIZE = 32
SELECTIONS = ("sample", "argmax")


@dataclass(frozen=True)
class EsConfig:
    population: int = 500
    sigma: float = 0.02
    lr: float = 5e-3
    weight_decay: float = 1e-3
    generations: int = 200
    batch_size: int = 16
    seed: int = 0
    selection: str = "argmax"  # training-time primitive choice: "argmax" or "sample"

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.weight_decay < 1:
            raise ValueError("weight decay must lie in [0, 1)")
        if self.batch_size < 1 or self.generations < 0:
            raise ValueError("batch size must be >= 1 and generations >= 0")


def rank_shape(losses) -> np.ndarray:
    """Centered ranks in [-0.5, 0.5]; the lowest loss gets +0.5, ties share ranks."""
    losses = np.asarray(losses, dtype=np.float64).reshape(-1)
    n = losses.size
    if n == 1:
        return np.zeros(1)
    ranks = rankdata(losses, method="average") - 1.0
    return 0.5 - ranks / (n - 1)


def es_gradient(weights, eps, sigma) -> np.ndarray:
    """g = 1/(2 M sigma) * sum_i (w_i^+ - w_i^-) eps_i, with weights ordered (+..., -...)."""
    M = eps.shape[0]
    w = np.asarray(weights).reshape(2, M)
    return (w[0] - w[1]) @ eps / (2 * M * sigma)


def es_step(theta, weights, eps, cfg: EsConfig) -> np.ndarray:
    """theta <- (1 - wd)(theta + lr * g).

    The rank weights reward low loss (best = +0.5), so g already points
    downhill in loss and the step adds it.
    """
    g = es_gradient(weights, eps, cfg.sigma)
    return (1.0 - cfg.weight_decay) * (theta + cfg.lr * g)


@dataclass
class TrainingTask:
    """Training queries bound to a dictionary, with policy inputs precomputed."""
    system: SystemTag
    specs: tuple[PrimitiveSpec, ...]
    grid: Grid
    u0: np.ndarray
    params: dict[str, np.ndarray]
    T: np.ndarray
    target: np.ndarray
    feature_set: str = "dimensionless"
    X: np.ndarray = field(default=None, repr=False)
    cell_volume: np.ndarray = field(default=None, repr=False)
    baseline: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.system = SystemTag(self.system)
        self.specs = tuple(self.specs)
        self.T = np.asarray(self.T, dtype=np.float64)
        if self.X is None:
            self.X = policy_inputs(self.system, self.feature_set, self.u0, self.params,
                                   self.T, self.grid)
        if self.cell_volume is None:
            if self.system is SystemTag.KS1D:
                self.cell_volume = 2 * np.pi * self.params["W"] / self.grid.n_points[0]
            else:
                self.cell_volume = np.full(len(self.T), self.grid.cell_volume)
        # loss of the constant predictor u(T) = u0
        self.baseline = l2_norm_batch(self.target - self.u0, self.cell_volume)

    def __len__(self):
        return len(self.T)

    def subset(self, idx) -> "TrainingTask":
        idx = np.asarray(idx)
        return TrainingTask(self.system, self.specs, self.grid, self.u0[idx],
                            {k: v[idx] for k, v in self.params.items()}, self.T[idx],
                            self.target[idx], self.feature_set, self.X[idx],
                            self.cell_volume[idx])

    def run(self, arch: PolicyArch, thetas, idx, threads: int = 1, gumbel=None):
        """Predictions of every theta on queries idx; returns (states (P, B, ...), diverged).

        ``gumbel`` (B, K_max, n) samples the primitive choices; the same draw
        is shared by every theta so particles differ only through theta.
        """
        thetas = np.atleast_2d(thetas)
        idx = np.asarray(idx)
        P, B = len(thetas), len(idx)
        K = arch.K_max
        index = np.zeros((P, B, K), dtype=np.int64)
        tau = np.zeros((P, B, K))
        bad = np.zeros(P, dtype=bool)
        for i, th in enumerate(thetas):
            try:
                j, t, _ = decode_batch(arch, th, self.X[idx], self.T[idx], gumbel=gumbel)
            except PolicyNumericalError:
                bad[i] = True
                continue
            index[i] = j
            tau[i] = flow_durations(j, t, self.T[idx])
        u0 = np.broadcast_to(self.u0[idx], (P,) + self.u0[idx].shape).reshape(
            (P * B,) + self.u0.shape[1:])
        p = {k: np.tile(v[idx], P) for k, v in self.params.items()}
        index = index.reshape(P * B, K)
        tau = tau.reshape(P * B, K)

        def job(sl):
            return execute_batch(self.specs, index[sl], tau[sl], {k: v[sl] for k, v in p.items()},
                                 u0[sl], self.grid, on_cap="nan")

        if threads > 1 and P * B > 1:
            chunks = [slice(a, b) for a, b in _chunks(P * B, threads)]
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(job, chunks))
            out = np.concatenate([o for o, _ in parts])
            div = np.concatenate([d for _, d in parts])
        else:
            out, div = job(slice(None))
        out = out.reshape((P, B) + self.u0.shape[1:])
        div = div.reshape(P, B)
        div[bad] = 0
        out[bad] = np.nan
        return out, div

    def losses(self, arch: PolicyArch, thetas, idx, threads: int = 1, gumbel=None) -> np.ndarray:
        """Per-query L2 losses (P, B); diverged queries are NaN."""
        out, _ = self.run(arch, thetas, idx, threads, gumbel)
        idx = np.asarray(idx)
        diff = (out - self.target[idx][None]).reshape((-1,) + self.u0.shape[1:])
        cv = np.tile(self.cell_volume[idx], len(out))
        with np.errstate(invalid="ignore", over="ignore"):
            return l2_norm_batch(diff, cv).reshape(len(out), len(idx))


def _chunks(n, parts):
    edges = np.linspace(0, n, min(parts, n) + 1).astype(int)
    return zip(edges[:-1], edges[1:])


def capped_mean(loss, baseline) -> tuple[np.ndarray, np.ndarray]:
    """Mean minibatch loss per particle with diverged queries scored at the cap.

    The cap is PENALTY_FACTOR times the minibatch's mean constant-predictor loss.
    Returns (particle losses, per-particle diverged flags).
    """
    cap = PENALTY_FACTOR * float(np.mean(baseline))
    loss = np.asarray(loss, dtype=np.float64)
    finite = np.isfinite(loss)
    scored = np.where(finite, np.minimum(loss, cap), cap)
    return scored.mean(axis=1), ~finite.all(axis=1)


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    mean_loss: float
    min_loss: float
    theta_norm: float
    monitor_loss: float
    diverged: int
    wall_time: float

    def line(self) -> str:
        return (f"gen={self.generation} mean_loss={self.mean_loss:.6e} "
                f"min_loss={self.min_loss:.6e} theta_norm={self.theta_norm:.6e} "
                f"monitor_loss={self.monitor_loss:.6e} diverged={self.diverged} "
                f"wall_time={self.wall_time:.3f}")


@dataclass
class TrainResult:
    final: PolicyParams
    best: PolicyParams
    best_monitor_loss: float
    history: list[GenerationRecord]
    generations_done: int


def monitor_indices(n, seed) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6F6E]))
    return np.sort(rng.choice(n, size=min(MONITOR_SIZE, n), replace=False))


def train(cfg: EsConfig, task: TrainingTask, initial: PolicyParams, start_generation: int = 0,
          threads: int = 1, log: Callable[[GenerationRecord], None] | None = None,
          loss_fn: Callable | None = None, baseline=None) -> TrainResult:
    """Algorithm-1 ES. ``loss_fn(thetas (P, d), idx) -> (P, B)`` overrides PDE execution.

    With ``selection="sample"`` each generation draws one Gumbel sample per
    (query, step, primitive), so the particles are scored on programs drawn
    from softmax(z_r): the softmax relaxation of the categorical choice. The
    monitor, like inference, always uses the argmax program.

    With a custom ``loss_fn`` losses are uncapped unless a per-query
    ``baseline`` is given; diverged (NaN) losses then rank last.

    Generation g uses generator streams derived from (seed, g), so a resumed
    run continues the same sequence. Besides the final theta, the theta with
    the lowest loss on a fixed monitor subset of the training set is kept.
    """
    if task is not None and len(task) == 0:
        raise ValueError("empty training set")
    arch = initial.arch
    n = len(task) if task is not None else cfg.batch_size
    if loss_fn is None:
        def loss_fn(thetas, idx, gumbel=None):
            return task.losses(arch, thetas, idx, threads, gumbel)
        baseline = task.baseline
        sampled = cfg.selection == "sample"
    else:
        sampled = False
        if baseline is None:
            baseline = np.full(n, np.inf)

    mon = monitor_indices(n, cfg.seed)
    theta = initial.theta.copy()

    def monitor(th):
        val, _ = capped_mean(loss_fn(th[None], mon), baseline[mon])
        return float(val[0])

    best_theta, best_loss = theta.copy(), monitor(theta)
    history = []
    M = cfg.population
    for gen in range(start_generation, start_generation + cfg.generations):
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, gen]))
        idx = np.sort(rng.choice(n, size=min(cfg.batch_size, n), replace=False))
        eps = rng.standard_normal((M, theta.size))
        thetas = np.concatenate([theta + cfg.sigma * eps, theta - cfg.sigma * eps])
        if sampled:
            draw = np.random.default_rng(np.random.SeedSequence([cfg.seed, gen, 1]))
            raw = loss_fn(thetas, idx, draw.gumbel(size=(len(idx), arch.K_max, arch.n)))
        else:
            raw = loss_fn(thetas, idx)
        loss, diverged = capped_mean(raw, baseline[idx])
        if not np.any(np.isfinite(raw)):
            warnings.warn(f"generation {gen}: every particle diverged; continuing with capped "
                          f"losses", TrainingStalled, stacklevel=2)
        theta = es_step(theta, rank_shape(loss), eps, cfg)
        mon_loss = monitor(theta)
        if mon_loss < best_loss:
            best_theta, best_loss = theta.copy(), mon_loss
        rec = GenerationRecord(gen, float(loss.mean()), float(loss.min()),
                               float(np.linalg.norm(theta)), mon_loss, int(diverged.sum()),
                               time.perf_counter() - t0)
        history.append(rec)
        if log is not None:
            log(rec)
    return TrainResult(initial.with_theta(theta), initial.with_theta(best_theta), best_loss,
                       history, start_generation + cfg.generations)
