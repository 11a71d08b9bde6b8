"""Run programs (compositions of primitive flows) and the fixed Strang baseline."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ExecutionDiverged, StateShapeError
from .features import features_batch, raw_batch, standardize
from .fields import Field, Grid
from .policy import DurationMode, PolicyParams, decode_batch, decode_program, flow_durations, Program
from .primitives import (CHANNELS, PdeParams, PrimitiveSpec, SystemTag, advance_batch,
                         dictionary, stack_params)

DIVERGENCE = 1e6


def _bad(u):
    flat = u.reshape(u.shape[0], -1)
    with np.errstate(invalid="ignore"):
        return ~np.all(np.abs(flat) <= DIVERGENCE, axis=1)  # NaN compares False


def execute_batch(specs: Sequence[PrimitiveSpec], index, tau, p: dict, u0: np.ndarray,
                  grid: Grid, refine: int = 1, on_cap: str = "nan"):
    """Apply B programs step by step (step 0 first).

    ``index`` and ``tau`` have shape (B, K) and ``tau`` holds the durations
    actually executed. Returns (states, diverged_at) where diverged_at is the
    first offending step per element or -1. Diverged elements stop at NaN.
    """
    u = np.array(u0, dtype=np.float64)
    index = np.asarray(index)
    tau = np.asarray(tau, dtype=np.float64)
    B, K = tau.shape
    diverged = np.full(B, -1, dtype=np.int64)
    for r in range(K):
        alive = diverged < 0
        for j, spec in enumerate(specs):
            sel = np.flatnonzero(alive & (index[:, r] == j) & (tau[:, r] > 0))
            if sel.size == 0:
                continue
            sub = {k: v[sel] for k, v in p.items()}
            u[sel] = advance_batch(spec, u[sel], sub, tau[sel, r], grid, refine, on_cap)
        newly = alive & _bad(u)
        if np.any(newly):
            diverged[newly] = r
            u[newly] = np.nan
    return u, diverged


def _check_state(system, u0: Field):
    if u0.channels != CHANNELS[SystemTag(system)]:
        raise StateShapeError(
            f"{SystemTag(system).value} expects {CHANNELS[SystemTag(system)]} channels")


def execute(program: Program, system, params: PdeParams, u0: Field,
            specs: Sequence[PrimitiveSpec] | None = None, refine: int = 1) -> Field:
    """Composite flow of one program; raises ExecutionDiverged with the step index."""
    _check_state(system, u0)
    specs = dictionary(system) if specs is None else tuple(specs)
    if program.k == 0:
        return u0
    if program.indices.max() >= len(specs):
        raise ValueError("program uses a primitive outside the dictionary")
    out, div = execute_batch(specs, program.indices[None], program.flow_durations()[None],
                             stack_params([params]), u0.values[None], u0.grid, refine,
                             on_cap="raise")
    if div[0] >= 0:
        raise ExecutionDiverged(f"state left the finite range at step {div[0]}", step=int(div[0]))
    return u0.replace(out[0])


def policy_inputs(system, feature_set: str, u0: np.ndarray, p: dict, T, grid: Grid) -> np.ndarray:
    """Standardized policy inputs for a batch of queries."""
    if feature_set == "raw":
        return standardize(system, raw_batch(u0, T), raw=True)
    return standardize(system, features_batch(system, u0, p, T, grid))


def predict_batch(policy: PolicyParams, system, specs, u0: np.ndarray, p: dict, T, grid: Grid,
                  feature_set: str = "dimensionless", refine: int = 1, on_cap: str = "nan",
                  X: np.ndarray | None = None):
    """Decode and execute one program per query. Returns (states, diverged_at, index, tau)."""
    if X is None:
        X = policy_inputs(system, feature_set, u0, p, T, grid)
    index, tau, _ = decode_batch(policy.arch, policy.theta, X, T)
    run = flow_durations(index, tau, T)
    out, div = execute_batch(specs, index, run, p, u0, grid, refine, on_cap)
    return out, div, index, tau


def execute_multi_time(policy: PolicyParams, system, params: PdeParams, u0: Field,
                       times: Sequence[float], specs=None,
                       feature_set: str = "dimensionless") -> list[Field]:
    """One independently decoded program per query time, each run from u0."""
    times = [float(t) for t in times]
    if any(t <= 0 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be positive and sorted")
    p = stack_params([params])
    out = []
    for t in times:
        x = policy_inputs(system, feature_set, u0.values[None], p, t, u0.grid)[0]
        prog = decode_program(policy, x, t)
        out.append(execute(prog, system, params, u0, specs))
    return out


# ---------------------------------------------------------------------------
# fixed Strang baseline

def strang_steps(n: int, T: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Primitive indices and durations of the Strang schedule with N substeps.

    n=2: (A_{h/2} B_h A_{h/2})^N with A the second dictionary entry (the
    diffusion-like flow outermost); n=3: (A_{h/2} B_{h/2} C_h B_{h/2} A_{h/2})^N
    with A, B, C in dictionary order.
    """
    if N < 1:
        raise ValueError("need at least one substep")
    h = T / N
    if n == 2:
        idx, dur = [1, 0, 1], [h / 2, h, h / 2]
    elif n == 3:
        idx, dur = [0, 1, 2, 1, 0], [h / 2, h / 2, h, h / 2, h / 2]
    else:
        raise ValueError("Strang baseline needs a dictionary of 2 or 3 primitives")
    return np.array(idx * N), np.array(dur * N)


def strang_calls(n: int, N: int) -> int:
    return (3 if n == 2 else 5) * N


def strang_batch(specs, p: dict, u0: np.ndarray, T, grid: Grid, N: int, refine: int = 1,
                 on_cap: str = "nan"):
    B = u0.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=np.float64), (B,))
    idx, frac = strang_steps(len(specs), 1.0, N)
    return execute_batch(specs, np.tile(idx, (B, 1)), T[:, None] * frac[None], p, u0, grid,
                         refine, on_cap)


def strang_schedule(system, params: PdeParams, u0: Field, T: float, N: int,
                    specs=None) -> Field:
    _check_state(system, u0)
    specs = dictionary(system) if specs is None else tuple(specs)
    idx, dur = strang_steps(len(specs), T, N)
    prog = Program(tuple(zip(idx.tolist(), dur.tolist())), T, DurationMode.FREE)
    return execute(prog, system, params, u0, specs)
