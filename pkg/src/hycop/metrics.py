"""Evaluation metrics, KS attractor statistics and the error decomposition.

Array functions take batches shaped (B, C, *n) and return one value per
element; the Field wrappers return plain floats.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BoundaryUnsupported, InsufficientTrajectory, StateShapeError
from .fields import Field, Grid
from .primitives import PdeParams, SystemTag, dictionary, stack_params

BANDS = (0.1, 0.3)
TABLE_COLUMNS = ("model", "split", "RelL2", "fRMSE_low", "fRMSE_mid", "fRMSE_high",
                 "RMSE", "MaxErr", "bRMSE", "cRMSE")
KL_BINS = 64
KL_SMOOTHING = 1e-10
TRANSIENT_FRACTION = 0.1
SE_FORMULA = "mean |log10 E_pred - log10 E_ref| over modes 1..N/3"


class _NotApplicable:
    """Marker for metrics that do not exist for a system (printed as N/A)."""
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "N/A"

    __str__ = __repr__

    def __bool__(self):
        return False


NotApplicable = _NotApplicable()


def _pair(pred, ref):
    if isinstance(pred, Field):
        if not isinstance(ref, Field) or pred.grid != ref.grid or pred.channels != ref.channels:
            raise StateShapeError("prediction and reference live on different grids/channels")
        return pred.values[None], ref.values[None], pred.grid
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise StateShapeError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return pred, ref, None


def _flat(a):
    return a.reshape(a.shape[0], -1)


def rel_l2_batch(pred, ref) -> np.ndarray:
    """||pred - ref|| / ||ref|| over points and channels; NaN where ||ref|| = 0."""
    num = np.linalg.norm(_flat(pred - ref), axis=1)
    den = np.linalg.norm(_flat(ref), axis=1)
    return np.divide(num, den, out=np.full_like(num, np.nan), where=den > 0)


def rmse_batch(pred, ref) -> np.ndarray:
    d = pred - ref
    npts = int(np.prod(d.shape[2:]))
    return np.sqrt(np.sum(_flat(d ** 2), axis=1) / npts)


def max_err_batch(pred, ref) -> np.ndarray:
    return np.max(_flat(np.sqrt(np.sum((pred - ref) ** 2, axis=1))), axis=1)


def l2_norm_batch(a, cell_volume) -> np.ndarray:
    """Quadrature L2 norm; cell_volume may be a scalar or one value per element."""
    return np.sqrt(np.sum(_flat(a ** 2), axis=1) * np.asarray(cell_volume))


def rel_l2(pred, ref) -> float:
    """Relative L2 error; NaN (MaxErr-only case) when the reference is identically zero."""
    p, r, _ = _pair(pred, ref)
    return float(rel_l2_batch(p, r)[0])


def rmse(pred, ref) -> float:
    p, r, _ = _pair(pred, ref)
    return float(rmse_batch(p, r)[0])


def max_err(pred, ref) -> float:
    p, r, _ = _pair(pred, ref)
    return float(max_err_batch(p, r)[0])


# ---------------------------------------------------------------------------

def band_masks(n_points: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Low/mid/high masks over the full FFT mode set, Nyquist at |k| = 0.5."""
    freqs = np.meshgrid(*[np.fft.fftfreq(n) for n in n_points], indexing="ij")
    kr = np.sqrt(sum(f ** 2 for f in freqs))
    lo, hi = BANDS
    return kr < lo, (kr >= lo) & (kr < hi), kr >= hi


def frmse_bands_batch(pred, ref, grid: Grid, magnitude: bool = False) -> np.ndarray:
    """(B, 3) band RMS of the Fourier-coefficient error (DFT divided by point count).

    With ``magnitude=True`` the difference of spectral magnitudes is used
    instead, which ignores phase errors.
    """
    if not grid.periodic:
        raise BoundaryUnsupported("fRMSE needs a periodic grid")
    axes = tuple(range(2, 2 + grid.dim))
    Fp = np.fft.fftn(pred, axes=axes) / grid.size
    Fr = np.fft.fftn(ref, axes=axes) / grid.size
    diff = np.abs(Fp) - np.abs(Fr) if magnitude else np.abs(Fp - Fr)
    power = np.sum(diff ** 2, axis=1)  # summed over channels, (B, *n)
    out = []
    for mask in band_masks(grid.n_points):
        out.append(np.sqrt(power[:, mask].mean(axis=1)) if mask.any() else np.zeros(len(power)))
    return np.stack(out, axis=1)


def frmse_bands(pred: Field, ref: Field, magnitude: bool = False) -> tuple[float, float, float]:
    p, r, grid = _pair(pred, ref)
    return tuple(float(v) for v in frmse_bands_batch(p, r, grid, magnitude)[0])


def boundary_mask(n_points: Sequence[int]) -> np.ndarray:
    mask = np.zeros(tuple(n_points), dtype=bool)
    for ax, n in enumerate(n_points):
        b = max(1, int(np.floor(0.05 * n)))
        idx = [slice(None)] * len(n_points)
        idx[ax] = np.r_[0:b, n - b:n]
        mask[tuple(idx)] = True
    return mask


def brmse_batch(pred, ref) -> np.ndarray:
    mask = boundary_mask(pred.shape[2:])
    err2 = np.sum((pred - ref) ** 2, axis=1)
    return np.sqrt(err2[:, mask].mean(axis=1))


def brmse(pred: Field, ref: Field) -> float:
    p, r, _ = _pair(pred, ref)
    return float(brmse_batch(p, r)[0])


def crmse_batch(pred, ref, system, cell_volume):
    """RMS error of the conserved integrals (mass; plus momentum for SWE)."""
    system = SystemTag(system)
    if system is SystemTag.ADR2D:
        return NotApplicable
    cv = np.asarray(cell_volume, dtype=np.float64)
    sp = tuple(range(2, pred.ndim))
    Cp = np.sum(pred, axis=sp) * cv[..., None] if cv.ndim else np.sum(pred, axis=sp) * cv
    Cr = np.sum(ref, axis=sp) * cv[..., None] if cv.ndim else np.sum(ref, axis=sp) * cv
    return np.sqrt(np.mean((Cp - Cr) ** 2, axis=1))


def crmse(pred: Field, ref: Field, system):
    p, r, grid = _pair(pred, ref)
    out = crmse_batch(p, r, system, grid.cell_volume)
    return out if out is NotApplicable else float(out[0])


# ---------------------------------------------------------------------------
# KS attractor statistics

def _post_transient(traj):
    traj = np.asarray(traj, dtype=np.float64)
    start = int(np.floor(TRANSIENT_FRACTION * traj.shape[0]))
    kept = traj[start:]
    if kept.shape[0] < 10:
        raise InsufficientTrajectory(
            f"{kept.shape[0]} post-transient snapshots, need at least 10")
    return kept


def ks_attractor_metrics(pred_traj, ref_traj) -> tuple[float, float]:
    """(SE, KL) for one pair of trajectories shaped (S, N).

    SE is the mean absolute log10 difference of the post-transient,
    time-averaged energy spectra over modes 1..N/3; KL is KL(ref || pred)
    between 64-bin histograms of the pooled post-transient values on a shared
    range with additive smoothing 1e-10.
    """
    p = _post_transient(pred_traj)
    r = _post_transient(ref_traj)
    if p.shape[1] != r.shape[1]:
        raise StateShapeError("trajectories have different grid sizes")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(r))):
        return float("inf"), float("inf")
    N = p.shape[1]
    Ep = np.mean(np.abs(np.fft.rfft(p, axis=1) / N) ** 2, axis=0)
    Er = np.mean(np.abs(np.fft.rfft(r, axis=1) / N) ** 2, axis=0)
    modes = slice(1, N // 3 + 1)
    tiny = 1e-300
    se = float(np.mean(np.abs(np.log10(Ep[modes] + tiny) - np.log10(Er[modes] + tiny))))
    lo = min(p.min(), r.min())
    hi = max(p.max(), r.max())
    if hi <= lo:
        hi = lo + 1.0
    hp, _ = np.histogram(p, bins=KL_BINS, range=(lo, hi))
    hr, _ = np.histogram(r, bins=KL_BINS, range=(lo, hi))
    P = (hr + KL_SMOOTHING) / np.sum(hr + KL_SMOOTHING)
    Q = (hp + KL_SMOOTHING) / np.sum(hp + KL_SMOOTHING)
    kl = float(np.sum(P * np.log(P / Q)))
    return se, max(kl, 0.0)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    model: str
    split: str
    values: dict

    def cells(self) -> list[str]:
        out = [self.model, self.split]
        for col in TABLE_COLUMNS[2:]:
            v = self.values.get(col, NotApplicable)
            out.append("N/A" if v is NotApplicable or v is None else f"{float(v):.6e}")
        return out


def metric_row(model: str, split: str, pred, ref, grid: Grid, system,
               cell_volume=None) -> MetricRow:
    """Mean of every table metric over a batch (diverged rows count as NaN)."""
    cv = grid.cell_volume if cell_volume is None else cell_volume
    vals = {
        "RelL2": np.mean(rel_l2_batch(pred, ref)),
        "RMSE": np.mean(rmse_batch(pred, ref)),
        "MaxErr": np.mean(max_err_batch(pred, ref)),
        "bRMSE": np.mean(brmse_batch(pred, ref)),
    }
    if grid.periodic:
        lo, mid, hi = np.mean(frmse_bands_batch(pred, ref, grid), axis=0)
        vals.update(fRMSE_low=lo, fRMSE_mid=mid, fRMSE_high=hi)
    c = crmse_batch(pred, ref, system, cv)
    vals["cRMSE"] = c if c is NotApplicable else np.mean(c)
    return MetricRow(model, split, vals)


def format_table(rows: Sequence[MetricRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for row in rows:
        w.writerow(row.cells())
    return buf.getvalue()


def write_table(path, rows: Sequence[MetricRow]) -> None:
    with open(path, "w") as fh:
        fh.write(format_table(rows))


# ---------------------------------------------------------------------------
# error decomposition

@dataclass(frozen=True)
class Decomposition:
    """Per-query error terms, absolute L2 (quadrature) norms."""
    total: np.ndarray
    splitting: np.ndarray
    primitive: np.ndarray
    ref_norm: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.total - (self.splitting + self.primitive)

    def relative(self) -> "Decomposition":
        n = self.ref_norm
        return Decomposition(self.total / n, self.splitting / n, self.primitive / n,
                             np.ones_like(n))


def decompose(coarse, fine, ref, cell_volume) -> Decomposition:
    """total = |ref - coarse|, splitting = |ref - fine|, primitive = |coarse - fine|."""
    return Decomposition(l2_norm_batch(ref - coarse, cell_volume),
                         l2_norm_batch(ref - fine, cell_volume),
                         l2_norm_batch(coarse - fine, cell_volume),
                         l2_norm_batch(ref, cell_volume))


def error_decomposition(program_or_policy, system, params: PdeParams, u0: Field, T: float,
                        specs=None, reference: Field | None = None, refine: int = 10,
                        feature_set: str = "dimensionless") -> Decomposition:
    """Split the error of one query into splitting and primitive parts.

    The fine prediction re-runs the same program with every substep count
    multiplied by ``refine``. Accepts a Program or a PolicyParams (decoded at T).
    """
    from .executor import execute, policy_inputs
    from .policy import PolicyParams, decode_program
    from .reference import reference_solution

    specs = dictionary(system) if specs is None else tuple(specs)
    prog = program_or_policy
    if isinstance(prog, PolicyParams):
        x = policy_inputs(system, feature_set, u0.values[None], stack_params([params]), T,
                          u0.grid)[0]
        prog = decode_program(prog, x, T)
    ref = reference_solution(system, params, u0, T) if reference is None else reference
    coarse = execute(prog, system, params, u0, specs)
    fine = execute(prog, system, params, u0, specs, refine=refine)
    return decompose(coarse.values[None], fine.values[None], ref.values[None],
                     u0.grid.cell_volume)
