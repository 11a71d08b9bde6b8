"""Scale-free regime features that condition the policy.

Each system maps a query ``(params, u0, T)`` to a short vector of dimensionless
numbers and coefficient-of-variation statistics, with ``T`` last. Raw values are
kept on the :class:`FeatureVector`; the policy sees them through a fixed
per-system affine standardization (centre/scale picked from the training
ranges) clipped to [-5, 5].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Field, spectral_derivative
from .primitives import PdeParams, SystemTag

EPS = 1e-8
FEATURE_SET_ID = "dimensionless-v1"
RAW_FEATURE_SET_ID = "raw-ic-v1"

FEATURE_NAMES = {
    SystemTag.AD1D: ("log1p_peclet", "cov_u", "cov_du", "T"),
    SystemTag.BURGERS1D: ("log1p_reynolds", "log1p_grad_strength", "amplitude", "T"),
    SystemTag.SWE1D: ("max_froude", "cov_h", "cov_hu", "T"),
    SystemTag.ADR2D: ("log1p_peclet_x", "log1p_peclet_y", "damkohler", "cov_u",
                      "cov_du_x", "cov_du_y", "T"),
    SystemTag.KS1D: ("W", "T", "cov_u", "spectral_centroid"),
}

# (centre, scale) per feature, matching FEATURE_NAMES order
_STANDARDIZE = {
    SystemTag.AD1D: ((5.5, 1.5), (0.5, 0.5), (0.5, 0.5), (0.5, 0.3)),
    SystemTag.BURGERS1D: ((5.5, 1.5), (1.0, 0.5), (0.5, 0.3), (0.5, 0.3)),
    SystemTag.SWE1D: ((0.1, 0.1), (0.05, 0.05), (0.5, 0.5), (0.27, 0.08)),
    SystemTag.ADR2D: ((2.0, 1.0), (2.0, 1.0), (1.0, 1.0), (0.5, 0.5), (0.5, 0.5),
                      (0.5, 0.5), (0.22, 0.08)),
    SystemTag.KS1D: ((32.0, 8.0), (6.5, 1.5), (1.0, 0.5), (0.3, 0.2)),
}


@dataclass(frozen=True)
class FeatureVector:
    system: SystemTag
    names: tuple[str, ...]
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def standardized(self) -> np.ndarray:
        return standardize(self.system, self.values, raw=self.names[0] == "u0[0]")


def standardize(system, values, raw=False) -> np.ndarray:
    """Map raw feature values (..., m) into the policy's input range."""
    values = np.asarray(values, dtype=np.float64)
    if raw:
        return np.clip(values, -5.0, 5.0)
    cs = np.array(_STANDARDIZE[SystemTag(system)])
    return np.clip((values - cs[:, 0]) / cs[:, 1], -5.0, 5.0)


def feature_dim(system, feature_set="dimensionless", n_values=None) -> int:
    if feature_set == "raw":
        return int(n_values) + 1
    return len(FEATURE_NAMES[SystemTag(system)])


ABS_UPSAMPLE = 4


def _upsample(a, grid, factor=ABS_UPSAMPLE):
    """Band-limited interpolant of (B, *n) data on a grid ``factor`` times finer."""
    axes = tuple(range(-grid.dim, 0))
    spec = np.fft.fftn(a, axes=axes)
    for ax, n in zip(axes, grid.n_points):
        spec = np.fft.fftshift(spec, axes=ax)
        pad = [(0, 0)] * spec.ndim
        extra = (factor - 1) * n
        pad[ax] = (extra // 2, extra - extra // 2)
        spec = np.fft.ifftshift(np.pad(spec, pad), axes=ax)
    return np.fft.ifftn(spec, axes=axes).real * factor ** grid.dim


def _cov(a, grid):
    """Coefficient of variation in variance form, Var(a) / max(mean|a|, eps)^2.

    mean|a| is taken on a band-limited interpolant for periodic grids: the kink
    of |.| makes the plain grid mean only second-order accurate, which breaks
    agreement across resolutions.
    """
    axes = tuple(range(1, grid.dim + 1))
    fine = _upsample(a, grid) if grid.periodic else a
    return np.var(a, axis=axes) / np.maximum(np.mean(np.abs(fine), axis=axes), EPS) ** 2


def features_batch(system, u0: np.ndarray, p: dict[str, np.ndarray], T, grid) -> np.ndarray:
    """Raw features for a batch ``u0`` of shape (B, C, *n); returns (B, m)."""
    system = SystemTag(system)
    u0 = np.asarray(u0, dtype=np.float64)
    B = u0.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=np.float64), (B,))
    L = grid.length[0]

    if system is SystemTag.AD1D:
        u = u0[:, 0]
        du = spectral_derivative(u, grid, 0)
        pe = np.abs(p["c"]) * L / np.maximum(p["D"], EPS)
        cols = [np.log1p(pe), _cov(u, grid), _cov(du, grid), T]
    elif system is SystemTag.BURGERS1D:
        u = u0[:, 0]
        du = spectral_derivative(u, grid, 0)
        amp = np.max(np.abs(u), axis=1)
        re = amp * L / np.maximum(p["nu"], EPS)
        cols = [np.log1p(re), np.log1p(np.max(np.abs(du), axis=1)), amp, T]
    elif system is SystemTag.SWE1D:
        h, m = u0[:, 0], u0[:, 1]
        hs = np.maximum(h, EPS)
        froude = np.max(np.abs(m / hs) / np.sqrt(p["g"][:, None] * hs), axis=1)
        cols = [froude, _cov(h, grid), _cov(m, grid), T]
    elif system is SystemTag.ADR2D:
        u = u0[:, 0]
        dux = spectral_derivative(u, grid, 0)
        duy = spectral_derivative(u, grid, 1)
        Lx, Ly = grid.length
        pex = np.abs(p["cx"]) * Lx / np.maximum(p["Dx"], EPS)
        pey = np.abs(p["cy"]) * Ly / np.maximum(p["Dy"], EPS)
        speed = np.hypot(p["cx"], p["cy"])
        da = p["r"] * Lx / np.maximum(speed, EPS)
        cols = [np.log1p(pex), np.log1p(pey), da, _cov(u, grid), _cov(dux, grid), _cov(duy, grid), T]
    elif system is SystemTag.KS1D:
        u = u0[:, 0]
        n = u.shape[-1]
        power = np.abs(np.fft.rfft(u, axis=-1)) ** 2
        k = np.fft.rfftfreq(n, d=1.0 / n)[None, :] / p["W"][:, None]
        centroid = np.sum(k * power, axis=1) / np.maximum(np.sum(power, axis=1), EPS)
        cols = [p["W"], T, _cov(u, grid), centroid]
    else:
        raise ValueError(system)
    return np.stack([np.asarray(c, dtype=np.float64) for c in cols], axis=1)


def extract_features(system, params: PdeParams, u0: Field, T: float) -> FeatureVector:
    system = SystemTag(system)
    p = {k: np.array([v]) for k, v in params.values.items()}
    vals = features_batch(system, u0.values[None], p, T, u0.grid)[0]
    return FeatureVector(system, FEATURE_NAMES[system], vals)


def raw_batch(u0: np.ndarray, T) -> np.ndarray:
    u0 = np.asarray(u0, dtype=np.float64)
    B = u0.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=np.float64), (B,))
    return np.concatenate([u0.reshape(B, -1), T[:, None]], axis=1)


def raw_ic_features(u0: Field, T: float, system=SystemTag.AD1D) -> FeatureVector:
    """Flattened initial condition (all channels) followed by T."""
    vals = raw_batch(u0.values[None], T)[0]
    names = tuple(f"u0[{i}]" for i in range(len(vals) - 1)) + ("T",)
    return FeatureVector(SystemTag(system), names, vals)
