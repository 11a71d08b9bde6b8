"""Trusted solvers that produce the ground-truth targets.

The coupled solvers integrate every mechanism of a system in one right-hand
side with a step ten times below the advective CFL limit. Spectral systems use
an integrating-factor RK4 with the diffusion folded into the factor, so stiff
diffusion never sets the step. Shallow water uses SSPRK3 on the sum of the two
LLF mechanism fluxes, which is exactly the semi-discrete system the split
primitives approximate. Kuramoto-Sivashinsky uses ETDRK4.
"""
from __future__ import annotations

import numpy as np

from .errors import ReferenceDiverged
from .fields import Field, Grid
from .primitives import (CFL, CHANNELS, Mechanism, PdeParams, SystemTag, burgers_flux_term,
                         dealias_mask, ks_nonlinear_term, ks_wavenumbers, logistic_rhs,
                         rfft_wavenumbers, stack_params, swe_rhs, swe_speed, _col, _irfft, _rfft)

BLOWUP = 1e6
REFERENCE_CFL_FACTOR = 10.0
KS_DT = 0.02
KS_CONTOUR_POINTS = 32
# N=128 leaves the attractor unresolved for W >~ 40 (the state thermalises)
KS_POINTS = 256


def exact_ad_batch(u0: np.ndarray, c, D, t, grid: Grid) -> np.ndarray:
    """Fourier-exact advection-diffusion, u0 of shape (B, 1, N)."""
    ks, odd = rfft_wavenumbers(grid)
    nd = u0.ndim
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (u0.shape[0],))
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (u0.shape[0],))
    D = np.broadcast_to(np.asarray(D, dtype=np.float64), (u0.shape[0],))
    mult = np.exp(-1j * _col(c * t, nd) * odd[0] - _col(D * t, nd) * ks[0] ** 2)
    out = _irfft(_rfft(u0, grid) * mult, grid)
    return np.where(_col(t == 0, nd).astype(bool), u0, out)


def solve_exact_ad(params: PdeParams, u0: Field, t: float) -> Field:
    if t == 0:
        return u0
    out = exact_ad_batch(u0.values[None], params["c"], params["D"], t, u0.grid)
    return u0.replace(out[0])


# ---------------------------------------------------------------------------

def _steps_for(t, dt_max):
    n = np.ceil(np.asarray(t) / dt_max)
    return np.where(np.asarray(t) > 0, np.maximum(n, 1), 0).astype(np.int64)


def _lawson_rk4(uh, lin, rhs, dt, n, nd):
    """Integrating-factor RK4 for v' = lin*v + rhs(v) in spectral space."""
    dtc = _col(dt, nd)
    E2 = np.exp(0.5 * dtc * lin)
    E = E2 * E2
    for s in range(int(n.max(initial=0))):
        active = _col(s < n, nd).astype(bool)
        k1 = rhs(uh)
        k2 = rhs(E2 * (uh + 0.5 * dtc * k1))
        k3 = rhs(E2 * uh + 0.5 * dtc * k2)
        k4 = rhs(E * uh + dtc * E2 * k3)
        new = E * uh + dtc / 6.0 * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)
        uh = np.where(active, new, uh)
    return uh


def coupled_batch(system, u0: np.ndarray, p: dict[str, np.ndarray], t, grid: Grid,
                  refine: float = 1.0) -> np.ndarray:
    """Fine-step coupled solution for a batch; diverged elements come back NaN.

    ``refine`` divides the step further (used for self-convergence checks).
    """
    system = SystemTag(system)
    u0 = np.asarray(u0, dtype=np.float64)
    B, nd = u0.shape[0], u0.ndim
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,)).copy()
    factor = REFERENCE_CFL_FACTOR * refine
    ks, odd = rfft_wavenumbers(grid)

    if system is SystemTag.SWE1D:
        dx = grid.spacing[0]
        g = p["g"]
        speed = swe_speed(u0, g, Mechanism.WAVE_ADVECTION) + swe_speed(u0, g, Mechanism.GRAVITY)
        n = _steps_for(t, CFL * dx / np.maximum(speed, 1e-12) / factor)
        dt = _col(np.where(n > 0, t / np.maximum(n, 1), 0.0), nd)
        wall = not grid.periodic

        def L(U):
            return (swe_rhs(U, g, dx, Mechanism.WAVE_ADVECTION, wall)
                    + swe_rhs(U, g, dx, Mechanism.GRAVITY, wall))

        U = u0
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(int(n.max(initial=0))):
                active = _col(s < n, nd).astype(bool)
                U1 = U + dt * L(U)
                U2 = 0.75 * U + 0.25 * (U1 + dt * L(U1))
                U3 = U / 3.0 + 2.0 / 3.0 * (U2 + dt * L(U2))
                U = np.where(active, U3, U)
        return _flag_blowup(U)

    if system is SystemTag.AD1D:
        c = p["c"]
        lin = -_col(p["D"], nd) * ks[0] ** 2
        speed = np.abs(c) / grid.spacing[0]

        def rhs(v):
            return -1j * _col(c, nd) * odd[0] * v
    elif system is SystemTag.BURGERS1D:
        lin = -_col(p["nu"], nd) * ks[0] ** 2
        speed = np.max(np.abs(u0.reshape(B, -1)), axis=1) / grid.spacing[0]
        mask = dealias_mask(grid)

        def rhs(v):
            return burgers_flux_term(v, grid, mask)
    elif system is SystemTag.ADR2D:
        lin = -_col(p["Dx"], nd) * ks[0] ** 2 - _col(p["Dy"], nd) * ks[1] ** 2
        adv = _col(p["cx"], nd) * odd[0] + _col(p["cy"], nd) * odd[1]
        hx, hy = grid.spacing
        speed = np.maximum(np.abs(p["cx"]) / hx + np.abs(p["cy"]) / hy,
                           np.abs(p["r"]) * CFL / 0.1)
        r = _col(p["r"], nd)

        def rhs(v):
            w = _irfft(v, grid)
            return -1j * adv * v + _rfft(logistic_rhs(w, r), grid)
    else:
        raise ValueError("use solve_ks_etdrk4 for KS")

    n = _steps_for(t, CFL / np.maximum(speed, 1e-12) / factor)
    dt = np.where(n > 0, t / np.maximum(n, 1), 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        uh = _lawson_rk4(_rfft(u0, grid), lin, rhs, dt, n, nd)
    out = _irfft(uh, grid)
    out = np.where(_col(t == 0, nd).astype(bool), u0, out)
    return _flag_blowup(out)


def _flag_blowup(U):
    flat = U.reshape(U.shape[0], -1)
    bad = ~np.all(np.isfinite(flat) & (np.abs(flat) <= BLOWUP), axis=1)
    if np.any(bad):
        U = U.copy()
        U[bad] = np.nan
    return U


def solve_coupled_finestep(system, params: PdeParams, u0: Field, t: float,
                           refine: float = 1.0) -> Field:
    system = SystemTag(system)
    if u0.channels != CHANNELS[system]:
        raise ValueError(f"{system.value} expects {CHANNELS[system]} channels")
    p = stack_params([params])
    out = coupled_batch(system, u0.values[None], p, t, u0.grid, refine)
    if not np.all(np.isfinite(out)):
        raise ReferenceDiverged(f"{system.value} reference blew up before t={t}")
    return u0.replace(out[0])


# ---------------------------------------------------------------------------
# Kuramoto-Sivashinsky

def etdrk4_coefficients(lin: np.ndarray, dt, m: int = KS_CONTOUR_POINTS):
    """ETDRK4 weights by contour averaging over m points on a unit circle."""
    h = np.asarray(dt, dtype=np.float64)[..., None] if np.ndim(dt) else float(dt)
    z = lin * h
    roots = np.exp(2j * np.pi * (np.arange(1, m + 1) - 0.5) / m)
    LR = z[..., None] + roots
    E = np.exp(z)
    E2 = np.exp(z / 2)
    Q = h * np.mean((np.exp(LR / 2) - 1) / LR, axis=-1).real
    f1 = h * np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=-1).real
    f2 = h * np.mean((2 + LR + np.exp(LR) * (LR - 2)) / LR ** 3, axis=-1).real
    f3 = h * np.mean((-4 - 3 * LR - LR ** 2 + np.exp(LR) * (4 - LR)) / LR ** 3, axis=-1).real
    return E, E2, Q, f1, f2, f3


def ks_grid(W: float, n: int = KS_POINTS) -> Grid:
    return Grid.line(n, 2 * np.pi * W)


def ks_batch(u0: np.ndarray, W, t, dt: float = KS_DT, n_snapshots: int | None = None):
    """ETDRK4 for a batch of KS states ``u0`` (B, N) with per-element width W.

    Each element takes ``n`` equal steps of size ``t/n <= dt``. With
    ``n_snapshots=S`` the step count is rounded up to a multiple of ``S - 1`` and
    the state is recorded at S evenly spaced times from 0 to t; with ``None``
    every step is recorded (all elements must then share one step count).
    Returns an array of shape (B, S, N).
    """
    u0 = np.asarray(u0, dtype=np.float64)
    B, N = u0.shape
    W = np.broadcast_to(np.asarray(W, dtype=np.float64), (B,))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    n = _steps_for(t, dt)
    if n_snapshots is None:
        if np.unique(n).size > 1:
            raise ValueError("per-step snapshots need a common step count")
        every = np.ones(B, dtype=np.int64)
        n_snapshots = int(n[0]) + 1
    else:
        every = np.maximum(np.ceil(n / (n_snapshots - 1)), 1).astype(np.int64)
        n = every * (n_snapshots - 1)
    h = np.where(t > 0, t / np.maximum(n, 1), dt)
    k = ks_wavenumbers(W, N)
    E, E2, Q, f1, f2, f3 = etdrk4_coefficients(k ** 2 - k ** 4, h)

    def nonlin(v):
        return ks_nonlinear_term(v, k, N)

    v = np.fft.rfft(u0, axis=-1)
    out = np.empty((B, n_snapshots, N))
    out[:, 0] = u0
    rows = np.arange(B)
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(int(n.max(initial=0))):
            active = (s < n)[:, None]
            Nv = nonlin(v)
            a = E2 * v + Q * Nv
            Na = nonlin(a)
            b = E2 * v + Q * Na
            Nb = nonlin(b)
            c = E2 * a + Q * (2 * Nb - Nv)
            Nc = nonlin(c)
            v = np.where(active, E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3, v)
            done = (s + 1) % every == 0
            done &= (s < n)
            if np.any(done):
                idx = rows[done]
                out[idx, (s + 1) // every[idx]] = np.fft.irfft(v[idx], n=N, axis=-1)
    return out


def solve_ks_etdrk4(params: PdeParams, u0: Field, t: float, dt: float = KS_DT) -> list[Field]:
    """Snapshots at every step from 0 to t (inclusive of both ends)."""
    snaps = ks_batch(u0.values, params["W"], t, dt)[0]
    if not np.all(np.isfinite(snaps)):
        raise ReferenceDiverged("KS spectrum went non-finite")
    return [u0.replace(s) for s in snaps]


def reference_batch(system, u0: np.ndarray, p: dict[str, np.ndarray], t, grid: Grid) -> np.ndarray:
    """Ground truth at time t for a batch (B, C, *n); diverged elements are NaN."""
    system = SystemTag(system)
    if system is SystemTag.AD1D:
        return exact_ad_batch(u0, p["c"], p["D"], t, grid)
    if system is SystemTag.KS1D:
        out = ks_batch(u0[:, 0], p["W"], t, n_snapshots=2)[:, -1]
        return _flag_blowup(out[:, None])
    return coupled_batch(system, u0, p, t, grid)


def reference_solution(system, params: PdeParams, u0: Field, t: float) -> Field:
    out = reference_batch(system, u0.values[None], stack_params([params]), t, u0.grid)
    if not np.all(np.isfinite(out)):
        raise ReferenceDiverged(f"{SystemTag(system).value} reference blew up before t={t}")
    return u0.replace(out[0])
