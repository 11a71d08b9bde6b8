"""Numerical sub-flow primitives.

Each primitive advances one physical mechanism of one benchmark system for an
arbitrary duration ``tau``. Kernels are written against batches: state arrays of
shape ``(B, C, *n_points)`` with per-element parameters and durations, so a whole
ES population or dataset can be advanced in one call. Every element of a batch
gets exactly the substep count it would get on its own, and inactive elements
are masked rather than updated with ``dt = 0``, so results do not depend on how
elements are grouped.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import (BoundarySwapUnsupported, BoundaryUnsupported, InvalidDuration,
                     OrderUnmeasurable, StateShapeError, StiffnessCap)
from .fields import Boundary, Field, Grid

STIFFNESS_CAP = 1_000_000
CFL = 0.4
REACTION_DT = 0.1
DUMMY_REACTION_RATE = 1.0


class SystemTag(str, enum.Enum):
    AD1D = "AD1D"
    BURGERS1D = "Burgers1D"
    SWE1D = "SWE1D"
    ADR2D = "ADR2D"
    KS1D = "KS1D"


class Mechanism(str, enum.Enum):
    ADVECTION = "Advection"
    DIFFUSION = "Diffusion"
    REACTION = "Reaction"
    NONLINEAR_ADVECTION = "NonlinearAdvection"
    VISCOUS_DIFFUSION = "ViscousDiffusion"
    WAVE_ADVECTION = "WaveAdvection"
    GRAVITY = "Gravity"
    KS_LINEAR = "KSLinear"
    KS_NONLINEAR = "KSNonlinear"


class SubstepPolicy(str, enum.Enum):
    CFL = "cfl"
    FIXED = "fixed"


PARAM_NAMES = {
    SystemTag.AD1D: ("c", "D"),
    SystemTag.BURGERS1D: ("nu",),
    SystemTag.SWE1D: ("g",),
    SystemTag.ADR2D: ("cx", "cy", "Dx", "Dy", "r"),
    SystemTag.KS1D: ("W",),
}

CHANNELS = {
    SystemTag.AD1D: 1,
    SystemTag.BURGERS1D: 1,
    SystemTag.SWE1D: 2,
    SystemTag.ADR2D: 1,
    SystemTag.KS1D: 1,
}

_NONNEGATIVE = {"D", "nu", "Dx", "Dy"}
_POSITIVE = {"g", "W"}


@dataclass(frozen=True)
class PdeParams:
    system: SystemTag
    values: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        system = SystemTag(self.system)
        names = PARAM_NAMES[system]
        vals = {k: float(v) for k, v in dict(self.values).items()}
        missing = set(names) - set(vals)
        if missing:
            raise ValueError(f"{system.value} needs parameters {sorted(missing)}")
        extra = set(vals) - set(names)
        if extra:
            raise ValueError(f"unknown parameters for {system.value}: {sorted(extra)}")
        for k, v in vals.items():
            if not math.isfinite(v):
                raise ValueError(f"parameter {k} must be finite")
            if k in _NONNEGATIVE and v < 0:
                raise ValueError(f"parameter {k} must be >= 0")
            if k in _POSITIVE and v <= 0:
                raise ValueError(f"parameter {k} must be > 0")
        object.__setattr__(self, "system", system)
        object.__setattr__(self, "values", {k: vals[k] for k in names})

    def __getitem__(self, key):
        return self.values[key]

    def as_vector(self) -> np.ndarray:
        return np.array([self.values[k] for k in PARAM_NAMES[self.system]])

    @classmethod
    def from_vector(cls, system, vec):
        system = SystemTag(system)
        return cls(system, dict(zip(PARAM_NAMES[system], map(float, vec))))


def stack_params(params: list[PdeParams]) -> dict[str, np.ndarray]:
    """Column-stack a list of same-system parameters into per-name arrays."""
    names = PARAM_NAMES[params[0].system]
    return {k: np.array([p.values[k] for p in params], dtype=np.float64) for k in names}


@dataclass(frozen=True)
class PrimitiveSpec:
    system: SystemTag
    mechanism: Mechanism
    substeps: SubstepPolicy
    order: float  # math.inf for schemes that are exact per Fourier mode
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        object.__setattr__(self, "system", SystemTag(self.system))
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        object.__setattr__(self, "substeps", SubstepPolicy(self.substeps))
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if not self.order >= 1:
            raise ValueError("scheme order must be >= 1")

    @property
    def exact(self) -> bool:
        return math.isinf(self.order)

    @property
    def name(self) -> str:
        tag = self.mechanism.value
        return tag if self.boundary is Boundary.PERIODIC else f"{tag}[wall]"


def _spec(system, mech, policy, order):
    return PrimitiveSpec(SystemTag(system), Mechanism(mech), SubstepPolicy(policy), order)


# Dictionaries in index order; the index is what the policy selects.
DICTIONARIES: dict[SystemTag, tuple[PrimitiveSpec, ...]] = {
    SystemTag.AD1D: (
        _spec("AD1D", "Advection", "fixed", math.inf),
        _spec("AD1D", "Diffusion", "fixed", math.inf),
    ),
    SystemTag.BURGERS1D: (
        _spec("Burgers1D", "NonlinearAdvection", "cfl", 3),
        _spec("Burgers1D", "ViscousDiffusion", "fixed", math.inf),
    ),
    SystemTag.SWE1D: (
        _spec("SWE1D", "WaveAdvection", "cfl", 3),
        _spec("SWE1D", "Gravity", "cfl", 3),
    ),
    SystemTag.ADR2D: (
        _spec("ADR2D", "Advection", "fixed", math.inf),
        _spec("ADR2D", "Diffusion", "fixed", math.inf),
        _spec("ADR2D", "Reaction", "fixed", 4),
    ),
    SystemTag.KS1D: (
        _spec("KS1D", "KSLinear", "fixed", math.inf),
        _spec("KS1D", "KSNonlinear", "cfl", 3),
    ),
}


def dictionary(system) -> tuple[PrimitiveSpec, ...]:
    return DICTIONARIES[SystemTag(system)]


def dummy_reaction(system) -> PrimitiveSpec:
    """A reaction primitive for systems whose physics has no reaction term."""
    return _spec(system, "Reaction", "fixed", 4)


def swap_boundary_variant(spec: PrimitiveSpec, boundary) -> PrimitiveSpec:
    """Same mechanism, with wall-reflection ghost cells instead of periodic wrap."""
    if spec.system is not SystemTag.SWE1D:
        raise BoundarySwapUnsupported(f"{spec.system.value} primitives have no wall variant")
    return replace(spec, boundary=Boundary(boundary))


# ---------------------------------------------------------------------------
# spectral helpers

def rfft_wavenumbers(grid: Grid):
    """Angular wavenumber arrays matching ``rfftn`` over the grid axes.

    Returns ``(ks, odd_ks)`` where ``odd_ks`` has Nyquist entries zeroed, as
    required for odd-order operators to keep real fields real.
    """
    ks, odd = [], []
    for ax in range(grid.dim):
        n, h = grid.n_points[ax], grid.spacing[ax]
        if ax == grid.dim - 1:
            k = 2 * np.pi * np.fft.rfftfreq(n, d=h)
        else:
            k = 2 * np.pi * np.fft.fftfreq(n, d=h)
        ko = k.copy()
        if n % 2 == 0:
            ko[np.abs(np.round(k * h / (2 * np.pi) * n)) == n // 2] = 0.0
        shape = [1] * grid.dim
        shape[ax] = k.size
        ks.append(k.reshape(shape))
        odd.append(ko.reshape(shape))
    return ks, odd


def _rfft(u, grid):
    return np.fft.rfftn(u, axes=tuple(range(-grid.dim, 0)))


def _irfft(uh, grid):
    return np.fft.irfftn(uh, s=grid.n_points, axes=tuple(range(-grid.dim, 0)))


def dealias_mask(grid: Grid) -> np.ndarray:
    """Keep modes with |m| <= N/3 along the (1D) grid axis."""
    n = grid.n_points[-1]
    m = np.arange(n // 2 + 1)
    return (m <= n / 3).astype(np.float64)


def _col(a, ndim):
    """Broadcast a per-element (B,) array against (B, ...) state of rank ``ndim``."""
    return np.asarray(a, dtype=np.float64).reshape((-1,) + (1,) * (ndim - 1))


def _require_periodic(grid, spec):
    if not grid.periodic:
        raise BoundaryUnsupported(f"{spec.name} is spectral and needs a periodic grid")


def _substep_counts(rate, tau, refine, on_cap):
    """ceil(rate * tau) substeps per element, at least one when tau > 0."""
    with np.errstate(invalid="ignore", over="ignore"):
        n = np.ceil(np.asarray(rate, dtype=np.float64) * tau)
    n = np.where(tau > 0, np.maximum(n, 1), 0)
    n = np.where(np.isfinite(n), n, np.inf) * refine
    over = n > STIFFNESS_CAP
    if np.any(over):
        if on_cap == "raise":
            raise StiffnessCap(f"substep count {n[over].max():.3g} exceeds cap {STIFFNESS_CAP}")
        n = np.where(over, 0, n)
    return n.astype(np.int64), over


# ---------------------------------------------------------------------------
# kernels: (u[B,C,...], p{name: (B,)}, tau (B,), grid, refine, on_cap) -> (u, capped)

def _linear_advection(u, p, tau, grid, refine, on_cap):
    _, odd = rfft_wavenumbers(grid)
    nd = u.ndim
    if grid.dim == 1:
        phase = _col(p["c"] * tau, nd) * odd[0]
    else:
        phase = _col(p["cx"] * tau, nd) * odd[0] + _col(p["cy"] * tau, nd) * odd[1]
    return _irfft(_rfft(u, grid) * np.exp(-1j * phase), grid), None


def _diffusion(u, p, tau, grid, refine, on_cap):
    ks, _ = rfft_wavenumbers(grid)
    nd = u.ndim
    if grid.dim == 1:
        nu = p["D"] if "D" in p else p["nu"]
        rate = _col(nu * tau, nd) * ks[0] ** 2
    else:
        rate = _col(p["Dx"] * tau, nd) * ks[0] ** 2 + _col(p["Dy"] * tau, nd) * ks[1] ** 2
    return _irfft(_rfft(u, grid) * np.exp(-rate), grid), None


def ks_wavenumbers(W, n):
    """Per-element wavenumbers m/W for a width-W KS domain, shape (B, n//2+1)."""
    m = np.fft.rfftfreq(n, d=1.0 / n)
    return m[None, :] / np.asarray(W, dtype=np.float64).reshape(-1, 1)


def _ks_linear(u, p, tau, grid, refine, on_cap):
    k = ks_wavenumbers(p["W"], grid.n_points[0])[:, None, :]
    mult = np.exp(_col(tau, u.ndim) * (k ** 2 - k ** 4))
    return _irfft(_rfft(u, grid) * mult, grid), None


def burgers_flux_term(uh, grid, mask=None):
    """Spectral -(u^2/2)_x with the product masked to |m| <= N/3."""
    if mask is None:
        mask = dealias_mask(grid)
    k = rfft_wavenumbers(grid)[1][0]
    w = _irfft(uh * mask, grid)
    return -0.5j * k * mask * _rfft(w * w, grid)


def padded_square(uh, n):
    """Alias-free rfft spectrum of u*u by zero-padding to 3n/2 points (the 3/2 rule).

    ``uh`` holds the n//2 + 1 rfft modes of u along the last axis. The Nyquist
    mode is dropped on input and output so real fields stay real.
    """
    m = 3 * n // 2
    vp = np.zeros(uh.shape[:-1] + (m // 2 + 1,), dtype=np.complex128)
    vp[..., :n // 2] = uh[..., :n // 2]
    w = np.fft.irfft(vp, n=m, axis=-1) * (m / n)
    out = np.fft.rfft(w * w, axis=-1)[..., :n // 2 + 1] * (n / m)
    out[..., n // 2] = 0.0
    return out


def ks_nonlinear_term(vh, k, n):
    """Spectral -(u^2/2)_x for KS with the 3/2-rule product."""
    return -0.5j * k * padded_square(vh, n)


def _nonlinear_advection(u, p, tau, grid, refine, on_cap):
    """SSPRK3 on u_t = -(u^2/2)_x, pseudospectral, CFL-limited substeps.

    Burgers masks the flux product to |m| <= N/3; KS (``W`` in p) uses the
    3/2-rule padded product and keeps every resolved mode.
    """
    N = grid.n_points[0]
    if "W" in p:
        k = ks_wavenumbers(p["W"], N)[:, None, :]
        h = 2 * np.pi * np.asarray(p["W"], dtype=np.float64) / N

        def rhs(v):
            return ks_nonlinear_term(v, k, N)
    else:
        h = grid.spacing[0]
        mask = dealias_mask(grid)

        def rhs(v):
            return burgers_flux_term(v, grid, mask)
    umax = np.max(np.abs(u.reshape(u.shape[0], -1)), axis=1)
    n, capped = _substep_counts(umax / (CFL * h), tau, refine, on_cap)
    uh = _rfft(u, grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        dt = _col(np.where(n > 0, tau / np.maximum(n, 1), 0.0), u.ndim)

    for s in range(int(n.max(initial=0))):
        active = _col(s < n, u.ndim).astype(bool)
        u1 = uh + dt * rhs(uh)
        u2 = 0.75 * uh + 0.25 * (u1 + dt * rhs(u1))
        u3 = uh / 3.0 + 2.0 / 3.0 * (u2 + dt * rhs(u2))
        uh = np.where(active, u3, uh)
    return _irfft(uh, grid), capped


def _ks_nonlinear(u, p, tau, grid, refine, on_cap):
    return _nonlinear_advection(u, p, tau, grid, refine, on_cap)


def logistic_rhs(u, r):
    with np.errstate(over="ignore", invalid="ignore"):  # blow-up is caught by the caller
        return r * u * (1.0 - u)


def _reaction(u, p, tau, grid, refine, on_cap):
    """Pointwise RK4 on du/dt = r u (1 - u); acts on channel 0 only."""
    r = p["r"] if "r" in p else np.full(u.shape[0], DUMMY_REACTION_RATE)
    n, capped = _substep_counts(np.abs(r) / REACTION_DT, tau, refine, on_cap)
    nd = u.ndim - 1
    v = u[:, 0]
    rr = _col(r, nd)
    with np.errstate(divide="ignore", invalid="ignore"):
        dt = _col(np.where(n > 0, tau / np.maximum(n, 1), 0.0), nd)
    for s in range(int(n.max(initial=0))):
        active = _col(s < n, nd).astype(bool)
        k1 = logistic_rhs(v, rr)
        k2 = logistic_rhs(v + 0.5 * dt * k1, rr)
        k3 = logistic_rhs(v + 0.5 * dt * k2, rr)
        k4 = logistic_rhs(v + dt * k3, rr)
        v = np.where(active, v + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), v)
    out = u.copy()
    out[:, 0] = v
    return out, capped


# --- shallow water, finite volume -------------------------------------------

def _pad(U, wall):
    """One ghost cell per side along the last axis."""
    if wall:
        left, right = U[..., :1].copy(), U[..., -1:].copy()
        left[:, 1] *= -1.0
        right[:, 1] *= -1.0
    else:
        left, right = U[..., -1:], U[..., :1]
    return np.concatenate([left, U, right], axis=-1)


def swe_rhs(U, g, dx, mechanism, wall=False):
    """Local Lax-Friedrichs flux divergence for one SWE mechanism.

    ``WaveAdvection`` carries the transport flux (hu, hu^2); ``Gravity`` the
    hydrostatic pressure flux (0, g h^2 / 2) with dissipation scaled by the
    gravity-wave speed. Their sum is the coupled LLF scheme used by the
    reference solver.
    """
    P = _pad(U, wall)
    h, m = P[:, 0], P[:, 1]
    gg = g.reshape(-1, 1)
    if mechanism is Mechanism.WAVE_ADVECTION:
        with np.errstate(divide="ignore", invalid="ignore"):
            vel = m / h
        F = np.stack([m, m * vel], axis=1)
        speed = np.abs(vel)
    elif mechanism is Mechanism.GRAVITY:
        F = np.stack([np.zeros_like(h), 0.5 * gg * h * h], axis=1)
        with np.errstate(invalid="ignore"):
            speed = np.sqrt(gg * np.abs(h))
    else:
        raise ValueError(f"not an SWE mechanism: {mechanism}")
    alpha = np.maximum(speed[:, :-1], speed[:, 1:])[:, None]
    flux = 0.5 * (F[..., :-1] + F[..., 1:]) - 0.5 * alpha * (P[..., 1:] - P[..., :-1])
    return -(flux[..., 1:] - flux[..., :-1]) / dx


def swe_speed(U, g, mechanism):
    h, m = U[:, 0], U[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        if mechanism is Mechanism.WAVE_ADVECTION:
            s = np.abs(m / h)
        else:
            s = np.sqrt(g.reshape(-1, 1) * np.abs(h))
    s = np.where(np.isfinite(s), s, np.inf)
    return s.max(axis=-1)


def _swe_mechanism(u, p, tau, grid, refine, on_cap, mechanism, wall):
    dx = grid.spacing[0]
    g = np.asarray(p["g"], dtype=np.float64)
    n, capped = _substep_counts(swe_speed(u, g, mechanism) / (CFL * dx), tau, refine, on_cap)
    with np.errstate(divide="ignore", invalid="ignore"):
        dt = _col(np.where(n > 0, tau / np.maximum(n, 1), 0.0), u.ndim)
    U = u
    for s in range(int(n.max(initial=0))):
        active = _col(s < n, u.ndim).astype(bool)
        with np.errstate(over="ignore", invalid="ignore"):
            U1 = U + dt * swe_rhs(U, g, dx, mechanism, wall)
            U2 = 0.75 * U + 0.25 * (U1 + dt * swe_rhs(U1, g, dx, mechanism, wall))
            U3 = U / 3.0 + 2.0 / 3.0 * (U2 + dt * swe_rhs(U2, g, dx, mechanism, wall))
        U = np.where(active, U3, U)
    return U, capped


_SPECTRAL = {
    (SystemTag.AD1D, Mechanism.ADVECTION): _linear_advection,
    (SystemTag.AD1D, Mechanism.DIFFUSION): _diffusion,
    (SystemTag.BURGERS1D, Mechanism.NONLINEAR_ADVECTION): _nonlinear_advection,
    (SystemTag.BURGERS1D, Mechanism.VISCOUS_DIFFUSION): _diffusion,
    (SystemTag.ADR2D, Mechanism.ADVECTION): _linear_advection,
    (SystemTag.ADR2D, Mechanism.DIFFUSION): _diffusion,
    (SystemTag.KS1D, Mechanism.KS_LINEAR): _ks_linear,
    (SystemTag.KS1D, Mechanism.KS_NONLINEAR): _ks_nonlinear,
}


def advance_batch(spec: PrimitiveSpec, u: np.ndarray, params: dict[str, np.ndarray],
                  tau: np.ndarray, grid: Grid, refine: int = 1, on_cap: str = "raise"):
    """Advance a batch ``u`` of shape (B, C, *n) by per-element durations ``tau``.

    ``refine`` multiplies every substep count (used by the error estimators).
    With ``on_cap="nan"`` elements that would exceed the stiffness cap come back
    as NaN instead of raising.
    """
    u = np.asarray(u, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    if u.shape[0] == 0:
        return u.copy()
    mech = spec.mechanism
    if mech is Mechanism.REACTION:
        out, capped = _reaction(u, params, tau, grid, refine, on_cap)
    elif mech in (Mechanism.WAVE_ADVECTION, Mechanism.GRAVITY):
        wall = spec.boundary is Boundary.WALL
        out, capped = _swe_mechanism(u, params, tau, grid, refine, on_cap, mech, wall)
    else:
        _require_periodic(grid, spec)
        out, capped = _SPECTRAL[(spec.system, mech)](u, params, tau, grid, refine, on_cap)
    # zero-duration elements are returned bit-for-bit
    idle = _col(tau == 0, u.ndim).astype(bool)
    out = np.where(idle, u, out)
    if capped is not None and np.any(capped):
        out[capped] = np.nan
    return out


def apply_primitive(spec: PrimitiveSpec, params: PdeParams, u: Field, tau: float,
                    refine: int = 1) -> Field:
    """Advance ``u`` by one primitive for duration ``tau``."""
    tau = float(tau)
    if not tau >= 0 or not math.isfinite(tau):
        raise InvalidDuration(f"duration must be finite and >= 0, got {tau}")
    if params.system is not spec.system and spec.mechanism is not Mechanism.REACTION:
        raise ValueError(f"{spec.system.value} primitive given {params.system.value} parameters")
    if u.channels != CHANNELS[spec.system]:
        raise StateShapeError(
            f"{spec.system.value} expects {CHANNELS[spec.system]} channel(s), got {u.channels}")
    if tau == 0.0:
        return u
    p = {k: np.array([v]) for k, v in params.values.items()}
    out = advance_batch(spec, u.values[None], p, np.array([tau]), u.grid, refine)
    return u.replace(out[0])


def primitive_convergence_order(spec: PrimitiveSpec, params: PdeParams, u: Field,
                                tau: float, floor: float = 1e-13) -> float:
    """Observed temporal order from step tau vs tau/2 against a 10x-substepped run."""
    ref = apply_primitive(spec, params, u, tau, refine=10).values
    e1 = np.linalg.norm(apply_primitive(spec, params, u, tau, refine=1).values - ref)
    e2 = np.linalg.norm(apply_primitive(spec, params, u, tau, refine=2).values - ref)
    if spec.exact or min(e1, e2) < floor:
        raise OrderUnmeasurable(f"errors ({e1:.2e}, {e2:.2e}) are below the {floor:g} floor")
    return float(np.log2(e1 / e2))
