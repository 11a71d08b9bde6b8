"""Benchmark query sets: parameter ranges, IC families, reference targets, files.

Every initial condition is an analytic function of the grid coordinates whose
random coefficients come from a per-record seed, so the same record can be
re-sampled on a finer grid (resolution transfer) and regenerated bit-for-bit.

File layout::

    HYCOP-DATASET 1
    { JSON header: system, grid, record layout, splits, offsets, ... }
    END-HEADER
    <fixed-width little-endian float64 records>

One record is ``[split, family, ic_seed, T, params..., u0..., target...]``;
for KS the target is the whole trajectory of ``n_snapshots`` states.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, UnknownIcFamily
from .fields import Boundary, Field, Grid
from .primitives import CHANNELS, PARAM_NAMES, SystemTag
from .reference import ks_batch, ks_grid, reference_batch

FORMAT_LINE = "HYCOP-DATASET 1"
END_LINE = "END-HEADER"
SPLITS = ("train", "id", "ood", "transfer")
KS_SNAPSHOTS = 41


def _pdist(x, x0, L):
    """Signed periodic distance from x0."""
    return (x - x0 + 0.5 * L) % L - 0.5 * L


def _gauss(x, x0, s, L):
    return np.exp(-0.5 * (_pdist(x, x0, L) / s) ** 2)


def _tophat(x, x0, a, w, L):
    d = _pdist(x, x0, L)
    return 0.5 * (np.tanh((d + a) / w) - np.tanh((d - a) / w))


def _fourier(rng, x, L, modes, decay=1.0):
    """Random real Fourier series over the given integer modes."""
    out = np.zeros_like(x)
    for m in modes:
        a, b = rng.normal(size=2) / m ** decay
        out += a * np.cos(2 * np.pi * m * x / L) + b * np.sin(2 * np.pi * m * x / L)
    return out


def _unit(v):
    return v / max(np.max(np.abs(v)), 1e-12)


# --- 1D advection-diffusion ------------------------------------------------

def _ad_gaussian(rng, x, L):
    return rng.uniform(0.5, 1.5) * _gauss(x, rng.uniform(0, L), rng.uniform(0.3, 1.0), L)


def _ad_step(rng, x, L):
    return rng.uniform(0.5, 1.5) * _tophat(x, rng.uniform(0, L), rng.uniform(1.0, 3.0),
                                           rng.uniform(0.1, 0.3), L)


def _ad_sine(rng, x, L):
    m = rng.integers(1, 4)
    return rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * m * x / L + rng.uniform(0, 2 * np.pi))


def _ad_multi_gaussian(rng, x, L):
    out = np.zeros_like(x)
    for _ in range(rng.integers(2, 5)):
        out += rng.uniform(0.3, 1.0) * _gauss(x, rng.uniform(0, L), rng.uniform(0.3, 0.8), L)
    return out


def _ad_fourier(rng, x, L):
    return rng.uniform(0.5, 1.5) * _unit(_fourier(rng, x, L, range(1, 6)))


def _ad_narrow_wide(rng, x, L):
    s = rng.uniform(0.15, 0.25) if rng.random() < 0.5 else rng.uniform(2.0, 3.0)
    return rng.uniform(0.5, 1.5) * _gauss(x, rng.uniform(0, L), s, L)


def _ad_high_freq(rng, x, L):
    # ripple on a smooth bump so the target keeps O(1) norm at high D
    m = rng.integers(6, 11)
    return (_gauss(x, rng.uniform(0, L), rng.uniform(0.8, 1.5), L)
            + rng.uniform(0.3, 0.6) * np.sin(2 * np.pi * m * x / L + rng.uniform(0, 2 * np.pi)))


def _ad_multi_step(rng, x, L):
    out = np.zeros_like(x)
    for _ in range(rng.integers(2, 4)):
        out += rng.uniform(0.5, 1.0) * _tophat(x, rng.uniform(0, L), rng.uniform(0.5, 1.5),
                                               rng.uniform(0.05, 0.1), L)
    return out


# --- 1D Burgers ---------------------------------------------------------------

def _bu_step(rng, x, L):
    return rng.uniform(0.3, 0.8) * _tophat(x, rng.uniform(0, L), rng.uniform(0.2, 0.5),
                                           rng.uniform(0.03, 0.08), L)


def _bu_sine(rng, x, L):
    m = rng.integers(1, 3)
    return rng.uniform(0.3, 0.8) * np.sin(2 * np.pi * m * x / L + rng.uniform(0, 2 * np.pi))


def _bu_gaussian(rng, x, L):
    return rng.uniform(0.3, 0.8) * _gauss(x, rng.uniform(0, L), rng.uniform(0.1, 0.3), L)


def _bu_sawtooth(rng, x, L):
    x0 = rng.uniform(0, L)
    out = np.zeros_like(x)
    for m in range(1, 9):
        sigma = np.sinc(m / 9)  # Lanczos smoothing of the partial sum
        out += (-1) ** (m + 1) * sigma * np.sin(2 * np.pi * m * (x - x0) / L) / m
    return rng.uniform(0.3, 0.8) * _unit(out)


def _bu_tanh(rng, x, L):
    w = rng.uniform(0.2, 0.5)
    return rng.uniform(0.3, 0.8) * np.tanh(np.sin(2 * np.pi * (x - rng.uniform(0, L)) / L) / w)


def _bu_fourier(rng, x, L):
    return rng.uniform(0.3, 0.8) * _unit(_fourier(rng, x, L, range(1, 5)))


def _bu_sharp_smooth(rng, x, L):
    w = rng.uniform(0.015, 0.03) if rng.random() < 0.5 else rng.uniform(0.15, 0.3)
    return rng.uniform(0.3, 0.8) * _tophat(x, rng.uniform(0, L), rng.uniform(0.2, 0.5), w, L)


def _bu_large_amp(rng, x, L):
    m = rng.integers(1, 3)
    return rng.uniform(0.8, 1.2) * np.sin(2 * np.pi * m * x / L + rng.uniform(0, 2 * np.pi))


def _bu_multi_step(rng, x, L):
    out = np.zeros_like(x)
    for _ in range(rng.integers(2, 4)):
        out += rng.uniform(0.2, 0.5) * _tophat(x, rng.uniform(0, L), rng.uniform(0.1, 0.25),
                                               rng.uniform(0.03, 0.06), L)
    return out


def _bu_high_freq(rng, x, L):
    # ripple on a mode-1 carrier; a bare high mode decays to ~1e-11 at high nu
    m = rng.integers(3, 6)
    carrier = rng.uniform(0.3, 0.5) * np.sin(2 * np.pi * x / L + rng.uniform(0, 2 * np.pi))
    return carrier + rng.uniform(0.15, 0.3) * np.sin(2 * np.pi * m * x / L
                                                     + rng.uniform(0, 2 * np.pi))


# --- 1D shallow water -----------------------------------------------------------

def _sw(h, hu):
    return np.stack([h, hu])


def _sw_gaussian(rng, x, L):
    h = 1.0 + rng.uniform(0.1, 0.4) * _gauss(x, rng.uniform(0, L), rng.uniform(0.5, 1.5), L)
    return _sw(h, np.zeros_like(x))


def _sw_dam_smooth(rng, x, L):
    h = 1.0 + rng.uniform(0.2, 0.6) * _tophat(x, rng.uniform(0, L), rng.uniform(1.5, 3.0),
                                              rng.uniform(0.3, 0.8), L)
    return _sw(h, np.zeros_like(x))


def _sw_fourier(rng, x, L):
    h = 1.0 + rng.uniform(0.05, 0.2) * _unit(_fourier(rng, x, L, range(1, 4)))
    u = rng.uniform(0.0, 0.2) * _unit(_fourier(rng, x, L, range(1, 4)))
    return _sw(h, h * u)


def _sw_step_smooth(rng, x, L):
    h = 1.0 + rng.uniform(0.1, 0.4) * _tophat(x, rng.uniform(0, L), rng.uniform(1.0, 2.5),
                                              rng.uniform(0.2, 0.5), L)
    return _sw(h, h * rng.uniform(-0.5, 0.5))


def _sw_rarefaction(rng, x, L):
    h = np.ones_like(x) + 0.05 * _gauss(x, rng.uniform(0, L), 1.0, L)
    u = rng.uniform(0.2, 0.6) * np.tanh(np.sin(2 * np.pi * (x - rng.uniform(0, L)) / L) / 0.3)
    return _sw(h, h * u)


def _sw_high_froude(rng, x, L):
    h = 1.0 + 0.1 * _gauss(x, rng.uniform(0, L), 1.0, L)
    return _sw(h, h * rng.uniform(1.5, 2.5) * np.sign(rng.uniform(-1, 1)))


def _sw_transcritical(rng, x, L):
    h = 1.0 - rng.uniform(0.3, 0.5) * _gauss(x, rng.uniform(0, L), rng.uniform(0.8, 1.5), L)
    return _sw(h, np.full_like(x, rng.uniform(1.5, 2.5)))


def _sw_hydraulic_jump(rng, x, L):
    jump = rng.uniform(0.5, 1.0) * _tophat(x, rng.uniform(0, L), rng.uniform(1.5, 3.0),
                                           rng.uniform(0.05, 0.1), L)
    h = 1.0 + jump
    return _sw(h, h * rng.uniform(0.5, 1.0) * jump)


def _sw_standing(rng, x, L):
    m = rng.integers(5, 9)
    h = 1.0 + rng.uniform(0.05, 0.15) * np.cos(2 * np.pi * m * x / L + rng.uniform(0, 2 * np.pi))
    return _sw(h, np.zeros_like(x))


def _sw_dam_break(rng, x, L):
    """Sharp dam at x0 near the right wall; deep water on the left."""
    x0 = rng.uniform(7.5, 8.5) * L / 10.0
    h = np.where(x < x0, rng.uniform(1.5, 2.5), 1.0)
    return _sw(h, np.zeros_like(x))


# --- 2D ADR ------------------------------------------------------------------

def _adr_gaussian(rng, X, Y, L):
    x0, y0 = rng.uniform(0, L, 2)
    s = rng.uniform(0.08, 0.2)
    return rng.uniform(0.5, 1.0) * _gauss(X, x0, s, L) * _gauss(Y, y0, s, L)


def _adr_step(rng, X, Y, L):
    return rng.uniform(0.5, 1.0) * _tophat(X, rng.uniform(0, L), rng.uniform(0.15, 0.3),
                                           rng.uniform(0.03, 0.08), L)


def _adr_ring(rng, X, Y, L):
    x0, y0 = rng.uniform(0, L, 2)
    r = np.hypot(_pdist(X, x0, L), _pdist(Y, y0, L))
    R, s = rng.uniform(0.15, 0.3), rng.uniform(0.04, 0.08)
    return rng.uniform(0.5, 1.0) * np.exp(-((r - R) / s) ** 2)


def _adr_stripes(rng, X, Y, L):
    m, n = rng.integers(1, 3, 2)
    return 0.5 + 0.4 * np.sin(2 * np.pi * (m * X + n * Y) / L + rng.uniform(0, 2 * np.pi))


def _adr_multi_gaussian(rng, X, Y, L):
    out = np.zeros_like(X)
    for _ in range(rng.integers(2, 5)):
        x0, y0 = rng.uniform(0, L, 2)
        s = rng.uniform(0.06, 0.15)
        out += rng.uniform(0.3, 0.6) * _gauss(X, x0, s, L) * _gauss(Y, y0, s, L)
    return np.minimum(out, 1.0)


def _adr_sigmoid(rng, X, Y, L):
    th = rng.uniform(0, 2 * np.pi)
    phase = np.sin(2 * np.pi * (X * np.cos(th) + Y * np.sin(th)) / L + rng.uniform(0, 2 * np.pi))
    return 1.0 / (1.0 + np.exp(-phase / rng.uniform(0.1, 0.3)))


def _adr_narrow_wide(rng, X, Y, L):
    x0, y0 = rng.uniform(0, L, 2)
    s = rng.uniform(0.04, 0.06) if rng.random() < 0.5 else rng.uniform(0.3, 0.4)
    return rng.uniform(0.5, 1.0) * _gauss(X, x0, s, L) * _gauss(Y, y0, s, L)


def _adr_saturation(rng, X, Y, L):
    x0, y0 = rng.uniform(0, L, 2)
    bump = _gauss(X, x0, 0.15, L) * _gauss(Y, y0, 0.15, L)
    if rng.random() < 0.5:
        return 0.95 - 0.05 * bump
    return 0.02 * rng.uniform(0.5, 1.0) * bump


def _adr_high_freq(rng, X, Y, L):
    m, n = rng.integers(3, 5, 2)
    return 0.5 + 0.4 * np.sin(2 * np.pi * (m * X + n * Y) / L + rng.uniform(0, 2 * np.pi))


def _adr_sharp_front(rng, X, Y, L):
    return rng.uniform(0.5, 1.0) * _tophat(X, rng.uniform(0, L), rng.uniform(0.15, 0.3),
                                           rng.uniform(0.01, 0.02), L)


# --- KS --------------------------------------------------------------------------

def _ks_two_mode(rng, x, L):
    W = L / (2 * np.pi)
    m1, m2 = rng.integers(1, 11, 2)
    a1, a2 = rng.uniform(0.5, 1.5, 2)
    p1, p2 = rng.uniform(0, 2 * np.pi, 2)
    return a1 * np.cos(m1 * x / W + p1) + a2 * np.cos(m2 * x / W + p2)


def _ks_fourier(rng, x, L):
    return rng.uniform(0.5, 1.5) * _unit(_fourier(rng, x, L, range(1, 9), decay=0.5))


FAMILIES = {
    SystemTag.AD1D: {
        "gaussian": _ad_gaussian, "step": _ad_step, "sine": _ad_sine,
        "multi_gaussian": _ad_multi_gaussian, "fourier": _ad_fourier,
        "narrow_wide_gaussian": _ad_narrow_wide, "high_freq": _ad_high_freq,
        "multi_step": _ad_multi_step,
    },
    SystemTag.BURGERS1D: {
        "step": _bu_step, "sine": _bu_sine, "gaussian": _bu_gaussian, "sawtooth": _bu_sawtooth,
        "tanh": _bu_tanh, "fourier": _bu_fourier,
        "sharp_smooth_step": _bu_sharp_smooth, "large_amplitude": _bu_large_amp,
        "multi_step": _bu_multi_step, "high_freq": _bu_high_freq,
    },
    SystemTag.SWE1D: {
        "gaussian": _sw_gaussian, "dam_smooth": _sw_dam_smooth, "fourier": _sw_fourier,
        "step_smooth": _sw_step_smooth, "rarefaction": _sw_rarefaction,
        "high_froude": _sw_high_froude, "transcritical": _sw_transcritical,
        "hydraulic_jump": _sw_hydraulic_jump, "standing_wave": _sw_standing,
        "dam_break": _sw_dam_break,
    },
    SystemTag.ADR2D: {
        "gaussian": _adr_gaussian, "step": _adr_step, "ring": _adr_ring,
        "stripes": _adr_stripes, "multi_gaussian": _adr_multi_gaussian,
        "sigmoid": _adr_sigmoid,
        "narrow_wide_gaussian": _adr_narrow_wide, "saturation_extinction": _adr_saturation,
        "high_freq": _adr_high_freq, "sharp_front": _adr_sharp_front,
    },
    SystemTag.KS1D: {"two_mode": _ks_two_mode, "fourier": _ks_fourier},
}

ID_FAMILIES = {
    SystemTag.AD1D: ("gaussian", "step", "sine", "multi_gaussian", "fourier"),
    SystemTag.BURGERS1D: ("step", "sine", "gaussian", "sawtooth", "tanh", "fourier"),
    SystemTag.SWE1D: ("gaussian", "dam_smooth", "fourier", "step_smooth", "rarefaction"),
    SystemTag.ADR2D: ("gaussian", "step", "ring", "stripes", "multi_gaussian", "sigmoid"),
    SystemTag.KS1D: ("two_mode", "fourier"),
}
OOD_FAMILIES = {
    SystemTag.AD1D: ("narrow_wide_gaussian", "high_freq", "multi_step"),
    SystemTag.BURGERS1D: ("sharp_smooth_step", "large_amplitude", "multi_step", "high_freq"),
    SystemTag.SWE1D: ("high_froude", "transcritical", "hydraulic_jump", "standing_wave"),
    SystemTag.ADR2D: ("narrow_wide_gaussian", "saturation_extinction", "high_freq",
                      "sharp_front"),
    SystemTag.KS1D: ("two_mode", "fourier"),
}


def sample_ic(system, family: str, seed: int, grid: Grid | None = None) -> Field:
    """Deterministic initial condition of one family on ``grid`` (default benchmark grid)."""
    system = SystemTag(system)
    try:
        fn = FAMILIES[system][family]
    except KeyError:
        raise UnknownIcFamily(f"{system.value} has no IC family {family!r}") from None
    grid = default_grid(system) if grid is None else grid
    rng = np.random.default_rng(int(seed))
    L = grid.length[0]
    if grid.dim == 2:
        X, Y = grid.coords()
        v = fn(rng, X, Y, L)
    else:
        v = fn(rng, grid.axis_coords(0), L)
    if system is SystemTag.KS1D:
        v = v - v.mean()
    return Field(grid, v)


def default_grid(system, W: float = 32.0) -> Grid:
    system = SystemTag(system)
    if system is SystemTag.AD1D:
        return Grid.line(64, 10.0)
    if system is SystemTag.BURGERS1D:
        return Grid.line(64, 2.0)
    if system is SystemTag.SWE1D:
        return Grid.line(64, 10.0)
    if system is SystemTag.ADR2D:
        return Grid.square(32, 1.0)
    return ks_grid(W)


# ---------------------------------------------------------------------------

Interval = tuple[float, float]


@dataclass(frozen=True)
class SplitSpec:
    count: int
    params: dict[str, tuple[Interval, ...]]
    families: tuple[str, ...]
    T: Interval
    boundary: Boundary = Boundary.PERIODIC


@dataclass(frozen=True)
class BenchmarkSpec:
    system: SystemTag
    splits: dict[str, SplitSpec]
    seed: int = 0
    n_points: int | None = None
    n_snapshots: int = KS_SNAPSHOTS

    def __post_init__(self):
        object.__setattr__(self, "system", SystemTag(self.system))
        names = PARAM_NAMES[self.system]
        for split, s in self.splits.items():
            if split not in SPLITS:
                raise ConfigError(f"unknown split {split!r}", field="splits")
            if s.count < 1:
                raise ConfigError(f"split {split} needs at least one sample", field=f"{split}.count")
            if set(s.params) != set(names):
                raise ConfigError(f"split {split} must give ranges for {names}",
                                  field=f"{split}.params")
            for name, ivs in s.params.items():
                for lo, hi in ivs:
                    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                        raise ConfigError(f"bad range [{lo}, {hi}]", field=f"{split}.{name}")
            lo, hi = s.T
            if not 0 < lo <= hi:
                raise ConfigError(f"bad T range [{lo}, {hi}]", field=f"{split}.T")
            for fam in s.families:
                if fam not in FAMILIES[self.system]:
                    raise ConfigError(f"unknown IC family {fam!r}", field=f"{split}.families")
        if "id" in self.splits and "ood" in self.splits:
            for name in names:
                for a, b in self.splits["ood"].params[name]:
                    for c, d in self.splits["id"].params[name]:
                        if max(a, c) < min(b, d):
                            raise ConfigError(f"OOD range [{a}, {b}] overlaps ID [{c}, {d}]",
                                              field=f"ood.{name}")

    @property
    def grid(self) -> Grid:
        g = default_grid(self.system)
        return g if self.n_points is None else g.with_points(self.n_points)


_ID_RANGES = {
    SystemTag.AD1D: {"c": ((0.5, 3.0),), "D": ((0.01, 0.5),)},
    SystemTag.BURGERS1D: {"nu": ((0.005, 0.1),)},
    SystemTag.SWE1D: {"g": ((9.0, 11.0),)},
    SystemTag.ADR2D: {"cx": ((0.2, 1.5),), "cy": ((0.2, 1.5),), "Dx": ((0.05, 0.2),),
                      "Dy": ((0.05, 0.2),), "r": ((0.1, 1.0),)},
    SystemTag.KS1D: {"W": ((24.0, 40.0),)},
}
_OOD_RANGES = {
    SystemTag.AD1D: {"c": ((0.1, 0.5), (3.0, 5.0)), "D": ((0.001, 0.01), (0.5, 1.0))},
    SystemTag.BURGERS1D: {"nu": ((0.002, 0.005), (0.1, 0.2))},
    SystemTag.SWE1D: {"g": ((7.0, 9.0), (11.0, 13.0))},
    SystemTag.ADR2D: {"cx": ((0.1, 0.2), (1.5, 2.5)), "cy": ((0.1, 0.2), (1.5, 2.5)),
                      "Dx": ((0.01, 0.05), (0.2, 0.4)), "Dy": ((0.01, 0.05), (0.2, 0.4)),
                      "r": ((0.05, 0.1), (1.0, 2.5))},
    SystemTag.KS1D: {"W": ((40.0, 50.0),)},
}
TRAIN_T = {SystemTag.AD1D: (0.1, 1.0), SystemTag.BURGERS1D: (0.1, 1.0),
           SystemTag.SWE1D: (0.15, 0.4), SystemTag.ADR2D: (0.1, 0.35), SystemTag.KS1D: (5.0, 8.0)}
EVAL_T = {SystemTag.AD1D: (0.5, 0.5), SystemTag.BURGERS1D: (0.5, 0.5),
          SystemTag.SWE1D: (0.3, 0.3), SystemTag.ADR2D: (0.2, 0.2), SystemTag.KS1D: (5.0, 8.0)}
OOD_T = dict(EVAL_T, **{SystemTag.KS1D: (8.0, 20.0)})


def default_spec(system, n_train=2000, n_id=200, n_ood=200, seed=0, n_transfer=0,
                 n_points=None) -> BenchmarkSpec:
    system = SystemTag(system)
    splits = {}
    if n_train:
        splits["train"] = SplitSpec(n_train, _ID_RANGES[system], ID_FAMILIES[system], TRAIN_T[system])
    if n_id:
        splits["id"] = SplitSpec(n_id, _ID_RANGES[system], ID_FAMILIES[system], EVAL_T[system])
    if n_ood:
        splits["ood"] = SplitSpec(n_ood, _OOD_RANGES[system], OOD_FAMILIES[system], OOD_T[system])
    if n_transfer:
        if system is not SystemTag.SWE1D:
            raise ConfigError("the dam-break transfer split exists for SWE1D only",
                              field="transfer")
        splits["transfer"] = SplitSpec(n_transfer, _ID_RANGES[system], ("dam_break",),
                                       (0.3, 0.3), Boundary.WALL)
    return BenchmarkSpec(system, splits, seed, n_points)


def _draw(rng, intervals):
    """Uniform over a union of intervals (interval chosen by length)."""
    ivs = np.array(intervals, dtype=np.float64)
    w = ivs[:, 1] - ivs[:, 0]
    i = rng.choice(len(ivs), p=w / w.sum()) if w.sum() > 0 else 0
    return rng.uniform(ivs[i, 0], ivs[i, 1])


def _record_rng(seed, split_code, i, attempt):
    return np.random.default_rng(np.random.SeedSequence([seed, split_code, i, attempt]))


def draw_query(spec: BenchmarkSpec, split: str, i: int, attempt: int = 0):
    """(params dict, family, ic_seed, T) for one record; pure in its arguments."""
    s = spec.splits[split]
    rng = _record_rng(spec.seed, SPLITS.index(split), i, attempt)
    params = {name: _draw(rng, s.params[name]) for name in PARAM_NAMES[spec.system]}
    family = s.families[rng.integers(len(s.families))]
    ic_seed = int(rng.integers(0, 2 ** 31))
    T = rng.uniform(*s.T) if s.T[1] > s.T[0] else s.T[0]
    return params, family, ic_seed, float(T)


@dataclass
class SplitData:
    system: SystemTag
    grid: Grid
    params: dict[str, np.ndarray]
    families: list[str]
    ic_seed: np.ndarray
    T: np.ndarray
    u0: np.ndarray
    target: np.ndarray
    trajectory: np.ndarray | None = None  # KS: (B, S, N)

    def __len__(self):
        return len(self.T)

    def grid_for(self, i) -> Grid:
        if self.system is SystemTag.KS1D:
            return Grid.line(self.grid.n_points[0], 2 * np.pi * float(self.params["W"][i]))
        return self.grid

    def cell_volume(self) -> np.ndarray:
        if self.system is SystemTag.KS1D:
            return 2 * np.pi * self.params["W"] / self.grid.n_points[0]
        return np.full(len(self), self.grid.cell_volume)

    def subset(self, idx) -> "SplitData":
        idx = np.asarray(idx)
        return SplitData(self.system, self.grid, {k: v[idx] for k, v in self.params.items()},
                         [self.families[i] for i in idx], self.ic_seed[idx], self.T[idx],
                         self.u0[idx], self.target[idx],
                         None if self.trajectory is None else self.trajectory[idx])


def _solve(system, u0, p, T, grid, n_snapshots):
    if system is SystemTag.KS1D:
        traj = ks_batch(u0[:, 0], p["W"], T, n_snapshots=n_snapshots)
        bad = ~np.all(np.isfinite(traj.reshape(len(T), -1)) &
                      (np.abs(traj.reshape(len(T), -1)) < 1e6), axis=1)
        return traj[:, -1][:, None], traj, bad
    out = reference_batch(system, u0, p, T, grid)
    return out, None, ~np.all(np.isfinite(out.reshape(len(T), -1)), axis=1)


def generate_split(spec: BenchmarkSpec, split: str, max_attempts: int = 20) -> tuple[SplitData, int]:
    """Sample and solve one split. Returns (data, number of resampled records)."""
    system, s = spec.system, spec.splits[split]
    grid = spec.grid.with_boundary(s.boundary)
    n = s.count
    attempts = np.zeros(n, dtype=np.int64)
    queries = [draw_query(spec, split, i) for i in range(n)]
    todo = np.arange(n)
    u0 = np.empty((n, CHANNELS[system]) + grid.n_points)
    target = np.empty_like(u0)
    traj = np.empty((n, spec.n_snapshots, grid.n_points[0])) if system is SystemTag.KS1D else None
    resampled = 0
    while todo.size:
        for i in todo:
            prm, fam, seed, T = queries[i]
            g = Grid.line(grid.n_points[0], 2 * np.pi * prm["W"]) if system is SystemTag.KS1D else grid
            u0[i] = sample_ic(system, fam, seed, g).values
        p = {k: np.array([queries[i][0][k] for i in todo]) for k in PARAM_NAMES[system]}
        T = np.array([queries[i][3] for i in todo])
        out, tr, bad = _solve(system, u0[todo], p, T, grid, spec.n_snapshots)
        target[todo] = out
        if tr is not None:
            traj[todo] = tr
        todo = todo[bad]
        resampled += todo.size
        for i in todo:
            attempts[i] += 1
            if attempts[i] > max_attempts:
                raise RuntimeError(f"record {i} of split {split} diverged {max_attempts} times")
            queries[i] = draw_query(spec, split, int(i), int(attempts[i]))
    data = SplitData(
        system, grid,
        {k: np.array([q[0][k] for q in queries]) for k in PARAM_NAMES[system]},
        [q[1] for q in queries], np.array([q[2] for q in queries], dtype=np.int64),
        np.array([q[3] for q in queries]), u0, target, traj)
    return data, resampled


@dataclass
class BenchmarkDataset:
    spec: BenchmarkSpec
    splits: dict[str, SplitData]
    header: dict = field(default_factory=dict)

    @property
    def system(self) -> SystemTag:
        return self.spec.system

    def __getitem__(self, split) -> SplitData:
        return self.splits[split]


def build_dataset(spec: BenchmarkSpec, path=None, log=None) -> BenchmarkDataset:
    splits, resampled = {}, {}
    for name in spec.splits:
        splits[name], resampled[name] = generate_split(spec, name)
        if log is not None:
            log(f"{spec.system.value} {name}: {len(splits[name])} records, "
                f"{resampled[name]} resampled after reference divergence")
    ds = BenchmarkDataset(spec, splits, {"resampled": resampled})
    if path is not None:
        save_dataset(path, ds)
    return ds


# ---------------------------------------------------------------------------
# persistence

def _spec_json(spec: BenchmarkSpec) -> dict:
    return {
        "system": spec.system.value, "seed": spec.seed, "n_points": spec.n_points,
        "n_snapshots": spec.n_snapshots,
        "splits": {name: {"count": s.count, "params": {k: [list(iv) for iv in v]
                                                       for k, v in s.params.items()},
                          "families": list(s.families), "family_weights": "uniform",
                          "T": list(s.T), "boundary": s.boundary.value}
                   for name, s in spec.splits.items()},
    }


def _spec_from_json(d: dict) -> BenchmarkSpec:
    splits = {name: SplitSpec(s["count"], {k: tuple(tuple(iv) for iv in v)
                                           for k, v in s["params"].items()},
                              tuple(s["families"]), tuple(s["T"]), Boundary(s["boundary"]))
              for name, s in d["splits"].items()}
    return BenchmarkSpec(SystemTag(d["system"]), splits, d["seed"], d["n_points"],
                         d["n_snapshots"])


def _layout(spec: BenchmarkSpec):
    system = spec.system
    npts = int(np.prod(spec.grid.n_points))
    state = CHANNELS[system] * npts
    target = spec.n_snapshots * npts if system is SystemTag.KS1D else state
    layout = [["split", 1], ["family", 1], ["ic_seed", 1], ["T", 1],
              ["params", len(PARAM_NAMES[system])], ["u0", state], ["target", target]]
    return layout, sum(c for _, c in layout)


def save_dataset(path, ds: BenchmarkDataset) -> None:
    spec = ds.spec
    layout, width = _layout(spec)
    families = sorted({f for s in spec.splits.values() for f in s.families})
    rows, splits_hdr, offset = [], {}, 0
    for name in sorted(ds.splits, key=SPLITS.index):  # canonical order, so re-saves match
        data = ds.splits[name]
        code = SPLITS.index(name)
        P = np.stack([data.params[k] for k in PARAM_NAMES[spec.system]], axis=1)
        tgt = data.trajectory if data.trajectory is not None else data.target
        block = np.concatenate([
            np.full((len(data), 1), code, dtype=np.float64),
            np.array([families.index(f) for f in data.families], dtype=np.float64)[:, None],
            data.ic_seed.astype(np.float64)[:, None], data.T[:, None], P,
            data.u0.reshape(len(data), -1), tgt.reshape(len(data), -1)], axis=1)
        rows.append(block)
        splits_hdr[name] = {"count": len(data), "first_offset": offset * width * 8,
                            "boundary": data.grid.boundary.value}
        offset += len(data)
    header = {
        "format_version": 1,
        "spec": _spec_json(spec),
        "grid": {"n_points": list(spec.grid.n_points), "length": list(spec.grid.length)},
        "channels": CHANNELS[spec.system],
        "param_names": list(PARAM_NAMES[spec.system]),
        "families": families,
        "split_codes": list(SPLITS),
        "record_layout": layout,
        "record_bytes": width * 8,
        "dtype": "<f8",
        "splits": splits_hdr,
        "record_offsets": [i * width * 8 for i in range(offset)],
        "resampled": ds.header.get("resampled", {}),
    }
    body = np.concatenate(rows).astype("<f8") if rows else np.zeros((0, width), "<f8")
    with open(path, "wb") as fh:
        fh.write(f"{FORMAT_LINE}\n{json.dumps(header, sort_keys=True)}\n{END_LINE}\n".encode())
        fh.write(body.tobytes())


def load_dataset(path) -> BenchmarkDataset:
    raw = Path(path).read_bytes()
    first = raw.find(b"\n")
    if raw[:first].decode() != FORMAT_LINE:
        raise ConfigError(f"{path}: not a dataset file", line=1)
    marker = f"\n{END_LINE}\n".encode()
    end = raw.find(marker)
    header = json.loads(raw[first + 1:end].decode())
    spec = _spec_from_json(header["spec"])
    body = np.frombuffer(raw[end + len(marker):], dtype="<f8")
    width = header["record_bytes"] // 8
    body = body.reshape(-1, width)
    system = spec.system
    grid0 = spec.grid
    npts = grid0.n_points
    C = CHANNELS[system]
    splits = {}
    for name, info in sorted(header["splits"].items(), key=lambda kv: kv[1]["first_offset"]):
        start = info["first_offset"] // (width * 8)
        rec = body[start:start + info["count"]]
        col = 4
        nP = len(header["param_names"])
        P = rec[:, col:col + nP]; col += nP
        ns = C * int(np.prod(npts))
        u0 = rec[:, col:col + ns].reshape((-1, C) + npts); col += ns
        tgt = rec[:, col:]
        traj = None
        if system is SystemTag.KS1D:
            traj = tgt.reshape(-1, spec.n_snapshots, npts[0]).copy()
            target = traj[:, -1][:, None].copy()
        else:
            target = tgt.reshape((-1, C) + npts).copy()
        splits[name] = SplitData(
            system, grid0.with_boundary(info["boundary"]),
            {k: P[:, j].copy() for j, k in enumerate(header["param_names"])},
            [header["families"][int(f)] for f in rec[:, 1]], rec[:, 2].astype(np.int64),
            rec[:, 3].copy(), u0.copy(), target, traj)
    return BenchmarkDataset(spec, splits, header)


def regrid_split(ds: BenchmarkDataset, split: str, n_points: int) -> SplitData:
    """Re-sample a split's analytic ICs at a new resolution and re-solve the references."""
    data = ds[split]
    system = ds.system
    grid = data.grid.with_points(n_points)
    u0 = np.stack([sample_ic(system, fam, seed,
                             Grid.line(n_points, 2 * np.pi * data.params["W"][i])
                             if system is SystemTag.KS1D else grid).values
                   for i, (fam, seed) in enumerate(zip(data.families, data.ic_seed))])
    out, traj, _ = _solve(system, u0, data.params, data.T, grid, ds.spec.n_snapshots)
    return replace(data, grid=grid, u0=u0, target=out, trajectory=traj)
