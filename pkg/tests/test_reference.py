import numpy as np
import pytest

from hycop.errors import ReferenceDiverged
from hycop.fields import Boundary, Field, Grid
from hycop.metrics import ks_attractor_metrics, rel_l2
from hycop.primitives import PdeParams, SystemTag
from hycop.reference import (coupled_batch, ks_batch, ks_grid, reference_solution,
                             solve_coupled_finestep, solve_exact_ad, solve_ks_etdrk4)


def line(n=64, L=10.0):
    return Grid.line(n, L)


def bump(g, x0=4.0, s=0.7):
    return np.exp(-((g.axis_coords() - x0) ** 2) / (2 * s * s))


def test_exact_ad_identity_and_translation():
    g = line()
    u0 = Field(g, bump(g))
    p = PdeParams(SystemTag.AD1D, {"c": 1.25, "D": 0.0})
    assert np.array_equal(solve_exact_ad(p, u0, 0.0).values, u0.values)
    h = g.spacing[0]
    t = 8 * h / 1.25  # shift by exactly eight cells
    out = solve_exact_ad(p, u0, t).values[0]
    assert np.max(np.abs(out - np.roll(u0.values[0], 8))) < 1e-10


def test_exact_ad_heat_decay():
    g = line()
    x = g.axis_coords()
    u0 = Field(g, np.sin(2 * np.pi * 3 * x / 10.0))
    p = PdeParams(SystemTag.AD1D, {"c": 0.0, "D": 0.2})
    out = solve_exact_ad(p, u0, 0.7).values[0]
    assert np.max(np.abs(out - u0.values[0] * np.exp(-0.2 * (6 * np.pi / 10) ** 2 * 0.7))) < 1e-12


def test_coupled_ad_matches_exact():
    g = line()
    u0 = Field(g, bump(g))
    p = PdeParams(SystemTag.AD1D, {"c": 2.0, "D": 0.05})
    fine = solve_coupled_finestep(SystemTag.AD1D, p, u0, 0.5)
    assert rel_l2(fine, solve_exact_ad(p, u0, 0.5)) < 1e-8


def test_burgers_total_variation_non_increasing():
    g = Grid.line(64, 2.0)
    x = g.axis_coords()
    u0 = Field(g, 0.6 * np.sin(np.pi * x))
    p = PdeParams(SystemTag.BURGERS1D, {"nu": 0.2})
    tv = [np.sum(np.abs(np.diff(u0.values[0], append=u0.values[0][:1])))]
    for t in (0.1, 0.2, 0.4, 0.8):
        u = solve_coupled_finestep(SystemTag.BURGERS1D, p, u0, t).values[0]
        tv.append(np.sum(np.abs(np.diff(u, append=u[:1]))))
    assert all(b <= a + 1e-12 for a, b in zip(tv, tv[1:]))


def test_swe_lake_at_rest():
    g = line()
    u0 = Field(g, np.stack([np.ones(64), np.zeros(64)]))
    for b in (Boundary.PERIODIC, Boundary.WALL):
        u = Field(g.with_boundary(b), u0.values)
        out = solve_coupled_finestep(SystemTag.SWE1D, PdeParams(SystemTag.SWE1D, {"g": 1.0}),
                                     u, 0.5)
        assert np.max(np.abs(out.values - u.values)) < 1e-12


@pytest.mark.parametrize("system,p,L,ic", [
    (SystemTag.BURGERS1D, {"nu": 0.01}, 2.0, lambda x: 0.5 * np.sin(np.pi * x)),
    (SystemTag.SWE1D, {"g": 1.0}, 10.0,
     lambda x: np.stack([1 + 0.2 * np.exp(-(x - 5) ** 2), np.zeros_like(x)])),
    (SystemTag.AD1D, {"c": 3.0, "D": 0.01}, 10.0, lambda x: np.exp(-(x - 5) ** 2)),
])
def test_self_convergence(system, p, L, ic):
    g = Grid.line(64, L)
    u0 = ic(g.axis_coords())
    u0 = u0 if u0.ndim == 2 else u0[None]
    pp = {k: np.array([v]) for k, v in p.items()}
    a = coupled_batch(system, u0[None], pp, 0.5, g)
    b = coupled_batch(system, u0[None], pp, 0.5, g, refine=2)
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-6


def test_adr_self_convergence():
    g = Grid.square(16, 1.0)
    X, Y = g.coords()
    u0 = (0.5 + 0.3 * np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y))[None, None]
    p = {"cx": np.array([1.0]), "cy": np.array([-0.5]), "Dx": np.array([0.01]),
         "Dy": np.array([0.02]), "r": np.array([2.0])}
    a = coupled_batch(SystemTag.ADR2D, u0, p, 0.2, g)
    b = coupled_batch(SystemTag.ADR2D, u0, p, 0.2, g, refine=2)
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-6


def test_blowup_raises():
    """Logistic growth from u0 < 0 reaches -inf in finite time."""
    g = Grid.square(8, 1.0)
    p = PdeParams(SystemTag.ADR2D, {"cx": 0.0, "cy": 0.0, "Dx": 0.0, "Dy": 0.0, "r": 5.0})
    with pytest.raises(ReferenceDiverged):
        solve_coupled_finestep(SystemTag.ADR2D, p, Field(g, np.full((8, 8), -10.0)), 0.5)


def test_ks_zero_and_stable_mode():
    W = 32.0
    g = ks_grid(W)
    p = PdeParams(SystemTag.KS1D, {"W": W})
    zero = solve_ks_etdrk4(p, Field(g, np.zeros(g.n_points)), 1.0)
    assert len(zero) == 51 and all(np.all(z.values == 0) for z in zero)
    # wavenumber 40/W > 1 is linearly stable: growth rate k^2 - k^4 = -0.33
    u0 = 1e-4 * np.cos(40 * g.axis_coords() / W)
    traj = solve_ks_etdrk4(p, Field(g, u0), 3.0)
    amps = [np.max(np.abs(f.values)) for f in traj]
    assert amps[-1] < 0.5 * amps[0]


def _ks_ic(W, seed=0):
    rng = np.random.default_rng(seed)
    x = ks_grid(W).axis_coords()
    u0 = sum(rng.normal() * np.cos(m * x / W + rng.uniform(0, 6.3)) for m in range(1, 6))
    return (u0 - u0.mean())[None]


def test_ks_attractor_dt_convergence():
    W = 36.0
    u0 = _ks_ic(W)
    a = ks_batch(u0, W, 150.0, dt=0.02, n_snapshots=301)[0]
    b = ks_batch(u0, W, 150.0, dt=0.01, n_snapshots=301)[0]
    se, _ = ks_attractor_metrics(a[100:], b[100:])
    assert se < 0.02


@pytest.mark.parametrize("W", [24.0, 40.0, 50.0])
def test_ks_attractor_stays_physical(W):
    """Bounded chaotic amplitude: the resolved modes dissipate the cascade."""
    traj = ks_batch(_ks_ic(W, 1), W, 100.0, n_snapshots=201)[0]  # default N=256
    assert np.all(np.isfinite(traj))
    assert np.max(np.abs(traj[50:])) < 6.0
    assert np.max(np.abs(traj[50:].mean(axis=1))) < 1e-10


def test_reference_solution_dispatch():
    g = line()
    u0 = Field(g, bump(g))
    p = PdeParams(SystemTag.AD1D, {"c": 1.0, "D": 0.1})
    assert np.array_equal(reference_solution(SystemTag.AD1D, p, u0, 0.3).values,
                          solve_exact_ad(p, u0, 0.3).values)
