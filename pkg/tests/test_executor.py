import numpy as np
import pytest

from hycop.errors import ExecutionDiverged, StateShapeError
from hycop.fields import Field, Grid, integrate
from hycop.policy import DurationMode, PolicyArch, PolicyParams, Program
from hycop.primitives import PdeParams, SystemTag, dictionary
from hycop.executor import (execute, execute_multi_time, strang_calls, strang_schedule,
                            strang_steps)
from hycop.reference import solve_coupled_finestep, solve_exact_ad

G = Grid.line(64, 10.0)
X = G.axis_coords()
P_AD = PdeParams(SystemTag.AD1D, {"c": 2.0, "D": 0.05})
P_BU = PdeParams(SystemTag.BURGERS1D, {"nu": 0.02})


def bump(x0=4.0, s=0.8):
    return Field(G, np.exp(-((X - x0) ** 2) / (2 * s * s)))


def test_zero_duration_program_is_identity():
    u = bump()
    prog = Program(((0, 0.0), (1, 0.0), (0, 0.0)), 1.0, DurationMode.FREE)
    assert np.array_equal(execute(prog, SystemTag.AD1D, P_AD, u).values, u.values)
    assert np.array_equal(execute(Program((), 1.0, DurationMode.FREE), SystemTag.AD1D, P_AD,
                                  u).values, u.values)


def test_commuting_flows_give_exact_ad():
    """AD flows commute, so any program that advances both mechanisms by T is exact."""
    u = bump()
    exact = solve_exact_ad(P_AD, u, 0.5).values
    for steps in (((0, 0.25), (1, 0.25)), ((1, 0.1), (0, 0.3), (1, 0.1))):
        out = execute(Program(steps, 0.5), SystemTag.AD1D, P_AD, u).values
        assert np.max(np.abs(out - exact)) < 1e-10


def test_order_matters_at_second_order():
    """For Burgers the two Lie orderings differ by O(T^2)."""
    u = Field(Grid.line(64, 2.0), 0.5 * np.sin(np.pi * Grid.line(64, 2.0).axis_coords()))
    gaps = []
    for T in (0.1, 0.05):
        ab = execute(Program(((0, T / 2), (1, T / 2)), T), SystemTag.BURGERS1D, P_BU, u).values
        ba = execute(Program(((1, T / 2), (0, T / 2)), T), SystemTag.BURGERS1D, P_BU, u).values
        gaps.append(np.linalg.norm(ab - ba))
    assert gaps[0] > 0
    assert 3.0 < gaps[0] / gaps[1] < 5.0


def test_multi_time_decodes_per_time():
    a = PolicyArch(4, 4, 2)
    pol = PolicyParams.init(a)
    u = bump()
    outs = execute_multi_time(pol, SystemTag.AD1D, P_AD, u, [0.2, 0.5])
    for t, o in zip((0.2, 0.5), outs):
        assert np.max(np.abs(o.values - solve_exact_ad(P_AD, u, t).values)) < 1e-10
    with pytest.raises(ValueError):
        execute_multi_time(pol, SystemTag.AD1D, P_AD, u, [0.5, 0.2])


def test_strang_schedule():
    idx, dur = strang_steps(2, 1.0, 4)
    assert idx.tolist()[:3] == [1, 0, 1] and len(idx) == strang_calls(2, 4) == 12
    assert np.allclose(dur[:3], [0.125, 0.25, 0.125]) and abs(dur.sum() - 2.0) < 1e-12
    assert strang_calls(3, 4) == 20 and len(strang_steps(3, 1.0, 4)[0]) == 20
    u = bump()
    for N in (1, 8):
        out = strang_schedule(SystemTag.AD1D, P_AD, u, 0.5, N).values
        assert np.max(np.abs(out - solve_exact_ad(P_AD, u, 0.5).values)) < 1e-9


def test_strang_is_second_order_for_burgers():
    g = Grid.line(64, 2.0)
    u = Field(g, 0.5 * np.sin(np.pi * g.axis_coords()))
    ref = solve_coupled_finestep(SystemTag.BURGERS1D, P_BU, u, 0.5).values
    e = [np.linalg.norm(strang_schedule(SystemTag.BURGERS1D, P_BU, u, 0.5, N).values - ref)
         for N in (2, 4)]
    assert 3.0 < e[0] / e[1] < 5.0


def test_divergence_reports_step():
    g = Grid.square(8, 1.0)
    p = PdeParams(SystemTag.ADR2D, {"cx": 0.0, "cy": 0.0, "Dx": 0.0, "Dy": 0.0, "r": 5.0})
    u = Field(g, np.full((8, 8), -10.0))
    prog = Program(((0, 0.01), (2, 0.01), (2, 2.0)), 1.0, DurationMode.FREE)
    with pytest.raises(ExecutionDiverged) as err:
        execute(prog, SystemTag.ADR2D, p, u)
    assert err.value.step == 2


def test_state_shape_checked():
    with pytest.raises(StateShapeError):
        execute(Program(((0, 1.0),), 1.0), SystemTag.SWE1D, PdeParams(SystemTag.SWE1D, {"g": 1.0}),
                bump())


def test_swe_program_conserves_mass():
    h = 1.0 + 0.3 * np.exp(-((X - 5.0) ** 2))
    u = Field(G, np.stack([h, 0.1 * h]))
    prog = Program(((1, 0.1), (0, 0.2), (1, 0.1), (0, 0.1)), 0.5)
    out = execute(prog, SystemTag.SWE1D, PdeParams(SystemTag.SWE1D, {"g": 1.0}), u)
    assert abs(integrate(out)[0] - integrate(u)[0]) < 1e-10 * integrate(u)[0]
    assert len(dictionary(SystemTag.SWE1D)) == 2
