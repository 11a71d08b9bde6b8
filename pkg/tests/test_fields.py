import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hycop.errors import BoundaryUnsupported, StateShapeError
from hycop.fields import Boundary, Field, Grid, dft, gradient, idft, integrate

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def line(n=64, L=10.0, boundary=Boundary.PERIODIC):
    return Grid.line(n, L, boundary)


def test_grid_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Grid.line(3, 1.0)
    with pytest.raises(ValueError):
        Grid.line(8, 0.0)
    with pytest.raises(StateShapeError):
        Field(line(8), np.zeros(9))


def test_field_is_immutable():
    f = Field(line(8), np.arange(8.0))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_dft_constant_is_dc_only():
    g = line()
    s = dft(Field(g, np.full(64, 2.5)))
    assert s[0] == pytest.approx(2.5 * 64)
    assert np.max(np.abs(s[1:])) < 1e-12


def test_dft_pure_tone():
    g = line()
    x = g.axis_coords()
    s = np.abs(dft(Field(g, np.sin(2 * np.pi * x / 10.0))))
    peak = s.max()
    assert set(np.flatnonzero(s > 1e-12 * peak)) == {1, 63}


def test_dft_rejects_wall_grid():
    with pytest.raises(BoundaryUnsupported):
        dft(Field(line(boundary=Boundary.WALL), np.zeros(64)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 32, elements=finite))
def test_dft_round_trip(v):
    g = line(32)
    back = idft(dft(Field(g, v)), g).values[0]
    assert np.linalg.norm(back - v) <= 1e-12 * max(np.linalg.norm(v), 1e-300) + 1e-300


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (8, 8), elements=finite))
def test_parseval_2d(v):
    g = Grid.square(8, 2.0)
    s = dft(Field(g, v))
    assert np.sum(v ** 2) == pytest.approx(np.sum(np.abs(s) ** 2) / v.size, rel=1e-10, abs=1e-10)


def test_gradient_oracles():
    g = line()
    x = g.axis_coords()
    k = 2 * np.pi / 10.0
    assert np.max(np.abs(gradient(Field(g, np.full(64, 3.0))).values)) < 1e-12
    d = gradient(Field(g, np.sin(k * x))).values[0]
    assert np.max(np.abs(d - k * np.cos(k * x))) < 1e-10


def test_gradient_wall_second_order():
    errs = []
    for n in (32, 64):
        g = line(n, 1.0, Boundary.WALL)
        x = g.axis_coords()
        errs.append(np.max(np.abs(gradient(Field(g, np.sin(x))).values[0] - np.cos(x))))
        ramp = gradient(Field(g, x)).values[0]
        assert np.max(np.abs(ramp - 1.0)) < 1e-12
    assert 3.5 < errs[0] / errs[1] < 4.5


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 16, elements=finite), arrays(np.float64, 16, elements=finite),
       finite, finite)
def test_gradient_linear(f, h, a, b):
    g = line(16)
    lhs = gradient(Field(g, a * f + b * h)).values
    rhs = a * gradient(Field(g, f)).values + b * gradient(Field(g, h)).values
    scale = 1 + np.max(np.abs(lhs)) + np.max(np.abs(rhs))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale * 1e3


def test_integrate_oracles():
    g = line()
    x = g.axis_coords()
    assert integrate(Field(g, np.zeros(64))) == 0.0
    assert abs(integrate(Field(g, np.ones(64))) - 10.0) < 1e-14
    assert abs(integrate(Field(g, np.sin(2 * np.pi * x / 10.0)))) < 1e-12
    two = integrate(Field(g, np.stack([np.ones(64), 2 * np.ones(64)])))
    assert np.allclose(two, [10.0, 20.0])
