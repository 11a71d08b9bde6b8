import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hycop.errors import TrainingStalled
from hycop.es import EsConfig, capped_mean, es_gradient, rank_shape, train
from hycop.policy import PolicyArch, PolicyParams

ARCH = PolicyArch(2, 2, 2, K_max=3, k_min=1)  # 33 parameters


def test_rank_shape_examples():
    assert np.allclose(rank_shape([3.0, 1.0, 2.0]), [-0.5, 0.5, 0.0])
    assert np.allclose(rank_shape([1.0, 1.0, 5.0, 0.0]), [0.0, 0.0, -0.5, 0.5])
    assert np.array_equal(rank_shape([4.2]), [0.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e6, 1e6)))
def test_rank_shape_properties(loss):
    w = rank_shape(loss)
    assert abs(w.sum()) < 1e-9 and np.all(np.abs(w) <= 0.5)
    assert np.array_equal(rank_shape(2.0 * loss), w)  # exact monotone maps
    assert np.array_equal(rank_shape(rank_shape(-loss)), w)


def test_antithetic_symmetry():
    rng = np.random.default_rng(0)
    eps = rng.normal(size=(5, 7))
    w = rank_shape(rng.normal(size=10))
    g = es_gradient(w, eps, 0.1)
    # swapping the + and - halves is the same as flipping every direction
    assert np.allclose(es_gradient(np.concatenate([w[5:], w[:5]]), eps, 0.1), -g)
    assert np.allclose(es_gradient(w, -eps, 0.1), -g)


def test_null_case_only_decays():
    cfg = EsConfig(population=8, sigma=0.05, lr=0.1, weight_decay=0.01, generations=20)
    init = PolicyParams.init(ARCH, seed=1)
    res = train(cfg, None, init, loss_fn=lambda th, idx: np.ones((len(th), len(idx))),
                baseline=np.ones(cfg.batch_size))
    assert np.allclose(res.final.theta, 0.99 ** 20 * init.theta)


def quadratic(target):
    def loss(thetas, idx):
        v = np.sum((thetas - target) ** 2, axis=1)
        return np.repeat(v[:, None], len(idx), axis=1)
    return loss


def test_toy_quadratic_oracle():
    target = np.random.default_rng(5).normal(size=ARCH.size)
    init = PolicyParams(ARCH, np.zeros(ARCH.size))
    cfg = EsConfig(population=50, sigma=0.05, lr=0.05, weight_decay=0.0, generations=300)
    res = train(cfg, None, init, loss_fn=quadratic(target))
    start = np.sum(target ** 2)
    assert np.sum((res.final.theta - target) ** 2) < start / 10
    assert res.best_monitor_loss <= np.sum((res.final.theta - target) ** 2) + 1e-12


def test_determinism_and_resume():
    target = np.linspace(-1, 1, ARCH.size)
    init = PolicyParams(ARCH, np.zeros(ARCH.size))
    cfg = EsConfig(population=10, sigma=0.05, lr=0.05, generations=6, seed=3)
    a = train(cfg, None, init, loss_fn=quadratic(target))
    b = train(cfg, None, init, loss_fn=quadratic(target))
    assert np.array_equal(a.final.theta, b.final.theta)
    half = EsConfig(population=10, sigma=0.05, lr=0.05, generations=3, seed=3)
    first = train(half, None, init, loss_fn=quadratic(target))
    second = train(half, None, first.final, start_generation=3, loss_fn=quadratic(target))
    assert np.array_equal(second.final.theta, a.final.theta) and second.generations_done == 6


def test_all_diverged_warns_and_stays_finite():
    cfg = EsConfig(population=4, sigma=0.05, generations=2)
    init = PolicyParams.init(ARCH)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        res = train(cfg, None, init, loss_fn=lambda th, idx: np.full((len(th), len(idx)), np.nan))
    assert any(issubclass(x.category, TrainingStalled) for x in w)
    assert np.all(np.isfinite(res.final.theta))


def test_capped_mean():
    loss = np.array([[1.0, np.nan], [500.0, 2.0]])
    val, div = capped_mean(loss, np.array([10.0, 10.0]))
    assert np.allclose(val, [50.5, 51.0]) and div.tolist() == [True, False]


def test_config_validation():
    with pytest.raises(ValueError):
        EsConfig(sigma=0.0)
    with pytest.raises(ValueError):
        EsConfig(weight_decay=1.0)
