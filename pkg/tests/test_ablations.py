import numpy as np
import pytest

from hycop.ablations import (half, plateau_ok, run_es_sweep, run_feature_ablation,
                             run_resolution_transfer, write_csv)
from hycop.datagen import build_dataset, default_spec
from hycop.es import EsConfig
from hycop.experiments import train_policy
from hycop.primitives import SystemTag, dictionary

CFG = EsConfig(population=3, sigma=0.02, generations=2, batch_size=4, seed=2)


@pytest.fixture(scope="module")
def burgers():
    return build_dataset(default_spec(SystemTag.BURGERS1D, n_train=8, n_id=3, n_ood=3, seed=4))


@pytest.fixture(scope="module")
def ad():
    return build_dataset(default_spec(SystemTag.AD1D, n_train=6, n_id=3, n_ood=3, seed=4))


def test_write_csv(tmp_path):
    write_csv(tmp_path / "a.csv", [{"M": 4, "sigma": 0.5, "RelL2": 0.25}])
    assert (tmp_path / "a.csv").read_text() == "M,sigma,RelL2\n4,5.000000e-01,2.500000e-01\n"
    write_csv(tmp_path / "b.csv", [])
    assert (tmp_path / "b.csv").read_text() == ""


def test_half_is_seeded(burgers):
    a, b = half(burgers["train"], 1), half(burgers["train"], 1)
    assert len(a) == 4 and np.array_equal(a.ic_seed, b.ic_seed)
    assert set(a.ic_seed) <= set(burgers["train"].ic_seed)


def test_plateau():
    rows = [{"sigma": 0.02, "RelL2": 0.03}, {"sigma": 0.05, "RelL2": 0.02},
            {"sigma": 0.1, "RelL2": 0.5}]
    assert plateau_ok(rows)
    assert not plateau_ok(rows, factor=1.2)
    assert not plateau_ok(rows, sigma=0.3)


def test_es_sweep_grid_and_parallel_determinism(burgers):
    rows = run_es_sweep(burgers, CFG, [2, 3], [0.01, 0.05], generations=1)
    assert [(r["M"], r["sigma"]) for r in rows] == [(2, 0.01), (2, 0.05), (3, 0.01), (3, 0.05)]
    assert all(np.isfinite(r["RelL2"]) for r in rows)
    again = run_es_sweep(burgers, CFG, [2, 3], [0.01, 0.05], generations=1, jobs=2, threads=2)
    assert rows == again


def test_feature_ablation_rows(burgers):
    rows = run_feature_ablation(burgers, CFG)
    assert [r["features"] for r in rows] == ["dimensionless", "raw"]
    for r in rows:
        assert {"id_RelL2", "ood_RelL2", "ood_MaxErr", "ood_improvement"} <= set(r)
    b = rows[1]["ood_RelL2"]
    assert rows[0]["ood_improvement"] == pytest.approx((b - rows[0]["ood_RelL2"]) / b)


def test_resolution_transfer_on_ad(ad):
    res = train_policy(ad["train"], dictionary(SystemTag.AD1D), CFG)
    rows = run_resolution_transfer(res.best, ad, [64, 128], splits=("id",))
    assert [r["N"] for r in rows] == [64, 128]
    assert all(r["RelL2"] < 1e-9 for r in rows)  # commuting flows are exact at any N
    with pytest.raises(ValueError):
        from hycop.policy import extend_dictionary
        run_resolution_transfer(extend_dictionary(res.best), ad, [64])
