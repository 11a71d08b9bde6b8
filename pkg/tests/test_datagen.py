import numpy as np
import pytest

from hycop.datagen import (FAMILIES, ID_FAMILIES, OOD_FAMILIES, BenchmarkSpec, SplitSpec,
                           build_dataset, default_grid, default_spec, draw_query, load_dataset,
                           sample_ic, save_dataset)
from hycop.errors import ConfigError, UnknownIcFamily
from hycop.primitives import PdeParams, SystemTag
from hycop.reference import solve_exact_ad


@pytest.mark.parametrize("system", list(SystemTag))
def test_every_family_samples_finite_fields(system):
    for fam in FAMILIES[system]:
        u = sample_ic(system, fam, 11)
        assert u.grid == default_grid(system) and np.all(np.isfinite(u.values))
        assert np.array_equal(u.values, sample_ic(system, fam, 11).values)
        if system is SystemTag.KS1D:
            assert abs(u.values.mean()) < 1e-12
        if system is SystemTag.SWE1D:
            assert u.values[0].min() > 0


def test_unknown_family():
    with pytest.raises(UnknownIcFamily):
        sample_ic(SystemTag.AD1D, "ring", 0)


@pytest.mark.parametrize("system", list(SystemTag))
def test_splits_respect_ranges(system):
    spec = default_spec(system, n_train=5, n_id=30, n_ood=30)
    for split, fams in (("id", ID_FAMILIES[system]), ("ood", OOD_FAMILIES[system])):
        s = spec.splits[split]
        for i in range(30):
            prm, fam, _, T = draw_query(spec, split, i)
            assert fam in fams and s.T[0] <= T <= s.T[1]
            for k, v in prm.items():
                assert any(lo <= v <= hi for lo, hi in s.params[k])


def test_spec_validation():
    ok = {"c": ((0.5, 1.0),), "D": ((0.1, 0.2),)}
    with pytest.raises(ConfigError):
        BenchmarkSpec(SystemTag.AD1D, {"id": SplitSpec(3, {"c": ((1.0, 0.5),), "D": ((0.1, 0.2),)},
                                                        ("gaussian",), (0.5, 0.5))})
    with pytest.raises(ConfigError):
        BenchmarkSpec(SystemTag.AD1D, {"id": SplitSpec(3, ok, ("ring",), (0.5, 0.5))})
    with pytest.raises(ConfigError):  # OOD overlaps ID
        BenchmarkSpec(SystemTag.AD1D, {"id": SplitSpec(3, ok, ("gaussian",), (0.5, 0.5)),
                                       "ood": SplitSpec(3, {"c": ((0.8, 2.0),), "D": ((0.3, 0.4),)},
                                                        ("gaussian",), (0.5, 0.5))})


def test_ad_targets_are_exact_and_reproducible(tmp_path):
    spec = default_spec(SystemTag.AD1D, n_train=6, n_id=4, n_ood=4, seed=3)
    ds = build_dataset(spec, tmp_path / "a.bin")
    build_dataset(spec, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    d = ds["ood"]
    for i in range(len(d)):
        p = PdeParams(SystemTag.AD1D, {k: float(v[i]) for k, v in d.params.items()})
        u0 = sample_ic(SystemTag.AD1D, d.families[i], int(d.ic_seed[i]))
        assert np.array_equal(u0.values, d.u0[i])
        again = solve_exact_ad(p, u0, float(d.T[i])).values
        assert np.max(np.abs(again - d.target[i])) < 1e-12


def test_save_load_round_trip(tmp_path):
    spec = default_spec(SystemTag.SWE1D, n_train=3, n_id=2, n_ood=2, n_transfer=2)
    ds = build_dataset(spec)
    save_dataset(tmp_path / "d.bin", ds)
    back = load_dataset(tmp_path / "d.bin")
    assert back.spec == spec
    for name, data in ds.splits.items():
        b = back[name]
        assert b.families == data.families and b.grid == data.grid
        assert np.array_equal(b.u0, data.u0) and np.array_equal(b.target, data.target)
        assert all(np.array_equal(b.params[k], data.params[k]) for k in data.params)
    save_dataset(tmp_path / "e.bin", back)
    assert (tmp_path / "d.bin").read_bytes() == (tmp_path / "e.bin").read_bytes()


def test_ks_dataset_keeps_trajectory(tmp_path):
    spec = default_spec(SystemTag.KS1D, n_train=0, n_id=1, n_ood=0)
    spec = BenchmarkSpec(spec.system, {"id": SplitSpec(1, {"W": ((30.0, 30.0),)}, ("two_mode",),
                                                       (2.0, 2.0))}, n_snapshots=11)
    ds = build_dataset(spec, tmp_path / "ks.bin")
    d = load_dataset(tmp_path / "ks.bin")["id"]
    assert d.trajectory.shape == (1, 11, 256)
    assert np.array_equal(d.target[:, 0], d.trajectory[:, -1])
    assert np.array_equal(d.trajectory[:, 0], ds["id"].u0[:, 0])
