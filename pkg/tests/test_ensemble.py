import math

import numpy as np
import pytest

from imlab import dissipation as dis
from imlab import dynamics as dyn
from imlab import ensemble as ens
from imlab import models as mdl
from imlab import spectral as sp

CFG = dyn.IntegratorConfig(dt_max=0.05)


def test_schedule_quantities():
    spec = ens.EnsembleSpec(i=2, r=3.0, j_max=2, c_T=0.5)
    assert spec.radius(1) == pytest.approx(9.0)  # xi(x) = 3x for the default weight
    assert spec.local_time(2) == pytest.approx(0.5 / 12.0)
    t = spec.check_times(1)
    assert t[0] == 0.0 and t[-1] <= math.e + 1e-12 and t[-1] + spec.local_time(1) > math.e
    assert np.allclose(np.diff(t), spec.local_time(1))
    assert float(ens.growth_bound(spec, 0.0)) == pytest.approx(2 * 9.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        ens.EnsembleSpec(i=1, r=5.0)
    with pytest.raises(ValueError):
        ens.EnsembleSpec(i=0, r=1.0)
    with pytest.raises(ValueError):
        ens.EnsembleSpec(i=1, r=1.0, c_T=0.0)


def test_ball_membership():
    model = mdl.Sabra()
    spec = ens.EnsembleSpec(i=1, r=2.0, j_max=1)
    u = sp.zeros("shell", mdl.basis_for(model, 5))
    assert ens.ball_membership(u, spec)
    big = u.with_coeffs(np.full(5, 100.0 + 0j))
    assert not ens.ball_membership(big, spec)


@pytest.fixture(scope="module")
def states():
    model = mdl.Sabra()
    r = np.random.default_rng(4)
    u = mdl.random_state(model, 5, r, (24,))
    scale = np.geomspace(0.05, 12.0, 24) / np.asarray(sp.norm(u, sp.H(2)))
    return model, u.with_coeffs(u.coeffs * scale[:, None])


def test_membership_nested_in_i_and_r(states):
    model, u = states
    res = {}
    for i in (1, 2, 3):
        for r in (1.0, 2.0):
            spec = ens.EnsembleSpec(i=i, r=r, j_max=1, c_T=0.25)
            res[i, r] = ens.sigma_membership(u, spec, model, CFG).member
    for r in (1.0, 2.0):
        assert np.all(res[1, r] <= res[2, r]) and np.all(res[2, r] <= res[3, r])
    for i in (1, 2, 3):
        assert np.all(res[i, 2.0] <= res[i, 1.0])
    assert res[3, 1.0].any() and not res[1, 2.0].all()


def test_harvest_complement_nonincreasing(states):
    model, u = states
    snaps = [u[k] for k in range(u.batch_shape[0])]
    spec = ens.EnsembleSpec(i=1, r=2.0, j_max=1, c_T=0.25)
    hv = ens.ensemble_harvest(snaps, spec, model, [1, 2, 3], CFG)
    assert hv.total == 24
    assert hv.nonincreasing()
    assert ens.ensemble_harvest([], spec, model, [1], CFG).complement == {1: None}


def test_slow_growth_member_and_skip(states):
    model, u = states
    spec = ens.EnsembleSpec(i=2, r=2.0, j_max=1, c_T=0.25)
    grid = np.linspace(0.0, math.e, 11)
    small = u[0]
    v = ens.slow_growth_check(small, spec, model, grid, CFG)
    assert v.status == ens.PASS and v.estimate <= 1.0
    big = u[-1]
    assert ens.slow_growth_check(big, spec, model, grid, CFG).status == ens.SKIPPED


def test_calibrated_constant_is_a_candidate():
    c = ens.calibrate_c_T(mdl.Sabra(), 6, CFG, seed=0, n_val=6)
    assert c in (2.0, 1.0, 0.5, 0.25, 0.125, 0.0625)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_regularity_persistence_small_3d_data(seed):
    model = mdl.Euler3DVelocity()
    u0 = mdl.random_state(model, 3, np.random.default_rng(seed), decay=2.0)
    u0 = u0 * (0.5 / float(sp.norm(u0, sp.H(0))))
    rows = ens.regularity_persistence_check(model, u0, [0.0, 4.0, 6.0], 5.0, cfg=CFG,
                                            n_checkpoints=10, fit_samples=5)
    for row in rows:
        assert row.passed and row.C_fit >= 0
        assert row.norms[0] == pytest.approx(row.envelope[0])
    assert np.allclose(rows[0].norms, rows[0].norms[0], rtol=1e-9)


def test_beltrami_mode_is_stationary():
    model = mdl.Euler3DVelocity()
    b = sp.torus_basis(3, 1)
    c = np.zeros((3, b.nmodes), complex)
    i, j = b.index_of((0, 0, 1)), b.index_of((0, 0, -1))
    c[:, i] = [-0.5j, 0.5, 0.0]  # (sin x3, cos x3, 0): curl u = u
    c[:, j] = np.conj(c[:, i])
    u0 = sp.SpectralField("vector", b, c)
    assert np.max(np.abs(mdl.bilinear(model, u0, u0).coeffs)) < 1e-14
    rows = ens.regularity_persistence_check(model, u0, [4.0], 2.0, cfg=CFG, n_checkpoints=4, fit_samples=2)
    assert rows[0].passed and rows[0].C_fit == 0.0
    assert np.allclose(rows[0].norms, rows[0].norms[0], rtol=1e-12)


def test_growth_rate_zero_for_zero_state():
    model = mdl.Sabra()
    assert ens.hm_growth_rate(model, sp.zeros("shell", mdl.basis_for(model, 4)), 1.0) == 0.0
