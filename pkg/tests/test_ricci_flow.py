import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from calabiflow import ricci_flow as RF
from calabiflow import tensor as T
from calabiflow.experiments import variation_input
from calabiflow.grid import PeriodicGrid, trig_field


def test_einstein_homothety_values():
    assert RF.einstein_homothety(1.0, 0.25) == 0.5
    assert RF.einstein_homothety(1.0, 0.25, "negative") == 1.5
    with pytest.raises(RF.ExtinctionError):
        RF.einstein_homothety(1.0, 0.6)
    with pytest.raises(ValueError):
        RF.einstein_homothety(1.0, 0.1, "flat")


@given(r0=st.floats(0.1, 5.0), n=st.integers(2, 6), frac=st.floats(0.0, 0.99))
def test_sphere_radius_linear_in_t(r0, n, frac):
    sol = RF.HomothetySolution("sphere", r0=r0, n=n)
    t = frac * sol.extinction_time
    assert sol.scale_squared(t) == pytest.approx(r0 * r0 + sol.rate() * t, rel=1e-12, abs=1e-12)
    assert RF.hyperbolic_radius(r0, n, t) ** 2 == pytest.approx(r0 * r0 + 2 * (n - 1) * t)


def test_sphere_extinction_and_domain():
    with pytest.raises(RF.ExtinctionError):
        RF.sphere_radius(1.0, 2, 0.51)
    with pytest.raises(ValueError):
        RF.sphere_radius(1.0, 1, 0.1)
    assert RF.HomothetySolution("hyperbolic").extinction_time is None


def test_rk4_and_bracket():
    ts, ys = RF.rk4(lambda t, y: -2.0 * np.ones_like(y), [1.0], 0.0, 0.45, 45)
    exact = np.array([RF.sphere_radius(1.0, 2, t) ** 2 for t in ts])
    assert np.max(np.abs(ys[:, 0] - exact) / exact) < 1e-12
    lo, hi = RF.bracket_extinction(lambda t, y: -2.0 * np.ones_like(y), 1.0, tol=1e-8)
    assert lo <= 0.5 <= hi and hi - lo <= 1e-8


def test_rk4_fourth_order():
    errs = []
    for steps in (10, 20):
        _, ys = RF.rk4(lambda t, y: -y, [1.0], 0.0, 1.0, steps)
        errs.append(abs(ys[-1, 0] - math.exp(-1.0)))
    assert 14 < errs[0] / errs[1] < 18


def test_normalized_rescale():
    psi = RF.normalized_rescale([2.0, 1.0, 0.5], 2)
    assert np.allclose(psi * np.array([2.0, 1.0, 0.5]), 2.0)
    with pytest.raises(ValueError):
        RF.normalized_rescale([1.0, -1.0], 2)


def test_flat_metric_is_steady_soliton():
    g = PeriodicGrid((8, 8))
    m = T.metric_field(g, np.eye(2))
    assert np.max(np.abs(RF.soliton_residual(g, m, None, 0.0))) == 0.0
    res = RF.soliton_residual(g, m, None, 0.5)
    assert np.allclose(res, m)


def test_gradient_soliton_residual_detects_non_solitons(rng):
    g = PeriodicGrid((32, 32))
    w = trig_field(g, rng, 1, 0.3)
    m = np.exp(2 * w) * np.eye(2)[..., None, None]
    assert np.max(np.abs(RF.soliton_residual(g, m, None, 0.0))) > 1e-2


@pytest.fixture(scope="module")
def variation_data():
    return variation_input(32, seed=3)


@pytest.mark.parametrize("formula", RF.FORMULAS)
def test_variation_formulas(variation_data, formula):
    assert RF.variation_check(variation_data, formula, 1e-4) < 1e-6


def test_variation_zero_direction():
    v = variation_input(8, seed=0)
    z = RF.VariationInput(v.grid, v.g, np.zeros_like(v.h))
    assert RF.variation_check(z, "ricci") == 0.0
    with pytest.raises(ValueError):
        RF.variation_check(v, "torsion")


def test_variation_input_checks_trace():
    v = variation_input(8, seed=0)
    with pytest.raises(ValueError):
        RF.VariationInput(v.grid, v.g, v.h, v.H + 1.0)


def test_surface_flow_volume_rate(rng):
    # dVol/dt = -int R dmu = 0 on the torus (Gauss-Bonnet)
    g = PeriodicGrid((32, 32))
    w0 = trig_field(g, rng, 2, 0.3)
    _, mon = RF.conformal_surface_flow(g, w0, steps=200, normalized=False)
    vol = mon.column("volume")
    assert np.max(np.abs(vol - vol[0])) < 1e-10


def test_surface_flow_decays_and_conserves():
    g = PeriodicGrid((32, 32))
    x, _ = g.coords()
    traj, mon = RF.conformal_surface_flow(g, 0.2 * np.cos(2 * np.pi * x), steps=20000,
                                          normalized=True, scheme="imex", stop_tol=1e-7)
    supR = np.maximum(np.abs(mon.column("sup_R")), np.abs(mon.column("inf_R")))
    assert supR[-1] < 1e-7
    assert np.all(np.diff(supR) <= 1e-12)
    vol = mon.column("volume")
    assert np.max(np.abs(vol - vol[0])) < 1e-12


def test_surface_flow_guards():
    g = PeriodicGrid((16, 16))
    w0 = np.zeros(g.shape)
    with pytest.raises(ValueError):
        RF.conformal_surface_flow(g, w0, dt=1.0, steps=1)
    with pytest.raises(RF.BlowUpError):
        RF.conformal_surface_flow(g, w0 + 11.0, steps=1)
    with pytest.raises(ValueError):
        RF.conformal_surface_flow(PeriodicGrid((8,)), np.zeros(8), steps=1)


def test_surface_curvature_matches_tensor(rng):
    g = PeriodicGrid((32, 32))
    w = trig_field(g, rng, 1, 0.2)
    m = np.exp(2 * w) * np.eye(2)[..., None, None]
    assert np.max(np.abs(RF.surface_curvature(g, w) - T.curvature(g, m).scalar)) < 1e-9
