import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from calabiflow import kahler as K
from calabiflow import krf
from calabiflow import monge_ampere as M
from calabiflow import tensor as T
from calabiflow.experiments import krf_checks
from calabiflow.grid import trig_field

TAU = 2 * np.pi


@pytest.fixture(scope="module")
def c1():
    return K.ComplexTorusGrid(1, 16)


@pytest.fixture(scope="module")
def c2():
    return K.ComplexTorusGrid(2, 8)


def cos_product(cg, a=0.5):
    x, y = cg.coords()[:2]
    return a * np.cos(TAU * x) * np.cos(TAU * y)


@pytest.fixture(scope="module")
def run1(c1):
    f = cos_product(c1)
    return f, krf.run_flow(c1, f, krf.FlowConfig(lambda1_every=5))


@pytest.fixture(scope="module")
def run2(c2):
    f = trig_field(c2.real, np.random.default_rng(0), kmax=1, amplitude=0.3)
    return f, krf.run_flow(c2, f, krf.FlowConfig(record_every=2, lambda1_every=5))


def test_flow_rhs(c1):
    f = cos_product(c1)
    assert np.array_equal(krf.flow_rhs(c1, np.zeros(c1.shape), f), f)
    u = trig_field(c1.real, np.random.default_rng(1), 1, 0.01)
    exact = np.log(1 + 0.25 * c1.real.laplacian(u)) + f
    assert np.max(np.abs(krf.flow_rhs(c1, u, f) - exact)) < 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        krf.FlowConfig(scheme="euler")
    with pytest.raises(ValueError):
        krf.FlowConfig(dt=-1.0)
    with pytest.raises(ValueError):
        krf.FlowConfig(record_every=0)


@pytest.mark.parametrize("scheme", ["imex", "explicit-rk4"])
def test_zero_data_is_fixed(c1, scheme):
    s = krf.initial_state(c1, krf.FlowConfig(scheme=scheme))
    for _ in range(3):
        s = krf.step(c1, s, np.zeros(c1.shape), scheme)
    assert np.max(np.abs(s.u)) == 0.0 and s.drift == 0.0 and s.steps == 3


def test_one_explicit_step(c1):
    f = cos_product(c1) + 0.1
    s0 = krf.initial_state(c1, krf.FlowConfig(scheme="explicit-rk4", dt=1e-4))
    s1 = krf.step(c1, s0, f, "explicit-rk4")
    assert np.max(np.abs(s1.u - 1e-4 * (f - f.mean()))) < 1e-7
    assert abs(s1.u.mean()) < 1e-15
    assert s1.drift == pytest.approx(1e-4 * 0.1, rel=1e-3)


def test_admissibility_loss_reports(c1):
    f = cos_product(c1, 3.0)
    s0 = krf.initial_state(c1, krf.FlowConfig(scheme="explicit-rk4", dt=1.0))
    with pytest.raises(krf.FlowError, match="admissibility lost at t="):
        krf.step(c1, s0, f, "explicit-rk4")


def test_step_underflow(c1):
    s0 = krf.initial_state(c1, krf.FlowConfig(dt=1e-16))
    with pytest.raises(krf.FlowError):
        krf.step(c1, s0, np.zeros(c1.shape))


def test_zero_data_run(c1):
    res = krf.run_flow(c1, np.zeros(c1.shape))
    assert res.steps == 0 and res.cbar == 0.0 and np.max(np.abs(res.u)) == 0.0
    row = res.monitors.rows[0]
    assert row[3] == 0.0 and row[4] == 0.0 and row[6] == row[7] == 1.0


def test_max_steps(c1):
    with pytest.raises(krf.FlowError, match="max_steps"):
        krf.run_flow(c1, cos_product(c1), krf.FlowConfig(max_steps=3, monitors=False))


def test_limit_matches_elliptic_and_poisson(c1, run1):
    f, res = run1
    sol = M.continuity_solve(c1, -f)
    uo, A = M.poisson_oracle(c1, -f)
    assert np.max(np.abs(res.u - sol.u)) < 1e-8
    assert np.max(np.abs(res.u - uo)) < 1e-8
    assert abs(res.cbar - math.log(A)) < 1e-9
    assert res.residual < 1e-6


def test_monitor_invariants_n1(c1, run1):
    f, res = run1
    _, checks = krf_checks(c1, f, res)
    assert all(checks.values()), [k for k, v in checks.items() if not v]


def test_monitor_invariants_n2(c2, run2):
    f, res = run2
    report, checks = krf_checks(c2, f, res)
    assert all(checks.values()), [k for k, v in checks.items() if not v]
    assert report["yau2_margin_min"] > 0


def test_energy_independent_quadrature(c2, run2):
    f, res = run2
    st = res.state
    F = krf.flow_rhs(c2, st.u, f, g=st.g)
    gr = K.real_metric(st.g)
    vol = T.integrate(c2.real, np.ones(c2.shape), gr)
    phi = F - T.integrate(c2.real, F, gr) / vol
    E_ref = 0.5 * T.integrate(c2.real, phi ** 2, gr) / 2 ** c2.n
    E, _ = krf.energy(c2, F, K.hermitian_det(st.g))
    assert abs(E - E_ref) <= 1e-12 * max(1.0, E_ref)


def test_limit_ricci_consistency(c2, run2):
    f, res = run2
    F = krf.flow_rhs(c2, res.u, f)
    ref = float(np.max(np.abs(K.complex_hessian(c2, F - res.cbar))))
    assert abs(krf.limit_ricci_check(c2, res.u, f) - ref) < 1e-9


def test_yau2_reference_margin(c1, c2):
    # u = 0: LHS = 0, RHS = 0 + 2*2 - 1*2^2 + ... with tr = 2: A + B tr - C tr^2 = 0 + 8 - 4
    assert krf.yau2_margin(c2, np.zeros(c2.shape)) == pytest.approx(4.0, abs=1e-14)
    with pytest.raises(ValueError):
        krf.yau2_margin(c1, np.zeros(c1.shape))


def test_third_order_quantity(c1, c2):
    u = trig_field(c1.real, np.random.default_rng(3), 2, 0.01)
    g = K.potential_to_metric(K.KahlerPotential(c1, u))
    c = c1.real.rfft(u)
    uzzz = c1.wirtinger(c, (("z", 0), ("zb", 0), ("z", 0)))
    exact = np.abs(uzzz) ** 2 / g[0, 0].real ** 3
    assert np.max(np.abs(krf.third_order_quantity(c1, u, g) - exact)) < 1e-12
    assert np.max(krf.third_order_quantity(c2, np.zeros(c2.shape), K.flat_metric(c2))) == 0.0
    v = trig_field(c2.real, np.random.default_rng(4), 1, 0.02)
    gv = K.potential_to_metric(K.KahlerPotential(c2, v))
    assert np.min(krf.third_order_quantity(c2, v, gv)) >= -1e-14


def test_decay_fit_exact():
    t = np.linspace(0, 5, 30)
    d = krf.decay_fit(t, 3.0 * np.exp(-0.7 * t))
    assert abs(d.rate - 0.7) < 1e-10 and abs(d.prefactor - 3.0) < 1e-10
    assert d.quality == pytest.approx(1.0)
    c = krf.decay_fit(t, np.full(30, 0.2))
    assert c.rate == 0.0 and c.quality == 1.0


def test_decay_fit_floor():
    t = np.linspace(0, 5, 30)
    with pytest.raises(ValueError):
        krf.decay_fit(t, np.full(30, 1e-14))


@given(a=st.floats(0.05, 20.0), c=st.floats(1e-6, 1e3))
def test_decay_fit_property(a, c):
    t = np.linspace(0, 1, 20)
    d = krf.decay_fit(t, c * np.exp(-a * t))
    assert d.rate == pytest.approx(a, rel=1e-8) and d.prefactor == pytest.approx(c, rel=1e-8)


def test_schemes_agree(c1, run1):
    f, res = run1
    ex = krf.run_flow(c1, f, krf.FlowConfig(scheme="explicit-rk4", monitors=False))
    assert np.max(np.abs(ex.u - res.u)) < 1e-7


def test_checkpoints(c1, tmp_path):
    from calabiflow.io import read_grid
    cfg = krf.FlowConfig(monitors=False, checkpoint_every=10, checkpoint_dir=str(tmp_path))
    res = krf.run_flow(c1, cos_product(c1), cfg)
    files = sorted(tmp_path.glob("u_*.bin"))
    assert len(files) == res.steps // 10 + 1
    _, u0 = read_grid(files[0])
    assert np.max(np.abs(u0)) == 0.0
