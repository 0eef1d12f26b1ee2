import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import i0

from calabiflow import kahler as K
from calabiflow import monge_ampere as M
from calabiflow.grid import trig_field

TAU = 2 * np.pi


@pytest.fixture(scope="module")
def c1():
    return K.ComplexTorusGrid(1, 32)


@pytest.fixture(scope="module")
def c2():
    return K.ComplexTorusGrid(2, 8)


def test_normalization_bessel_oracle(c1):
    x = c1.coords()[0]
    A = M.normalization_constant(c1, np.cos(TAU * x), 1.0)
    assert A == pytest.approx(1.0 / i0(1.0), rel=1e-13)


@given(t=st.floats(0.0, 1.0), shift=st.floats(-2.0, 2.0))
def test_normalization_trivial_and_shift(t, shift):
    cg = K.ComplexTorusGrid(1, 8)
    f = np.cos(TAU * cg.coords()[1])
    assert M.normalization_constant(cg, np.zeros(cg.shape), t) == 1.0
    assert M.normalization_constant(cg, f, 0.0) == 1.0
    a = M.normalization_constant(cg, f, t)
    b = M.normalization_constant(cg, f + shift, t)
    assert b == pytest.approx(a * np.exp(-t * shift), rel=1e-12)
    # the equation integrates to the background volume
    assert abs(np.mean(a * np.exp(t * f)) - 1.0) < 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        M.ContinuityConfig(t_steps=(0.0, 0.5))
    with pytest.raises(ValueError):
        M.ContinuityConfig(t_steps=(0.0, 0.6, 0.5, 1.0))
    with pytest.raises(ValueError):
        M.ContinuityConfig(damping=0.0)
    with pytest.raises(ValueError):
        M.ContinuityConfig(newton_tol=0.0)


def test_zero_data(c1):
    sol = M.continuity_solve(c1, np.zeros(c1.shape))
    assert np.max(np.abs(sol.u)) == 0.0 and sol.A == 1.0 and sol.residual == 0.0


def test_n1_matches_poisson_oracle(c1):
    x, y = c1.coords()
    f = 0.5 * np.cos(TAU * x) * np.cos(TAU * y)
    sol = M.continuity_solve(c1, f)
    uo, A = M.poisson_oracle(c1, f)
    assert sol.residual < 1e-10
    assert np.max(np.abs(sol.u - uo)) < 1e-10
    assert sol.A == pytest.approx(A, rel=1e-10)
    assert abs(sol.u.mean()) < 1e-14
    assert set(sol.path_iterations) == set(M.ContinuityConfig().t_steps[1:])


def test_poisson_oracle_needs_n1(c2):
    with pytest.raises(ValueError):
        M.poisson_oracle(c2, np.zeros(c2.shape))


def test_shift_absorbed_by_A(c1):
    f = 0.3 * np.sin(TAU * c1.coords()[0])
    a = M.newton_solve(c1, f, 1.0)
    b = M.newton_solve(c1, f + 0.7, 1.0)
    assert np.max(np.abs(a.u - b.u)) < 1e-10
    assert b.A == pytest.approx(a.A * np.exp(-0.7), rel=1e-10)


def test_n2_residual_and_uniqueness(c2):
    f = trig_field(c2.real, np.random.default_rng(5), kmax=1, amplitude=0.3)
    a = M.continuity_solve(c2, f)
    assert a.residual < 1e-10
    res = M.residual(c2, a.u, f, 1.0, a.A)
    assert np.max(np.abs(res)) == pytest.approx(a.residual, abs=1e-14)
    v0 = trig_field(c2.real, np.random.default_rng(6), kmax=1, amplitude=0.01)
    b = M.newton_solve(c2, f, 1.0, u_init=v0)
    assert np.max(np.abs(a.u - b.u)) < 1e-8


def test_newton_rejects_inadmissible_start(c2):
    u = 0.3 * np.cos(TAU * c2.coords()[0])
    with pytest.raises(M.NewtonError):
        M.newton_solve(c2, np.zeros(c2.shape), 1.0, u_init=u)


def test_shifted_equation(c1):
    f = 0.3 * np.cos(TAU * c1.coords()[1])
    sol = M.newton_solve(c1, f, 1.0, cfg=M.ContinuityConfig(c=1.0))
    logyc = np.log(K.ma_operator(K.KahlerPotential(c1, sol.u)))
    assert np.max(np.abs(logyc - f - sol.u - np.log(sol.A))) < 1e-10


def test_a_priori_report(c1):
    x, y = c1.coords()
    sol = M.continuity_solve(c1, 0.5 * np.cos(TAU * x) * np.cos(TAU * y))
    rep = M.a_priori_report(c1, sol.u)
    assert 0 < rep.min_trace <= 1 <= rep.max_trace
    assert rep.osc_u == pytest.approx(rep.sup_u - rep.inf_u)
    # n = 1: the single eigenvalue is the trace
    assert rep.min_eig == pytest.approx(rep.min_trace) and rep.max_eig == pytest.approx(rep.max_trace)
    assert set(rep.as_dict()) >= {"min_trace", "max_trace", "osc_u"}
