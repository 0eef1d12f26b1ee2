"""Continuity method for ``det(g0 + ddbar u) = A exp(t f) det g0`` on flat tori.

Each Newton step solves ``Delta~_a du = -r`` for the residual
``r = log YC(u) - t f - log A`` with PCG on the mean-zero subspace, using the
divergence form of the Laplacian of ``g~`` (exactly symmetric on the grid)
and a flat spectral preconditioner. ``log A`` is reset every iteration so
that ``int r dV~ = 0``, which is the solvability condition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kahler as K
from .tensor import ConvergenceError, pcg

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuityConfig:
    """Solver settings for the continuity path.

    Attributes
    ----------
    t_steps : tuple of float
        Monotone path parameters from 0 to 1.
    newton_tol : float
        Target sup-norm of the residual.
    newton_max_iters : int
    damping : float
        Initial Newton damping in (0, 1]; halved on residual increase.
    min_damping : float
        Abort below this damping.
    linear_tol : float
        Relative PCG tolerance.
    linear_max_iters : int
    c : float
        Optional coefficient of the ``c u`` term; 0 is the Calabi case.
    """

    t_steps: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 1.0, 11), 12))
    newton_tol: float = 1e-10
    newton_max_iters: int = 50
    damping: float = 1.0
    min_damping: float = 1.0 / 64.0
    linear_tol: float = 1e-10
    linear_max_iters: int = 500
    c: float = 0.0

    def __post_init__(self):
        ts = tuple(float(t) for t in self.t_steps)
        if ts[0] != 0.0 or ts[-1] != 1.0:
            raise ValueError("t_steps must start at 0 and end at 1")
        if any(b <= a for a, b in zip(ts[:-1], ts[1:])):
            raise ValueError("t_steps must be strictly increasing")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        object.__setattr__(self, "t_steps", ts)


@dataclass
class MASolution:
    """A solution of the Monge-Ampere equation at path parameter ``t``."""

    u: np.ndarray
    A: float
    residual: float
    t: float
    iterations: int = 0
    linear_iterations: int = 0
    history: list[float] = field(default_factory=list)
    path_iterations: dict[float, int] = field(default_factory=dict)


class NewtonError(ConvergenceError):
    """Newton failed; ``last`` holds the last accepted iterate."""

    def __init__(self, message: str, last: MASolution | None = None):
        super().__init__(message)
        self.last = last


def normalization_constant(cgrid: K.ComplexTorusGrid, f: np.ndarray, t: float,
                           g0: np.ndarray | None = None) -> float:
    """``A = Vol / int exp(t f) dV`` for the background volume form."""
    dv = np.ones(cgrid.shape) if g0 is None else K.hermitian_det(g0)
    return float(np.sum(dv) / np.sum(np.exp(t * np.asarray(f)) * dv))


def _state(cgrid, u, f, t, c, g0):
    p = K.KahlerPotential(cgrid, u, g0)
    g = K.potential_to_metric(p)
    det = K.hermitian_det(g)
    det0 = K.hermitian_det(p.background())
    logyc = np.log(det / det0)
    rhs = t * f + c * u
    if c == 0:
        logA = float(np.sum((logyc - rhs) * det) / np.sum(det))
    else:
        logA = float(np.log(np.sum(det0) / np.sum(np.exp(rhs) * det0)))
    r = logyc - rhs - logA
    return g, det, r, logA


def residual(cgrid: K.ComplexTorusGrid, u: np.ndarray, f: np.ndarray, t: float,
             A: float, g0: np.ndarray | None = None) -> np.ndarray:
    """``log YC(u) - t f - log A`` pointwise."""
    p = K.KahlerPotential(cgrid, u, g0)
    return np.log(K.ma_operator(p)) - t * f - np.log(A)


class _ShiftedOperator:
    def __init__(self, op, shift):
        self.op = op
        self.shift = shift

    def __call__(self, x):
        return self.op(x) + self.shift * x

    def precondition(self, r):
        return self.op.precondition(r)


def newton_solve(cgrid: K.ComplexTorusGrid, f: np.ndarray, t: float,
                 u_init: np.ndarray | None = None,
                 cfg: ContinuityConfig = ContinuityConfig(),
                 g0: np.ndarray | None = None) -> MASolution:
    """Damped Newton iteration for the equation at a fixed ``t``."""
    f = np.asarray(f, dtype=float)
    c = cfg.c
    u = np.zeros(cgrid.shape) if u_init is None else np.array(u_init, dtype=float)
    if c == 0:
        u = u - u.mean()
    try:
        g, det, r, logA = _state(cgrid, u, f, t, c, g0)
    except K.AdmissibilityError as exc:
        raise NewtonError(f"initial potential not admissible: {exc}") from exc
    res = float(np.max(np.abs(r)))
    history = [res]
    lin_total = 0
    it = 0
    while res >= cfg.newton_tol:
        if it >= cfg.newton_max_iters:
            raise NewtonError(f"Newton did not converge at t={t}: residual {res:.3e} "
                              f"after {it} iterations",
                              MASolution(u, float(np.exp(logA)), res, t, it, lin_total, history))
        op = K.kahler_operator(cgrid, g)
        a = op if c == 0 else _ShiftedOperator(op, c * det)
        du, nlin = pcg(a, det * r, a.precondition, cgrid.real, tol=cfg.linear_tol,
                       maxiter=cfg.linear_max_iters)
        lin_total += nlin
        damp = cfg.damping
        while True:
            trial = u + damp * du
            if c == 0:
                trial = trial - trial.mean()
            try:
                g_t, det_t, r_t, logA_t = _state(cgrid, trial, f, t, c, g0)
                res_t = float(np.max(np.abs(r_t)))
                ok = res_t < res
            except K.AdmissibilityError:
                ok = False
            if ok:
                break
            damp *= 0.5
            if damp < cfg.min_damping:
                raise NewtonError(
                    f"damping fell below {cfg.min_damping} at t={t} (residual {res:.3e})",
                    MASolution(u, float(np.exp(logA)), res, t, it, lin_total, history))
        u, g, det, r, logA, res = trial, g_t, det_t, r_t, logA_t, res_t
        it += 1
        history.append(res)
        log.debug("t=%.3f newton %d residual %.3e damping %.3g pcg %d", t, it, res, damp, nlin)
    return MASolution(u, float(np.exp(logA)), res, t, it, lin_total, history)


def continuity_solve(cgrid: K.ComplexTorusGrid, f: np.ndarray,
                     cfg: ContinuityConfig = ContinuityConfig(),
                     g0: np.ndarray | None = None) -> MASolution:
    """March ``t`` through ``cfg.t_steps`` with warm-started Newton solves."""
    u = np.zeros(cgrid.shape)
    counts: dict[float, int] = {}
    sol = None
    for t in cfg.t_steps[1:]:
        try:
            sol = newton_solve(cgrid, f, t, u, cfg, g0)
        except NewtonError as exc:
            raise NewtonError(f"continuity path failed at t={t}: {exc}", exc.last) from exc
        counts[t] = sol.iterations
        u = sol.u
    sol.path_iterations = counts
    return sol


def poisson_oracle(cgrid: K.ComplexTorusGrid, f: np.ndarray, t: float = 1.0) -> tuple[np.ndarray, float]:
    """Exact solution for ``n = 1``: ``(1/4) Lap u = A exp(t f) - 1``.

    Returns
    -------
    u : ndarray
        Mean-zero potential.
    A : float
    """
    if cgrid.n != 1:
        raise ValueError("the Poisson reduction only holds for n = 1")
    grid = cgrid.real
    A = normalization_constant(cgrid, f, t)
    rhs = 4.0 * (A * np.exp(t * np.asarray(f)) - 1.0)
    sym = grid.laplacian_symbol.copy()
    sym[(0,) * grid.dims] = 1.0
    inv = 1.0 / sym
    inv[(0,) * grid.dims] = 0.0
    return grid.apply(grid.rfft(rhs), inv), A


@dataclass
class APrioriReport:
    """Trace, oscillation and eigenvalue bounds for an admissible potential."""

    min_trace: float
    max_trace: float
    osc_u: float
    sup_u: float
    inf_u: float
    min_eig: float
    max_eig: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def metric_eigenvalues(g: np.ndarray, g0: np.ndarray | None = None) -> np.ndarray:
    """Eigenvalues of ``g`` relative to ``g0`` (flat if None), last axis sorted."""
    pts = np.moveaxis(g, (0, 1), (-2, -1))
    if g0 is None:
        return np.linalg.eigvalsh(pts)
    import scipy.linalg
    b = np.moveaxis(g0, (0, 1), (-2, -1))
    flat_a = pts.reshape(-1, *pts.shape[-2:])
    flat_b = b.reshape(-1, *b.shape[-2:])
    ev = np.array([scipy.linalg.eigvalsh(x, y) for x, y in zip(flat_a, flat_b)])
    return ev.reshape(pts.shape[:-1])


def a_priori_report(cgrid: K.ComplexTorusGrid, u: np.ndarray,
                    g0: np.ndarray | None = None) -> APrioriReport:
    """Bounds on ``n + Delta_a u`` (the trace of ``g~``), ``osc u`` and ``g~``.

    Raises
    ------
    ValueError
        If the trace is not positive everywhere.
    """
    p = K.KahlerPotential(cgrid, u, g0)
    g = K.potential_to_metric(p)
    g0f = p.background()
    trace = np.einsum("ij...,ji...->...", K.hermitian_inverse(g0f), g).real
    ev = metric_eigenvalues(g, g0)
    rep = APrioriReport(float(trace.min()), float(trace.max()), float(u.max() - u.min()),
                        float(u.max()), float(u.min()), float(ev[..., 0].min()),
                        float(ev[..., -1].max()))
    if not rep.min_trace > 0:
        raise ValueError(f"trace n + Delta u not positive (min {rep.min_trace:.3e})")
    return rep
