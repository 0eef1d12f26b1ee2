"""Parabolic complex Monge-Ampere flow ``du/dt = log YC(u) + f`` on flat tori.

The potential is recentred to mean zero after every step; the removed mean
is accumulated in ``FlowState.drift``. Stationary points satisfy
``YC(u) = exp(cbar - f)``, so the limit matches the elliptic problem with
data ``-f`` and ``cbar = log A(-f)``.

Bounds from the a priori theory are evaluated with the geometer's Laplacian
``Delta = -Delta_a`` wherever they are written that way.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kahler as K
from .tensor import DivergenceOperator, smallest_eigenpairs

log = logging.getLogger(__name__)

MONITOR_COLUMNS = ("t", "sup_absF", "meanF", "osc_F", "E", "lambda1", "min_trace",
                   "max_trace", "min_eig", "max_eig", "S_sup", "yau2_margin")


@dataclass(frozen=True)
class FlowConfig:
    """Time stepping and monitoring settings.

    Attributes
    ----------
    scheme : {"imex", "explicit-rk4"}
    dt : float or None
        Fixed step; by default ``dt_factor`` times the explicit stability
        step at ``u = 0`` (times 50 for ``imex``).
    stop_tol : float
        Stop once ``osc F < stop_tol``.
    residual_tol : float
        Required ``sup |log YC(u) + f - cbar|`` on exit.
    max_steps : int
    record_every : int
        Full monitor rows every this many steps (cheap per-step quantities
        are always kept).
    lambda1_every : int
        Spectral gap on every this many recorded rows.
    yau_c, yau_d : float
        Constants of the second Yau inequality.
    """

    scheme: str = "imex"
    dt: float | None = None
    dt_factor: float = 0.5
    imex_multiplier: float = 50.0
    stop_tol: float = 1e-9
    residual_tol: float = 1e-6
    max_steps: int = 20000
    record_every: int = 1
    lambda1_every: int = 10
    lambda1_tol: float = 1e-10
    monitors: bool = True
    yau_c: float = 2.0
    yau_d: float = 0.0
    checkpoint_every: int | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.scheme not in ("imex", "explicit-rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.stop_tol > 0 or not self.residual_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.record_every < 1 or self.lambda1_every < 1:
            raise ValueError("record intervals must be positive")


@dataclass
class FlowState:
    """Time, mean-zero potential, accumulated drift, step and cached metric."""

    t: float
    u: np.ndarray
    drift: float
    dt: float
    g: np.ndarray
    steps: int = 0


class FlowError(RuntimeError):
    """The flow lost admissibility or did not converge."""


@dataclass
class MonitorSeries:
    """Recorded monitors.

    ``rows`` follow :data:`MONITOR_COLUMNS`. ``lambda1`` is recomputed on
    rows flagged in ``lambda1_fresh`` and carried forward otherwise.
    ``poincare`` holds ``(t, rayleigh quotient of phi, lambda1)`` on fresh
    rows. ``steps`` keeps ``(t, sup F, inf F, volume, E)`` after every step.
    """

    rows: list[tuple[float, ...]] = field(default_factory=list)
    lambda1_fresh: list[bool] = field(default_factory=list)
    volume: list[float] = field(default_factory=list)
    poincare: list[tuple[float, float, float]] = field(default_factory=list)
    steps: list[tuple[float, float, float, float, float]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[MONITOR_COLUMNS.index(name)] for r in self.rows])

    def step_column(self, name: str) -> np.ndarray:
        idx = ("t", "supF", "infF", "volume", "E").index(name)
        return np.array([s[idx] for s in self.steps])


# -- pointwise quantities -------------------------------------------------------


def flow_rhs(cgrid: K.ComplexTorusGrid, u: np.ndarray, f: np.ndarray,
             g0: np.ndarray | None = None, g: np.ndarray | None = None) -> np.ndarray:
    """``F = log YC(u) + f``."""
    p = K.KahlerPotential(cgrid, u, g0)
    return np.log(K.ma_operator(p, g)) + f


def hermitian_eig_extremes(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and largest eigenvalue per point."""
    n = g.shape[0]
    if n == 1:
        e = g[0, 0].real
        return e, e
    if n == 2:
        a, d = g[0, 0].real, g[1, 1].real
        m = 0.5 * (a + d)
        r = np.sqrt(0.25 * (a - d) ** 2 + np.abs(g[0, 1]) ** 2)
        return m - r, m + r
    ev = np.linalg.eigvalsh(np.moveaxis(g, (0, 1), (-2, -1)))
    return ev[..., 0], ev[..., -1]


def third_order_quantity(cgrid: K.ComplexTorusGrid, u: np.ndarray, g: np.ndarray,
                         ginv: np.ndarray | None = None) -> np.ndarray:
    """``S = g~^{i rbar} g~^{s jbar} g~^{k tbar} u_{i jbar k} conj(u_{r sbar t})``.

    Contracted with the evolving metric; nonnegative pointwise.
    """
    n = cgrid.n
    if ginv is None:
        ginv = K.hermitian_inverse(g)
    c = cgrid.real.rfft(u)
    T = np.empty((n, n, n) + u.shape, dtype=complex)
    for i in range(n):
        for j in range(n):
            for k in range(i, n):
                T[i, j, k] = cgrid.wirtinger(c, (("z", i), ("zb", j), ("z", k)))
                T[k, j, i] = T[i, j, k]
    # g^{a bbar} = ginv[b, a]
    S = np.einsum("ri...,js...,tk...,ijk...,rst...->...", ginv, ginv, ginv, T, np.conj(T),
                  optimize=True)
    return S.real


def yau2_margin(cgrid: K.ComplexTorusGrid, u: np.ndarray, c: float = 2.0, d: float = 0.0,
                g: np.ndarray | None = None) -> float:
    """Minimum of ``RHS - LHS`` in the second Yau inequality on a flat background.

    With ``tr = n + Delta_a u``, ``h = log YC(u)`` (so ``YC = exp(h)`` holds
    exactly) and the geometer's Laplacians ``-Delta_a``:

    ``LHS = tr * (-Delta~_a)(log tr - c u)``,
    ``RHS = A + B tr - C tr^(n/(n-1))`` with ``A = sup(-Delta_a h) + n^2 d``,
    ``B = c n`` and ``C = exp(-sup h / (n-1))``. The flat torus has
    vanishing bisectional curvature.
    """
    n = cgrid.n
    if n < 2:
        raise ValueError("the second Yau inequality needs n >= 2 (exponent n/(n-1))")
    if g is None:
        g = K.potential_to_metric(K.KahlerPotential(cgrid, u))
    det = K.hermitian_det(g)
    h = np.log(det)
    tr = np.einsum("ii...->...", g).real
    flat = K.flat_metric(cgrid)
    F0 = float(h.max())
    F1 = float(np.max(-K.kahler_laplacian(cgrid, flat, h, ginv=flat)))
    A = F1 + n * n * d
    B = c * n
    C = math.exp(-F0 / (n - 1))
    lhs = tr * -K.kahler_laplacian(cgrid, g, np.log(tr) - c * u)
    rhs = A + B * tr - C * tr ** (n / (n - 1))
    return float(np.min(rhs - lhs))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    quality: float
    samples: int


def decay_fit(t, y, t_min: float = 0.0, floor: float = 1e-13,
              min_samples: int = 10) -> DecayFit:
    """Least-squares fit of ``log y = log C - a t`` past ``t_min``.

    Only values above ``floor`` are used. ``quality`` is the coefficient of
    determination (1 for an exactly constant series).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (t >= t_min) & (y > floor)
    if keep.sum() < min_samples:
        raise ValueError(f"only {int(keep.sum())} samples above the floor past t={t_min}")
    tt, ly = t[keep], np.log(y[keep])
    if np.ptp(ly) == 0:
        return DecayFit(0.0, float(y[keep][0]), 1.0, int(keep.sum()))
    slope, intercept = np.polyfit(tt, ly, 1)
    pred = intercept + slope * tt
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    quality = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return DecayFit(float(-slope), float(np.exp(intercept)), quality, int(keep.sum()))


def limit_ricci_check(cgrid: K.ComplexTorusGrid, u: np.ndarray, f: np.ndarray,
                      g0: np.ndarray | None = None) -> float:
    """``sup |Ric(g~) - Ric(g0) - ddbar f|`` over points and components."""
    p = K.KahlerPotential(cgrid, u, g0)
    g = K.potential_to_metric(p)
    diff = K.ricci(cgrid, g) - K.ricci(cgrid, p.background()) - K.complex_hessian(cgrid, f)
    return float(np.max(np.abs(diff)))


# -- time stepping --------------------------------------------------------------


def spectral_radius(cgrid: K.ComplexTorusGrid, g: np.ndarray) -> float:
    """Bound on the spectral radius of ``Delta~_a`` on the grid."""
    lo, _ = hermitian_eig_extremes(g)
    kmax2 = float(np.max(-cgrid.real.laplacian_symbol))
    return 0.25 * float(np.max(1.0 / lo)) * kmax2


def default_dt(cgrid: K.ComplexTorusGrid, cfg: FlowConfig,
               g: np.ndarray | None = None) -> float:
    if cfg.dt is not None:
        return cfg.dt
    if g is None:
        g = K.flat_metric(cgrid)
    dt = cfg.dt_factor * 2.785 / spectral_radius(cgrid, g)
    return dt * cfg.imex_multiplier if cfg.scheme == "imex" else dt


def initial_state(cgrid: K.ComplexTorusGrid, cfg: FlowConfig = FlowConfig(),
                  u0: np.ndarray | None = None) -> FlowState:
    u = np.zeros(cgrid.shape) if u0 is None else np.asarray(u0, dtype=float) - np.mean(u0)
    g = K.potential_to_metric(K.KahlerPotential(cgrid, u))
    return FlowState(0.0, u, 0.0, default_dt(cgrid, cfg, g), g)


def _metric(cgrid, u, t):
    try:
        return K.potential_to_metric(K.KahlerPotential(cgrid, u))
    except K.AdmissibilityError as exc:
        raise FlowError(f"admissibility lost at t={t:.6g}: grid index {exc.index}, "
                        f"min eigenvalue {exc.min_eig:.3e}") from exc


def step(cgrid: K.ComplexTorusGrid, state: FlowState, f: np.ndarray,
         scheme: str = "imex", F: np.ndarray | None = None) -> FlowState:
    """Advance one step.

    ``explicit-rk4`` is classical RK4 on ``F``. ``imex`` computes
    ``du = dt (1 - dt s L)^{-1} F(u)`` with ``L`` the flat ``Delta_a`` and
    ``s`` the largest eigenvalue of ``g~^{-1}``, so every frozen-coefficient
    mode is damped by a factor in ``(0, 1]``.
    """
    dt = state.dt
    if dt < 1e-14:
        raise FlowError(f"step size underflow (dt={dt:.3e})")
    u, g = state.u, state.g
    if F is None:
        F = flow_rhs(cgrid, u, f, g=g)
    if scheme == "explicit-rk4":
        def rhs(v, tt):
            return flow_rhs(cgrid, v, f, g=_metric(cgrid, v, tt))
        k1 = F
        k2 = rhs(u + 0.5 * dt * k1, state.t + 0.5 * dt)
        k3 = rhs(u + 0.5 * dt * k2, state.t + 0.5 * dt)
        k4 = rhs(u + dt * k3, state.t + dt)
        du = dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    elif scheme == "imex":
        lo, _ = hermitian_eig_extremes(g)
        sigma = float(np.max(1.0 / lo))
        sym = 1.0 / (1.0 - dt * sigma * 0.25 * cgrid.real.laplacian_symbol)
        du = dt * cgrid.real.apply(cgrid.real.rfft(F), sym)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    mean = float(np.mean(du))
    u_new = u + du
    u_new -= np.mean(u_new)
    t_new = state.t + dt
    return FlowState(t_new, u_new, state.drift + mean, dt, _metric(cgrid, u_new, t_new),
                     state.steps + 1)


# -- monitors -------------------------------------------------------------------


class Monitor:
    """Evaluates monitor rows and keeps the warm-start block for the spectral gap."""

    def __init__(self, cgrid: K.ComplexTorusGrid, cfg: FlowConfig = FlowConfig()):
        self.cgrid = cgrid
        self.cfg = cfg
        self.series = MonitorSeries()
        self._block = None
        self._lambda1 = float("nan")
        self._rows_seen = 0

    def record_step(self, state: FlowState, F: np.ndarray) -> None:
        det = K.hermitian_det(state.g)
        vol = float(np.sum(det) * self.cgrid.real.cell_volume)
        E, _ = energy(self.cgrid, F, det)
        self.series.steps.append((state.t, float(F.max()), float(F.min()), vol, E))

    def update(self, state: FlowState, f: np.ndarray, F: np.ndarray | None = None) -> tuple:
        """Compute one full monitor row and append it."""
        row, extra = monitors_update(self.cgrid, state, f, self.cfg, F=F, monitor=self)
        self.series.rows.append(row)
        self.series.lambda1_fresh.append(extra["fresh"])
        self.series.volume.append(extra["volume"])
        if extra["fresh"]:
            self.series.poincare.append((state.t, extra["rayleigh"], row[5]))
        return row


def energy(cgrid: K.ComplexTorusGrid, F: np.ndarray, det: np.ndarray) -> tuple[float, np.ndarray]:
    """``E = (1/2) int phi^2 dV~`` with ``phi = F - mean_{dV~} F``."""
    phi = F - np.sum(F * det) / np.sum(det)
    return 0.5 * float(np.sum(phi * phi * det)) * cgrid.real.cell_volume, phi


def monitors_update(cgrid: K.ComplexTorusGrid, state: FlowState, f: np.ndarray,
                    cfg: FlowConfig = FlowConfig(), F: np.ndarray | None = None,
                    monitor: Monitor | None = None):
    """One row of :data:`MONITOR_COLUMNS` plus auxiliary values.

    Returns
    -------
    row : tuple
    extra : dict
        ``volume``, ``fresh`` (spectral gap recomputed), ``rayleigh``
        (Rayleigh quotient of ``phi``).

    The spectral gap and the Rayleigh quotient refer to the Laplacian of the
    real metric ``2 realify(g~)``, whose eigenvalues are twice those of
    ``-Delta~_a``.
    """
    g = state.g
    n = cgrid.n
    if F is None:
        F = flow_rhs(cgrid, state.u, f, g=g)
    det = K.hermitian_det(g)
    ginv = K.hermitian_inverse(g)
    E, phi = energy(cgrid, F, det)
    vol = float(np.sum(det) * cgrid.real.cell_volume)
    tr = np.einsum("ii...->...", g).real
    lo, hi = hermitian_eig_extremes(g)
    S = third_order_quantity(cgrid, state.u, g, ginv)
    margin = yau2_margin(cgrid, state.u, cfg.yau_c, cfg.yau_d, g) if n >= 2 else float("nan")

    fresh = False
    rayleigh = float("nan")
    lam = float("nan")
    if monitor is not None:
        lam = monitor._lambda1
        due = monitor._rows_seen % cfg.lambda1_every == 0
        monitor._rows_seen += 1
    else:
        due = True
    if due:
        op = DivergenceOperator.from_metric(cgrid.real, K.real_metric(g))
        x0 = None if monitor is None else monitor._block
        res = smallest_eigenpairs(op, tol=cfg.lambda1_tol, x0=x0)
        lam = res.value
        fresh = True
        if np.any(phi):
            rayleigh = float(op.energy(phi) / np.sum(op.sqrtg * phi * phi))
        if monitor is not None:
            monitor._block = res.block
            monitor._lambda1 = lam
    row = (state.t, float(np.max(np.abs(F))), float(np.mean(F)), float(F.max() - F.min()),
           E, lam, float(tr.min()), float(tr.max()), float(lo.min()), float(hi.max()),
           float(S.max()), margin)
    return row, dict(volume=vol, fresh=fresh, rayleigh=rayleigh)


# -- driver ---------------------------------------------------------------------


@dataclass
class FlowResult:
    u: np.ndarray
    cbar: float
    monitors: MonitorSeries
    state: FlowState
    residual: float
    steps: int


def run_flow(cgrid: K.ComplexTorusGrid, f: np.ndarray, cfg: FlowConfig = FlowConfig(),
             u0: np.ndarray | None = None) -> FlowResult:
    """Integrate until ``osc F < stop_tol``.

    Raises
    ------
    FlowError
        On admissibility loss, ``max_steps`` exhaustion, or a final residual
        above ``residual_tol``.
    """
    f = np.asarray(f, dtype=float)
    state = initial_state(cgrid, cfg, u0)
    monitor = Monitor(cgrid, cfg)
    ckpt = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    while True:
        F = flow_rhs(cgrid, state.u, f, g=state.g)
        monitor.record_step(state, F)
        osc = float(F.max() - F.min())
        done = osc < cfg.stop_tol
        if cfg.monitors and (state.steps % cfg.record_every == 0 or done):
            monitor.update(state, f, F)
        if ckpt is not None and cfg.checkpoint_every and state.steps % cfg.checkpoint_every == 0:
            from .io import write_grid
            ckpt.mkdir(parents=True, exist_ok=True)
            write_grid(ckpt / f"u_{state.steps:06d}.bin", cgrid.real, state.u)
        if done:
            break
        if state.steps >= cfg.max_steps:
            raise FlowError(f"max_steps={cfg.max_steps} reached with osc F = {osc:.3e}")
        state = step(cgrid, state, f, cfg.scheme, F)
        if state.steps % 50 == 0:
            log.info("t=%.4f step %d osc F %.3e", state.t, state.steps, osc)
    cbar = float(np.mean(F))
    resid = float(np.max(np.abs(F - cbar)))
    if resid >= cfg.residual_tol:
        raise FlowError(f"final residual {resid:.3e} exceeds {cfg.residual_tol}")
    return FlowResult(state.u, cbar, monitor.series, state, resid, state.steps)


def with_scheme(cfg: FlowConfig, scheme: str) -> FlowConfig:
    return replace(cfg, scheme=scheme)
