"""Exactly solvable real Ricci flow: homotheties, solitons, surfaces, variations.

On a surface ``Ric = (R/2) g``, so for ``g = exp(2w) delta`` the flow
``dg/dt = -2 Ric`` reduces to ``dw/dt = exp(-2w) Lap0 w`` with scalar
curvature ``R = -2 exp(-2w) Lap0 w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor
from .grid import PeriodicGrid


class ExtinctionError(ValueError):
    """Requested time lies past the finite extinction time."""


class BlowUpError(RuntimeError):
    """A flow left its configured bounds."""


# -- closed forms ---------------------------------------------------------------


def einstein_homothety(lam: float, t: float, kind: str = "positive") -> float:
    """Squared scale factor of an Einstein metric under Ricci flow.

    ``kind="positive"`` (Ric = lam g, lam > 0) gives ``1 - 2 lam t`` and
    collapses at ``1 / (2 lam)``; ``kind="negative"`` (Ric = -lam g) gives
    ``1 + 2 lam t``.
    """
    if kind == "positive":
        if lam > 0 and t > 1.0 / (2.0 * lam):
            raise ExtinctionError(f"t={t} is past the extinction time {1 / (2 * lam)}")
        return 1.0 - 2.0 * lam * t
    if kind == "negative":
        if lam > 0 and t < -1.0 / (2.0 * lam):
            raise ExtinctionError(f"t={t} is before the backward singular time")
        return 1.0 + 2.0 * lam * t
    raise ValueError(f"unknown kind {kind!r}")


def sphere_radius(r0: float, n: int, t: float) -> float:
    """Radius of a round n-sphere, ``sqrt(r0^2 - 2(n-1)t)``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    r2 = r0 * r0 - 2.0 * (n - 1) * t
    if r2 < 0:
        raise ExtinctionError(f"t={t} is past the extinction time {r0 * r0 / (2 * (n - 1))}")
    return math.sqrt(r2)


def hyperbolic_radius(r0: float, n: int, t: float) -> float:
    """Radius of a hyperbolic space form, ``sqrt(r0^2 + 2(n-1)t)``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return math.sqrt(r0 * r0 + 2.0 * (n - 1) * t)


@dataclass(frozen=True)
class HomothetySolution:
    """Closed-form homothetic solution.

    ``kind`` is one of ``einstein-positive``, ``einstein-negative``,
    ``sphere``, ``hyperbolic``. ``lam`` is used by the Einstein kinds,
    ``r0`` and ``n`` by the space forms.
    """

    kind: str
    lam: float = 1.0
    r0: float = 1.0
    n: int = 2

    @property
    def extinction_time(self) -> float | None:
        if self.kind == "einstein-positive":
            return 1.0 / (2.0 * self.lam)
        if self.kind == "sphere":
            return self.r0 ** 2 / (2.0 * (self.n - 1))
        if self.kind in ("einstein-negative", "hyperbolic"):
            return None
        raise ValueError(f"unknown kind {self.kind!r}")

    def scale_squared(self, t: float) -> float:
        """``rho^2`` for Einstein kinds, ``r^2`` for space forms."""
        if self.kind == "einstein-positive":
            return einstein_homothety(self.lam, t, "positive")
        if self.kind == "einstein-negative":
            return einstein_homothety(self.lam, t, "negative")
        if self.kind == "sphere":
            return sphere_radius(self.r0, self.n, t) ** 2
        if self.kind == "hyperbolic":
            return hyperbolic_radius(self.r0, self.n, t) ** 2
        raise ValueError(f"unknown kind {self.kind!r}")

    def rate(self) -> float:
        """Constant ``d(scale^2)/dt``."""
        return {"einstein-positive": -2.0 * self.lam,
                "einstein-negative": 2.0 * self.lam,
                "sphere": -2.0 * (self.n - 1),
                "hyperbolic": 2.0 * (self.n - 1)}[self.kind]


def rk4(rhs: Callable[[float, np.ndarray], np.ndarray], y0, t0: float, t1: float,
        steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Classical fourth-order Runge-Kutta on a uniform grid of ``steps`` steps."""
    ts = np.linspace(t0, t1, steps + 1)
    y = np.asarray(y0, dtype=float)
    ys = [y]
    for a, b in zip(ts[:-1], ts[1:]):
        h = b - a
        k1 = rhs(a, y)
        k2 = rhs(a + h / 2, y + h / 2 * k1)
        k3 = rhs(a + h / 2, y + h / 2 * k2)
        k4 = rhs(b, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys.append(y)
    return ts, np.array(ys)


def bracket_extinction(rhs: Callable[[float, np.ndarray], np.ndarray], y0: float,
                       dt: float = 1e-2, tol: float = 1e-7,
                       t_max: float = 1e6) -> tuple[float, float]:
    """Bracket the first zero of a scalar RK4 trajectory to width ``tol``.

    Steps forward with ``dt`` until the state changes sign, then bisects the
    last step by re-integrating from its start.
    """
    def advance(t, y, h):
        _, ys = rk4(rhs, [y], t, t + h, 1)
        return float(ys[-1][0])

    t, y = 0.0, float(y0)
    while True:
        y_new = advance(t, y, dt)
        if y_new <= 0:
            break
        t, y = t + dt, y_new
        if t > t_max:
            raise RuntimeError("no extinction before t_max")
    lo, hi = 0.0, dt
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if advance(t, y, mid) > 0:
            lo = mid
        else:
            hi = mid
    return t + lo, t + hi


def normalized_rescale(volumes: Sequence[float], n: int) -> np.ndarray:
    """``psi(t) = (Vol(t) / Vol(0))^(-2/n)``, making ``psi^(n/2) Vol(t)`` constant."""
    v = np.asarray(volumes, dtype=float)
    if np.any(v <= 0):
        raise ValueError("volumes must be positive")
    return (v / v[0]) ** (-2.0 / n)


# -- solitons -------------------------------------------------------------------


def covariant_derivative_1form(grid: PeriodicGrid, gamma: np.ndarray,
                               x: np.ndarray) -> np.ndarray:
    """``nabla_i X_j = d_i X_j - Gamma^p_ij X_p`` as ``[i, j]``."""
    dx = tensor.partials(grid, x)
    return dx - np.einsum("pij...,p...->ij...", gamma, x)


def soliton_residual(grid: PeriodicGrid, g: np.ndarray, X: np.ndarray | None,
                     lam: float) -> np.ndarray:
    """``2 R_ij + 2 lam g_ij + nabla_i X_j + nabla_j X_i`` for a vector field ``X^k``."""
    ginv = tensor.metric_inverse(g)
    gamma = tensor.christoffel(grid, g, ginv)
    ric = np.einsum("iijk...->jk...", tensor.riemann_from(grid, gamma))
    ric = 0.5 * (ric + np.swapaxes(ric, 0, 1))
    out = 2.0 * ric + 2.0 * lam * g
    if X is not None:
        xlow = np.einsum("jk...,k...->j...", g, X)
        nx = covariant_derivative_1form(grid, gamma, xlow)
        out = out + nx + np.swapaxes(nx, 0, 1)
    return out


# -- conformal surface flow -----------------------------------------------------


SURFACE_COLUMNS = ("t", "sup_R", "inf_R", "volume", "sup_w", "osc_w")


@dataclass
class SurfaceMonitor:
    """Time series recorded by :func:`conformal_surface_flow`."""

    rows: list[tuple[float, ...]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[SURFACE_COLUMNS.index(name)] for r in self.rows])


def surface_curvature(grid: PeriodicGrid, w: np.ndarray) -> np.ndarray:
    """Scalar curvature of ``exp(2w) delta``."""
    return -2.0 * np.exp(-2.0 * w) * grid.laplacian(w)


def surface_volume(grid: PeriodicGrid, w: np.ndarray) -> float:
    return float(np.sum(np.exp(2.0 * w)) * grid.cell_volume)


def surface_dt_bound(grid: PeriodicGrid, w: np.ndarray) -> float:
    """Largest admissible explicit step.

    The nominal rule ``0.2 h^2 inf exp(2w)`` is capped by the real-axis
    stability limit of RK4 (2.785) against the spectral radius of
    ``exp(-2w) Lap0``.
    """
    h2 = min(grid.spacing) ** 2
    nominal = 0.2 * h2 * float(np.exp(2.0 * np.min(w)))
    rho = float(np.max(np.exp(-2.0 * w))) * float(np.max(-grid.laplacian_symbol))
    return min(nominal, 2.785 / rho)


def _surface_rhs(grid, w, normalized):
    lap = grid.laplacian(w)
    rhs = np.exp(-2.0 * w) * lap
    if normalized:
        # r = int R dmu / int dmu; vanishes on the torus up to roundoff
        r = -2.0 * np.sum(lap) / np.sum(np.exp(2.0 * w))
        rhs = rhs + 0.5 * r
    return rhs


def conformal_surface_flow(grid: PeriodicGrid, w0: np.ndarray, dt: float | None = None,
                           steps: int = 1000, normalized: bool = False,
                           scheme: str = "explicit", stop_tol: float | None = None,
                           record_every: int = 1, keep_every: int | None = None,
                           w_bound: float = 10.0):
    """Ricci flow of ``exp(2w) delta`` on a flat 2-torus.

    Parameters
    ----------
    grid : PeriodicGrid
        Two-dimensional.
    w0 : ndarray
        Initial conformal factor.
    dt : float, optional
        Time step; defaults to 0.9 times :func:`surface_dt_bound` for the
        explicit scheme and 25 times the bound for ``imex``.
    steps : int
        Maximum number of steps.
    normalized : bool
        Evolve the volume-normalized flow; the volume is restored exactly
        after each step by the rescaling ``psi``.
    scheme : {"explicit", "imex"}
        ``explicit`` is RK4; ``imex`` treats a frozen-coefficient flat
        Laplacian implicitly.
    stop_tol : float, optional
        Stop once ``sup |R| < stop_tol``.

    Returns
    -------
    trajectory : list of (t, w)
    monitor : SurfaceMonitor
    """
    if grid.dims != 2:
        raise ValueError("surface flow needs a 2-d grid")
    w = np.array(w0, dtype=float)
    vol0 = surface_volume(grid, w)
    if dt is None:
        dt = surface_dt_bound(grid, w) * (25.0 if scheme == "imex" else 0.9)
    keep_every = keep_every or max(1, steps // 100)
    monitor = SurfaceMonitor()
    trajectory = [(0.0, w.copy())]
    t = 0.0

    def record():
        R = surface_curvature(grid, w)
        monitor.rows.append((t, float(R.max()), float(R.min()), surface_volume(grid, w),
                             float(w.max()), float(w.max() - w.min())))
        return R

    R = record()
    for it in range(1, steps + 1):
        if stop_tol is not None and np.max(np.abs(R)) < stop_tol:
            break
        if scheme == "explicit":
            if dt > surface_dt_bound(grid, w) * (1 + 1e-12):
                raise ValueError(f"dt={dt} exceeds the explicit stability bound "
                                 f"{surface_dt_bound(grid, w):.3e}")
            f = lambda y: _surface_rhs(grid, y, normalized)  # noqa: E731
            k1 = f(w)
            k2 = f(w + 0.5 * dt * k1)
            k3 = f(w + 0.5 * dt * k2)
            k4 = f(w + dt * k3)
            w_new = w + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        elif scheme == "imex":
            sigma = float(np.max(np.exp(-2.0 * w)))
            rhs = _surface_rhs(grid, w, normalized)
            sym = 1.0 / (1.0 - dt * sigma * grid.laplacian_symbol)
            w_new = w + dt * grid.apply(grid.rfft(rhs), sym)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        if normalized:
            psi = normalized_rescale([vol0, surface_volume(grid, w_new)], 2)[1]
            w_new = w_new + 0.5 * math.log(psi)
        bad = ~np.isfinite(w_new) | (np.abs(w_new) > w_bound)
        if np.any(bad):
            idx = np.unravel_index(np.argmax(bad), bad.shape)
            raise BlowUpError(f"|w| left the bound {w_bound} at t={t + dt:.6g}, "
                              f"grid index {tuple(int(i) for i in idx)}")
        w = w_new
        t += dt
        if it % record_every == 0:
            R = record()
        else:
            R = surface_curvature(grid, w)
        if it % keep_every == 0:
            trajectory.append((t, w.copy()))
    if monitor.rows[-1][0] != t:
        record()
    trajectory.append((t, w.copy()))
    return trajectory, monitor


# -- variation formulas ---------------------------------------------------------


FORMULAS = ("inverse", "christoffel", "riemann", "ricci", "scalar",
            "volume-element", "total-volume", "total-scalar")


@dataclass(frozen=True)
class VariationInput:
    """A metric ``g`` with a symmetric perturbation ``h`` and its trace ``H``."""

    grid: PeriodicGrid
    g: np.ndarray
    h: np.ndarray
    H: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        ginv = tensor.metric_inverse(self.g)
        trace = np.einsum("ij...,ij...->...", ginv, self.h)
        if self.H is None:
            object.__setattr__(self, "H", trace)
        elif np.max(np.abs(trace - self.H)) > 1e-12 * max(1.0, np.max(np.abs(trace))):
            raise ValueError("stored H does not match g^pq h_pq")


def _geometry(grid, g):
    ginv = tensor.metric_inverse(g)
    gamma = tensor.christoffel(grid, g, ginv)
    riem = tensor.riemann_from(grid, gamma)
    ric = np.einsum("iijk...->jk...", riem)
    ric = 0.5 * (ric + np.swapaxes(ric, 0, 1))
    scal = np.einsum("ij...,ij...->...", ginv, ric)
    sqrtg = np.sqrt(tensor.metric_det(g))
    return dict(ginv=ginv, gamma=gamma, riem=riem, ric=ric, scal=scal, sqrtg=sqrtg)


def _quantity(grid, geo, formula):
    if formula == "inverse":
        return geo["ginv"]
    if formula == "christoffel":
        return geo["gamma"]
    if formula == "riemann":
        return geo["riem"]
    if formula == "ricci":
        return geo["ric"]
    if formula == "scalar":
        return geo["scal"]
    if formula == "volume-element":
        return geo["sqrtg"]
    if formula == "total-volume":
        return np.sum(geo["sqrtg"]) * grid.cell_volume
    if formula == "total-scalar":
        return np.sum(geo["scal"] * geo["sqrtg"]) * grid.cell_volume
    raise ValueError(f"unknown formula {formula!r}; expected one of {FORMULAS}")


def variation_rhs(v: VariationInput, formula: str) -> np.ndarray:
    """Closed-form first variation of a geometric quantity along ``h``."""
    grid, g, h, H = v.grid, v.g, v.h, v.H
    geo = _geometry(grid, g)
    ginv, gamma = geo["ginv"], geo["gamma"]
    if formula == "inverse":
        return -np.einsum("ip...,jq...,pq...->ij...", ginv, ginv, h)
    if formula in ("volume-element", "total-volume"):
        dmu = 0.5 * H * geo["sqrtg"]
        return dmu if formula == "volume-element" else np.sum(dmu) * grid.cell_volume
    if formula == "total-scalar":
        hric = np.einsum("ia...,jb...,ab...,ij...->...", ginv, ginv, h, geo["ric"])
        dens = (0.5 * geo["scal"] * H - hric) * geo["sqrtg"]
        return np.sum(dens) * grid.cell_volume

    # nabla_i h_jk
    dh = tensor.partials(grid, h)
    nh = (dh - np.einsum("pij...,pk...->ijk...", gamma, h)
          - np.einsum("pik...,jp...->ijk...", gamma, h))
    if formula == "christoffel":
        s = nh + np.einsum("jil...->ijl...", nh) - np.einsum("lij...->ijl...", nh)
        return 0.5 * np.einsum("kl...,ijl...->kij...", ginv, s)
    # nabla_i nabla_j h_kl
    dnh = tensor.partials(grid, nh)
    nnh = (dnh - np.einsum("pij...,pkl...->ijkl...", gamma, nh)
           - np.einsum("pik...,jpl...->ijkl...", gamma, nh)
           - np.einsum("pil...,jkp...->ijkl...", gamma, nh))
    if formula == "riemann":
        s = (nnh
             + np.einsum("ikjp...->ijkp...", nnh)
             - np.einsum("ipjk...->ijkp...", nnh)
             - np.einsum("jikp...->ijkp...", nnh)
             - np.einsum("jkip...->ijkp...", nnh)
             + np.einsum("jpik...->ijkp...", nnh))
        return 0.5 * np.einsum("lp...,ijkp...->lijk...", ginv, s)
    if formula == "ricci":
        s = (np.einsum("qijp...->ijqp...", nnh)
             + np.einsum("qjip...->ijqp...", nnh)
             - np.einsum("qpij...->ijqp...", nnh)
             - nnh)
        return 0.5 * np.einsum("pq...,ijqp...->ij...", ginv, s)
    if formula == "scalar":
        dH = grid.gradient(H)
        lapH = np.einsum("ab...,ab...->...", ginv,
                         grid.hessian(H) - np.einsum("kab...,k...->ab...", gamma, dH))
        divdiv = np.einsum("pa...,qb...,abpq...->...", ginv, ginv, nnh)
        hric = np.einsum("pa...,qb...,ab...,pq...->...", ginv, ginv, h, geo["ric"])
        return -lapH + divdiv - hric
    raise ValueError(f"unknown formula {formula!r}; expected one of {FORMULAS}")


def variation_check(v: VariationInput, formula: str, ds: float = 1e-4) -> float:
    """Max discrepancy between a closed-form variation and a central difference.

    The family is ``g(s) = g + s h``; the quantity is recomputed at
    ``s = +-ds`` from scratch.
    """
    if formula not in FORMULAS:
        raise ValueError(f"unknown formula {formula!r}; expected one of {FORMULAS}")
    grid = v.grid
    if not np.any(v.h):
        return 0.0
    plus = _quantity(grid, _geometry(grid, v.g + ds * v.h), formula)
    minus = _quantity(grid, _geometry(grid, v.g - ds * v.h), formula)
    fd = (plus - minus) / (2.0 * ds)
    exact = variation_rhs(v, formula)
    return float(np.max(np.abs(fd - exact)))
