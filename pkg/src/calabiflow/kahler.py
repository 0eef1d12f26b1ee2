"""Kähler geometry on flat complex tori.

Real axes are ordered ``(x_1, y_1, ..., x_n, y_n)`` with ``z_j = x_j + i y_j``
and Wirtinger derivatives ``d_z = (d_x - i d_y) / 2``,
``d_zbar = (d_x + i d_y) / 2``. Hermitian fields are complex arrays of shape
``(n, n, *grid.shape)`` with ``g[i, j] = g_{i jbar}``.

The Laplacian is the analyst's ``Delta_a f = g^{i jbar} f_{i jbar}``
(negative semidefinite). Bounds written with the geometer's sign use
``Delta = -Delta_a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import PeriodicGrid
from .tensor import DivergenceOperator, NotPositiveDefiniteError, check_positive_definite


class AdmissibilityError(NotPositiveDefiniteError):
    """``g0 + ddbar u`` is not positive definite somewhere."""


@dataclass(frozen=True)
class ComplexTorusGrid:
    """Grid on the complex n-torus with unit periods.

    Parameters
    ----------
    n : int
        Complex dimension.
    resolution : int
        Points per real axis.
    """

    n: int
    resolution: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("complex dimension must be positive")

    @cached_property
    def real(self) -> PeriodicGrid:
        return PeriodicGrid((self.resolution,) * (2 * self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def coords(self) -> list[np.ndarray]:
        """Real coordinates ``[x_1, y_1, ..., x_n, y_n]``."""
        return self.real.coords()

    def z(self) -> list[np.ndarray]:
        xs = self.coords()
        return [xs[2 * j] + 1j * xs[2 * j + 1] for j in range(self.n)]

    @cached_property
    def _symbol_cache(self) -> dict:
        return {}

    def wirtinger_symbols(self, factors: tuple[tuple[str, int], ...]):
        """Real and imaginary symbols of a product of Wirtinger derivatives.

        ``factors`` holds ``("z", j)`` or ``("zb", j)`` entries. Expanding the
        product into real mixed partials with complex coefficients, the real
        and imaginary coefficient parts give two Hermitian symbols.
        """
        key = tuple(sorted(factors))
        cache = self._symbol_cache
        if key in cache:
            return cache[key]
        terms: dict[tuple[int, ...], complex] = {(0,) * (2 * self.n): 1.0 + 0j}
        for kind, j in key:
            sign = -1.0 if kind == "z" else 1.0
            new: dict[tuple[int, ...], complex] = {}
            for orders, c in terms.items():
                for axis, coef in ((2 * j, 0.5), (2 * j + 1, 0.5j * sign)):
                    o = list(orders)
                    o[axis] += 1
                    o = tuple(o)
                    new[o] = new.get(o, 0.0) + c * coef
            terms = new
        re = np.zeros(self.real.spectral_shape, dtype=complex)
        im = np.zeros(self.real.spectral_shape, dtype=complex)
        for orders, c in terms.items():
            if c == 0:
                continue
            s = self.real.symbol(orders)
            re = re + c.real * s
            im = im + c.imag * s
        has_im = bool(np.any(im != 0))
        cache[key] = (re, im if has_im else None)
        return cache[key]

    def wirtinger(self, coeffs: np.ndarray, factors) -> np.ndarray:
        """Apply a Wirtinger product to a real field given by its rfft ``coeffs``."""
        re, im = self.wirtinger_symbols(tuple(factors))
        out = self.real.apply(coeffs, re)
        if im is None:
            return out.astype(complex)
        return out + 1j * self.real.apply(coeffs, im)


def complex_hessian(cgrid: ComplexTorusGrid, u: np.ndarray) -> np.ndarray:
    """``H[i, j] = d^2 u / dz_i dzbar_j`` for real ``u``; exactly Hermitian."""
    u = np.asarray(u, dtype=float)
    n = cgrid.n
    c = cgrid.real.rfft(u)
    H = np.empty((n, n) + u.shape, dtype=complex)
    for i in range(n):
        for j in range(i, n):
            H[i, j] = cgrid.wirtinger(c, (("z", i), ("zb", j)))
            if i == j:
                H[i, i] = H[i, i].real
            else:
                H[j, i] = np.conj(H[i, j])
    return H


def flat_metric(cgrid: ComplexTorusGrid) -> np.ndarray:
    n = cgrid.n
    g = np.zeros((n, n) + cgrid.shape, dtype=complex)
    for i in range(n):
        g[i, i] = 1.0
    return g


def hermitian_det(g: np.ndarray) -> np.ndarray:
    """Real determinant of a component-first Hermitian field."""
    n = g.shape[0]
    if n == 1:
        return g[0, 0].real.copy()
    if n == 2:
        return g[0, 0].real * g[1, 1].real - np.abs(g[0, 1]) ** 2
    return np.linalg.det(np.moveaxis(g, (0, 1), (-2, -1))).real


def hermitian_inverse(g: np.ndarray) -> np.ndarray:
    """Matrix inverse ``M^{-1}`` per point, component-first."""
    n = g.shape[0]
    if n == 1:
        return 1.0 / g
    if n == 2:
        det = hermitian_det(g)
        out = np.empty_like(g)
        out[0, 0] = g[1, 1] / det
        out[1, 1] = g[0, 0] / det
        out[0, 1] = -g[0, 1] / det
        out[1, 0] = -g[1, 0] / det
        return out
    inv = np.linalg.inv(np.moveaxis(g, (0, 1), (-2, -1)))
    return np.moveaxis(inv, (-2, -1), (0, 1))


def check_admissible(g: np.ndarray) -> None:
    """Per-point Cholesky test; raises :class:`AdmissibilityError`."""
    try:
        check_positive_definite(g)
    except NotPositiveDefiniteError as exc:
        raise AdmissibilityError(exc.index, exc.min_eig) from None


@dataclass(frozen=True)
class KahlerPotential:
    """Potential ``u`` over a reference metric ``g0`` (flat by default)."""

    grid: ComplexTorusGrid
    u: np.ndarray
    g0: np.ndarray | None = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.shape != self.grid.shape:
            raise ValueError("potential does not match the grid")
        object.__setattr__(self, "u", u)

    def background(self) -> np.ndarray:
        return flat_metric(self.grid) if self.g0 is None else self.g0


def potential_to_metric(p: KahlerPotential, check: bool = True) -> np.ndarray:
    """``g0 + ddbar u``, checked for admissibility."""
    g = p.background() + complex_hessian(p.grid, p.u)
    if check:
        check_admissible(g)
    return g


def ricci(cgrid: ComplexTorusGrid, g: np.ndarray) -> np.ndarray:
    """``R_{i jbar} = -d_i d_jbar log det g``."""
    det = hermitian_det(g)
    if np.any(det <= 0):
        check_admissible(g)
    return -complex_hessian(cgrid, np.log(det))


def kahler_laplacian(cgrid: ComplexTorusGrid, g: np.ndarray, f: np.ndarray,
                     ginv: np.ndarray | None = None) -> np.ndarray:
    """``Delta_a f = g^{i jbar} f_{i jbar} = tr(g^{-1} ddbar f)``."""
    if ginv is None:
        ginv = hermitian_inverse(g)
    H = complex_hessian(cgrid, f)
    return np.einsum("ij...,ji...->...", ginv, H).real


def ma_operator(p: KahlerPotential, g: np.ndarray | None = None) -> np.ndarray:
    """``det(g0 + ddbar u) / det(g0)``."""
    if g is None:
        g = potential_to_metric(p)
    return hermitian_det(g) / hermitian_det(p.background())


def realify(M: np.ndarray) -> np.ndarray:
    """Real ``2n x 2n`` block form in the ``(x_1, y_1, ...)`` axis order.

    ``[x_i, x_j] = [y_i, y_j] = Re M_ij``, ``[x_i, y_j] = Im M_ij``,
    ``[y_i, x_j] = -Im M_ij``.
    """
    n = M.shape[0]
    out = np.empty((2 * n, 2 * n) + M.shape[2:])
    out[0::2, 0::2] = M.real
    out[1::2, 1::2] = M.real
    out[0::2, 1::2] = M.imag
    out[1::2, 0::2] = -M.imag
    return out


def real_metric(g: np.ndarray) -> np.ndarray:
    """Riemannian metric associated with a Hermitian ``g``: ``2 realify(g)``.

    With this normalisation ``sqrt(det g_R) = 2^n det g`` and
    ``Delta_{g_R} = 2 Delta_a`` on real functions.
    """
    return 2.0 * realify(g)


def kahler_operator(cgrid: ComplexTorusGrid, g: np.ndarray,
                    ginv: np.ndarray | None = None) -> DivergenceOperator:
    """Divergence-form ``A x = det g * (-Delta_a x)`` with mass ``det g``.

    Built from the associated real metric, rescaled so that generalized
    eigenvalues of ``(A, det g)`` are those of ``-Delta_a``.
    """
    if ginv is None:
        ginv = hermitian_inverse(g)
    det = hermitian_det(g)
    W = 0.25 * det * realify(ginv)
    return DivergenceOperator(cgrid.real, det, W)


def gradient_norm2(cgrid: ComplexTorusGrid, ginv: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``g^{i jbar} phi_i phi_jbar`` pointwise for real ``phi``."""
    c = cgrid.real.rfft(phi)
    d = [cgrid.wirtinger(c, (("z", j),)) for j in range(cgrid.n)]
    out = 0.0
    for i in range(cgrid.n):
        for j in range(cgrid.n):
            out = out + ginv[j, i] * d[i] * np.conj(d[j])
    return np.real(out)


def unitary_conjugate(g: np.ndarray, U: np.ndarray) -> np.ndarray:
    """``U^* g U`` per point for a constant matrix ``U``."""
    return np.einsum("ai,ab...,bj->ij...", np.conj(U), g, U)


# -- Fubini-Study ---------------------------------------------------------------


_D1 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
_D2 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])
_OFFS = np.arange(-4, 5)


def _stencil_eval(func, p: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """``func`` at ``p + offsets[j]`` for all ``j`` in one vectorised call."""
    shift = offsets.reshape((offsets.shape[0],) + (1,) * (p.ndim - 1) + (p.shape[-1],))
    return np.asarray(func(p[None] + shift))


def _combine(vals: np.ndarray, index: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((size,) + vals.shape[1:], dtype=vals.dtype)
    np.add.at(out, index, weights.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals)
    return out


def fd_hessian(func, p: np.ndarray, h: float = 1e-2) -> np.ndarray:
    """Eighth-order central-difference Hessian of ``func``.

    ``p`` is a real point ``(m,)`` or a batch ``(..., m)``; ``func`` must
    accept an array of points ``(..., m)``. The result has the two
    derivative axes first, followed by the batch and output axes.
    """
    p = np.asarray(p, dtype=float)
    m = p.shape[-1]
    offs, idx, wts = [], [], []
    for a in range(m):
        for w, k in zip(_D2, _OFFS):
            o = np.zeros(m)
            o[a] = k * h
            offs.append(o)
            idx.append(a * m + a)
            wts.append(w)
        for b in range(a + 1, m):
            for wa, ka in zip(_D1, _OFFS):
                for wb, kb in zip(_D1, _OFFS):
                    if wa == 0 or wb == 0:
                        continue
                    o = np.zeros(m)
                    o[a] = ka * h
                    o[b] = kb * h
                    offs.append(o)
                    idx.append(a * m + b)
                    wts.append(wa * wb)
    vals = _stencil_eval(func, p, np.array(offs))
    out = _combine(vals, np.array(idx), np.array(wts), m * m).reshape((m, m) + vals.shape[1:])
    iu = np.triu_indices(m, 1)
    out[iu[1], iu[0]] = out[iu]
    return out / h**2


def fd_gradient(func, p: np.ndarray, h: float = 1e-2) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    m = p.shape[-1]
    offs, idx, wts = [], [], []
    for a in range(m):
        for w, k in zip(_D1, _OFFS):
            if w == 0:
                continue
            o = np.zeros(m)
            o[a] = k * h
            offs.append(o)
            idx.append(a)
            wts.append(w)
    vals = _stencil_eval(func, p, np.array(offs))
    return _combine(vals, np.array(idx), np.array(wts), m) / h


def wirtinger_from_real_hessian(hr: np.ndarray, n: int) -> np.ndarray:
    """``d_i d_jbar`` from a real Hessian in ``(x_1, y_1, ...)`` order."""
    xx = hr[0::2, 0::2]
    yy = hr[1::2, 1::2]
    xy = hr[0::2, 1::2]
    yx = hr[1::2, 0::2]
    return 0.25 * (xx + yy) + 0.25j * (xy - yx)


def _real_to_z(p: np.ndarray) -> np.ndarray:
    return p[..., 0::2] + 1j * p[..., 1::2]


def fs_potential(z: np.ndarray) -> np.ndarray:
    """``log(1 + |z|^2)`` for points ``(..., n)``."""
    return np.log1p(np.sum(np.abs(z) ** 2, axis=-1))


def fs_metric(z: np.ndarray) -> np.ndarray:
    """``delta / (1+|z|^2) - zbar_i z_j / (1+|z|^2)^2`` for points ``(..., n)``."""
    z = np.asarray(z, dtype=complex)
    s = (1.0 + np.sum(np.abs(z) ** 2, axis=-1))[..., None, None]
    return np.eye(z.shape[-1]) / s - np.conj(z)[..., :, None] * z[..., None, :] / s**2


@dataclass(frozen=True)
class FubiniStudyCheck:
    g: np.ndarray
    ricci: np.ndarray
    g_from_potential: np.ndarray
    bisectional_origin: np.ndarray

    def einstein_residual(self, n: int) -> float:
        return float(np.max(np.abs(self.ricci - (n + 1) * self.g)))


def fs_curvature_origin(n: int, h: float = 1e-2) -> np.ndarray:
    """``R_{i jbar k lbar}`` at the origin by differentiating the closed-form metric.

    Uses ``R = -d_k d_lbar g_{i jbar} + g^{p qbar} d_k g_{i qbar} d_lbar g_{p jbar}``.
    """
    p0 = np.zeros(2 * n)
    gfun = lambda p: fs_metric(_real_to_z(p))  # noqa: E731
    second = wirtinger_from_real_hessian(fd_hessian(gfun, p0, h), n)  # [k, l, i, j]
    grad = fd_gradient(gfun, p0, h)  # [a, i, j]
    dz = 0.5 * (grad[0::2] - 1j * grad[1::2])
    dzb = 0.5 * (grad[0::2] + 1j * grad[1::2])
    ginv = np.linalg.inv(gfun(p0))
    quad = np.einsum("qp,kiq,lpj->ijkl", ginv, dz, dzb)
    return -np.einsum("klij->ijkl", second) + quad


def fubini_study(z, n: int | None = None, h: float = 1e-2,
                 with_curvature: bool = True) -> FubiniStudyCheck:
    """Fubini-Study data in the chart ``U_0``.

    ``z`` is one point ``(n,)`` or a batch ``(P, n)``; matrices come back as
    ``(..., n, n)``. The metric is the closed form. Ricci is
    ``-ddbar log det g`` by eighth-order finite differences; the metric is
    also recovered from the potential ``log(1 + |z|^2)`` the same way. The
    bisectional curvature tensor is evaluated at the origin.
    """
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        z = z[None]
    n = z.shape[-1] if n is None else n
    if z.shape[-1] != n:
        raise ValueError("point dimension does not match n")
    p = np.empty(z.shape[:-1] + (2 * n,))
    p[..., 0::2] = z.real
    p[..., 1::2] = z.imag
    g = fs_metric(z)
    logdet = lambda q: np.log(np.linalg.det(fs_metric(_real_to_z(q))).real)  # noqa: E731

    def wirtinger(func):
        hw = wirtinger_from_real_hessian(fd_hessian(func, p, h), n)
        return np.moveaxis(hw, (0, 1), (-2, -1))

    ric = -wirtinger(logdet)
    gpot = wirtinger(lambda q: fs_potential(_real_to_z(q)))
    bis = fs_curvature_origin(n, h) if with_curvature else np.zeros((n,) * 4)
    return FubiniStudyCheck(g, ric, gpot, bis)


def fs_bisectional_exact(n: int) -> np.ndarray:
    """``delta_ij delta_kl + delta_il delta_kj``."""
    d = np.eye(n)
    return np.einsum("ij,kl->ijkl", d, d) + np.einsum("il,kj->ijkl", d, d)


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))


