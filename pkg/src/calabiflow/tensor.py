"""Real tensor calculus on periodic grids.

Tensor fields are stored component-first: a metric has shape
``(d, d, *grid.shape)``, Christoffel symbols ``(d, d, d, *grid.shape)`` with
``gamma[k, i, j] = Gamma^k_ij``, and the Riemann tensor
``riem[l, i, j, k] = R^l_ijk`` with
``R(d_i, d_j) d_k = R^l_ijk d_l``. Ricci is ``R_jk = R^i_ijk``, positive
on round spheres. Laplacians are the analyst's (negative semidefinite);
``lambda1`` returns the first nonzero eigenvalue of ``-Delta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import warnings

import numpy as np
import scipy.fft as sfft
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, lobpcg

from .grid import PeriodicGrid, fft_workers


class NotPositiveDefiniteError(ValueError):
    """A metric failed the per-point Cholesky test."""

    def __init__(self, index, min_eig):
        self.index = tuple(int(i) for i in index)
        self.min_eig = float(min_eig)
        super().__init__(
            f"metric not positive definite at grid index {self.index} "
            f"(min eigenvalue {self.min_eig:.3e})")


class ConvergenceError(RuntimeError):
    """An iterative method did not reach its tolerance."""


def to_points(t: np.ndarray, nslots: int = 2) -> np.ndarray:
    """Move the leading ``nslots`` component axes to the end."""
    return np.moveaxis(t, tuple(range(nslots)), tuple(range(-nslots, 0)))


def from_points(t: np.ndarray, nslots: int = 2) -> np.ndarray:
    return np.moveaxis(t, tuple(range(-nslots, 0)), tuple(range(nslots)))


def check_positive_definite(g: np.ndarray) -> None:
    """Raise :class:`NotPositiveDefiniteError` unless every point is PD.

    ``g`` is component-first, real symmetric or complex Hermitian.
    """
    pts = to_points(g)
    try:
        np.linalg.cholesky(pts)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(pts)[..., 0]
        bad = np.unravel_index(np.argmin(eig), eig.shape)
        raise NotPositiveDefiniteError(bad, eig[bad]) from None
    if not np.all(np.isfinite(pts)):
        raise NotPositiveDefiniteError(np.unravel_index(
            np.argmax(~np.isfinite(pts).all(axis=(-1, -2))), pts.shape[:-2]), np.nan)


def metric_field(grid: PeriodicGrid, g: np.ndarray, sym_tol: float = 1e-12) -> np.ndarray:
    """Validate and freeze a real metric field.

    Accepts a constant ``(d, d)`` matrix (broadcast over the grid) or a
    component-first field. Symmetry and positive definiteness are checked.
    """
    g = np.asarray(g, dtype=float)
    d = grid.dims
    if g.shape == (d, d):
        g = np.broadcast_to(g[(...,) + (None,) * d], (d, d) + grid.shape).copy()
    if g.shape != (d, d) + grid.shape:
        raise ValueError(f"metric shape {g.shape} incompatible with grid")
    asym = np.max(np.abs(g - np.swapaxes(g, 0, 1)))
    if asym > sym_tol * max(1.0, np.max(np.abs(g))):
        raise ValueError(f"metric not symmetric (max asymmetry {asym:.3e})")
    check_positive_definite(g)
    g = np.array(g)
    g.setflags(write=False)
    return g


def metric_inverse(g: np.ndarray, check: bool = True) -> np.ndarray:
    """Pointwise inverse of a component-first metric field."""
    if check:
        check_positive_definite(g)
    return from_points(np.linalg.inv(to_points(g)))


def metric_det(g: np.ndarray) -> np.ndarray:
    return np.linalg.det(to_points(g))


def partials(grid: PeriodicGrid, t: np.ndarray) -> np.ndarray:
    """First derivatives of every component, new leading axis for the direction."""
    return np.moveaxis(grid.gradient(t), -grid.dims - 1, 0)


def christoffel(grid: PeriodicGrid, g: np.ndarray, ginv: np.ndarray | None = None) -> np.ndarray:
    """Christoffel symbols of the second kind, ``gamma[k, i, j]``."""
    if ginv is None:
        ginv = metric_inverse(g)
    dg = partials(grid, g)  # dg[l, i, j] = d_l g_ij
    rest = tuple(range(3, dg.ndim))
    lower = 0.5 * (dg + np.transpose(dg, (1, 0, 2) + rest)
                   - np.transpose(dg, (1, 2, 0) + rest))  # lower[i, j, l]
    return np.einsum("kl...,ijl...->kij...", ginv, lower)


@dataclass(frozen=True)
class Curvature:
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray


def riemann_from(grid: PeriodicGrid, gamma: np.ndarray) -> np.ndarray:
    """``R^l_ijk = d_i G^l_jk - d_j G^l_ik + G^p_jk G^l_ip - G^p_ik G^l_jp``."""
    dG = partials(grid, gamma)  # dG[i, l, j, k] = d_i G^l_jk
    t1 = np.einsum("iljk...->lijk...", dG)
    quad = np.einsum("pjk...,lip...->lijk...", gamma, gamma)
    return t1 - np.swapaxes(t1, 1, 2) + quad - np.swapaxes(quad, 1, 2)


def curvature(grid: PeriodicGrid, g: np.ndarray) -> Curvature:
    """Riemann, Ricci and scalar curvature of a real metric field."""
    ginv = metric_inverse(g)
    gamma = christoffel(grid, g, ginv)
    riem = riemann_from(grid, gamma)
    ric = np.einsum("iijk...->jk...", riem)
    ric = 0.5 * (ric + np.swapaxes(ric, 0, 1))
    scal = np.einsum("ij...,ij...->...", ginv, ric)
    return Curvature(riem, ric, scal)


def lower_riemann(g: np.ndarray, riem: np.ndarray) -> np.ndarray:
    """``R_ijkl = g_lm R^m_ijk``."""
    return np.einsum("lm...,mijk...->ijkl...", g, riem)


def laplace_beltrami(grid: PeriodicGrid, g: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``Delta f = g^ij (d_i d_j f - Gamma^k_ij d_k f)``."""
    ginv = metric_inverse(g)
    gamma = christoffel(grid, g, ginv)
    df = grid.gradient(f)
    hess = grid.hessian(f)
    cov = hess - np.einsum("kij...,k...->ij...", gamma, df)
    return np.einsum("ij...,ij...->...", ginv, cov)


def volume_element(g: np.ndarray) -> np.ndarray:
    """``sqrt(det g)`` pointwise."""
    det = metric_det(g)
    if np.any(det <= 0):
        check_positive_definite(g)
    return np.sqrt(det)


def integrate(grid: PeriodicGrid, f, g: np.ndarray | None = None) -> float:
    """``sum f sqrt(det g)`` times the cell volume (flat measure if ``g`` is None)."""
    f = np.broadcast_to(np.asarray(f, dtype=float), grid.shape)
    if g is None:
        return float(np.sum(f) * grid.cell_volume)
    return float(np.sum(f * volume_element(g)) * grid.cell_volume)


# -- divergence-form operators, PCG and the spectral gap -----------------------


class DivergenceOperator:
    """``A x = -d_a (W^ab d_b x)`` with mass ``sqrt(g)``; symmetric PSD.

    ``W = sqrt(det g) g^{-1}``. ``A x = sqrt(g) * (-Delta_g x)`` analytically.
    First derivatives drop the Nyquist mode, which would leave Nyquist-plane
    modes almost unpenalized; the operator is therefore taken as the real
    part of ``D^H W D`` with complex derivative symbols ``i k`` that keep the
    Nyquist wavenumber. That adds ``sum_a K_a W^aa K_a``, with ``K_a`` the
    Nyquist wavenumber times the projection onto the Nyquist plane of axis
    ``a`` (mixed Nyquist products cancel under the real part). The result is
    exactly symmetric, has only constants in its kernel, and reproduces the
    second-derivative Laplacian symbol for constant ``W``.
    """

    def __init__(self, grid: PeriodicGrid, sqrtg: np.ndarray, W: np.ndarray):
        self.grid = grid
        self.sqrtg = sqrtg
        self.W = W
        d = grid.dims
        self._sym = [grid.symbol([1 if b == a else 0 for b in range(d)]) for a in range(d)]
        self._alt = []
        self._knyq2 = []
        for a, (r, p) in enumerate(zip(grid.resolution, grid.period)):
            shape = [1] * d
            shape[a] = r
            self._alt.append(((-1.0) ** np.arange(r)).reshape(shape))
            self._knyq2.append((np.pi * r / p) ** 2)
        c = float(np.mean(np.einsum("aa...->...", W))) / d
        k2 = -grid.laplacian_symbol
        with np.errstate(divide="ignore"):
            inv = np.where(k2 == 0, 0.0, 1.0 / (c * k2))
        self._precond = inv

    @cached_property
    def _wbar(self) -> list[np.ndarray]:
        return [np.mean(self.W[a, a], axis=a, keepdims=True) for a in range(self.grid.dims)]

    def _nyquist_mean(self, c: np.ndarray, a: int) -> np.ndarray:
        """``mean_a(x * alt_a)`` (kept as a length-1 axis) from the rfft ``c`` of ``x``."""
        d = self.grid.dims
        r = self.grid.resolution[a]
        idx = [slice(None)] * c.ndim
        idx[c.ndim - d + a] = slice(r // 2, r // 2 + 1)
        sl = c[tuple(idx)]
        others = tuple(b - d for b in range(d) if b != a)
        if not others:
            m = sl.real
        elif a == d - 1:
            m = sfft.ifftn(sl, axes=others, workers=fft_workers()).real
        else:
            res = [self.grid.resolution[b] for b in range(d) if b != a]
            m = sfft.irfftn(sl, s=res, axes=others, workers=fft_workers())
        return m / r

    def _nyquist(self, x: np.ndarray, a: int) -> np.ndarray:
        """Projection onto the Nyquist plane of grid axis ``a``."""
        ax = a - self.grid.dims
        alt = self._alt[a]
        return alt * np.mean(x * alt, axis=ax, keepdims=True)

    @classmethod
    def from_metric(cls, grid: PeriodicGrid, g: np.ndarray) -> "DivergenceOperator":
        ginv = metric_inverse(g)
        sqrtg = volume_element(g)
        return cls(grid, sqrtg, ginv * sqrtg)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        c = self.grid.rfft(x)
        return np.stack([self.grid.apply(c, s) for s in self._sym])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        c = self.grid.rfft(x)
        grad = [self.grid.apply(c, s) for s in self._sym]
        d = self.grid.dims
        acc = 0.0
        for a, s in enumerate(self._sym):
            flux = self.W[a, 0] * grad[0]
            for b in range(1, d):
                flux += self.W[a, b] * grad[b]
            acc = acc + self.grid.rfft(flux) * s
        out = -self.grid.irfft(acc)
        # P_a (W_aa P_a x) = alt_a * mean_a(W_aa) * mean_a(x alt_a)
        for a in range(d):
            out += (self._knyq2[a] * self._wbar[a] * self._nyquist_mean(c, a)) * self._alt[a]
        return out

    def energy(self, x: np.ndarray) -> np.ndarray:
        """Dirichlet form ``x . A x`` (no cell factor)."""
        grad = self.gradient(x)
        e = np.einsum("ab...,a...,b...->...", self.W, grad, grad)
        for a in range(self.grid.dims):
            px = self._nyquist(x, a)
            e = e + self._knyq2[a] * self.W[a, a] * px * px
        return np.sum(e, axis=self.grid.axes)

    def precondition(self, r: np.ndarray) -> np.ndarray:
        return self.grid.apply(self.grid.rfft(r), self._precond)

    def mass(self, x: np.ndarray) -> np.ndarray:
        return self.sqrtg * x


def pcg(apply_a, b: np.ndarray, precondition, grid: PeriodicGrid, tol: float = 1e-10,
        maxiter: int = 500, x0: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Preconditioned conjugate gradients, batched over leading axes of ``b``.

    Stops when every column satisfies ``|r| <= tol * |b|`` in the Euclidean
    norm measured after preconditioning-space projection (kernel modes of the
    preconditioner are ignored).

    Returns
    -------
    x : ndarray
    iterations : int
    """
    ax = grid.axes

    def dot(u, v):
        return np.sum(u * v, axis=ax)

    def expand(s):
        return s[(...,) + (None,) * grid.dims]

    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_a(x) if x0 is not None else b.copy()
    z = precondition(r)
    # measure only the component the operator can reach
    bnorm = np.sqrt(dot(precondition(b), b))
    bnorm = np.where(bnorm > 0, bnorm, 1.0)
    p = z.copy()
    rz = dot(r, z)
    for it in range(1, maxiter + 1):
        if np.all(np.sqrt(np.abs(rz)) <= tol * bnorm):
            return x, it - 1
        ap = apply_a(p)
        pap = dot(p, ap)
        alpha = np.where(pap > 0, rz / np.where(pap > 0, pap, 1.0), 0.0)
        x = x + expand(alpha) * p
        r = r - expand(alpha) * ap
        z = precondition(r)
        rz_new = dot(r, z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = z + expand(beta) * p
        rz = rz_new
    if np.all(np.sqrt(np.abs(rz)) <= tol * bnorm):
        return x, maxiter
    raise ConvergenceError(
        f"PCG stagnated: relative residual {np.max(np.sqrt(np.abs(rz)) / bnorm):.3e} "
        f"after {maxiter} iterations")


def _initial_block(grid: PeriodicGrid, size: int, seed: int = 0) -> np.ndarray:
    xs = grid.coords()
    vecs = []
    for a, x in enumerate(xs):
        w = 2 * np.pi / grid.period[a]
        vecs += [np.cos(w * x), np.sin(w * x)]
    k = 2
    while len(vecs) < size:
        s = sum(2 * np.pi * x / p for x, p in zip(xs, grid.period))
        vecs.append(np.cos(k * s) if grid.dims == 1 else np.cos(s + (k - 2) * 0.7))
        k += 1
    block = np.stack(vecs[:size])
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(block.shape)
    c = grid.rfft(noise)
    k2 = -grid.laplacian_symbol
    smooth = grid.irfft(c / (1.0 + k2) ** 2)
    return block + 1e-3 * smooth / np.max(np.abs(smooth))


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray
    block: np.ndarray
    ritz: np.ndarray
    iterations: int


def smallest_eigenpairs(op: DivergenceOperator, tol: float = 1e-10, block: int | None = None,
                        maxiter: int = 100, x0: np.ndarray | None = None,
                        method: str = "lobpcg", inner_tol: float = 1e-7) -> EigenResult:
    """Smallest eigenpairs of ``A x = lambda M x`` off the constants.

    ``method="lobpcg"`` runs preconditioned LOBPCG (scipy) with the
    constants as a hard constraint, restarted every few iterations;
    ``method="subspace"`` is block inverse iteration with PCG inner solves
    and a Rayleigh-Ritz step per sweep. Either way the result is accepted
    once the smallest Ritz value changes by less than ``tol`` relative on
    two consecutive rounds. The default block is ``2 d``, the multiplicity
    of the first eigenvalue on a flat square torus.
    """
    if method not in ("lobpcg", "subspace"):
        raise ValueError(f"unknown method {method!r}")
    grid = op.grid
    ax = grid.axes
    b = block if block is not None else 2 * grid.dims
    if x0 is None:
        X = _initial_block(grid, b)
    else:
        X = np.array(x0, dtype=float)
        b = X.shape[0]
    total_mass = float(np.sum(op.sqrtg))

    def deflate(Y):
        m = np.sum(Y * op.sqrtg, axis=ax) / total_mass
        return Y - m[(...,) + (None,) * grid.dims]

    X = deflate(X)
    step = _lobpcg_round(op, b) if method == "lobpcg" else None
    prev = None
    small = 0
    for it in range(1, maxiter + 1):
        if step is not None:
            vals, X = step(X)
        else:
            Y, _ = pcg(op, op.mass(X), op.precondition, grid, tol=inner_tol, maxiter=1000)
            Y = deflate(Y)
            Yf = Y.reshape(b, -1)
            AY = op(Y).reshape(b, -1)
            ka = Yf @ AY.T
            km = Yf @ (Yf * op.sqrtg.reshape(1, -1)).T
            ka = 0.5 * (ka + ka.T)
            km = 0.5 * (km + km.T)
            vals, vecs = scipy.linalg.eigh(ka, km)
            X = (vecs.T @ Yf).reshape(Y.shape)
        lam = float(vals[0])
        if prev is not None and abs(lam - prev) <= tol * abs(lam):
            small += 1
            if small >= 2:
                return EigenResult(lam, X[0], X, np.asarray(vals), it)
        else:
            small = 0
        prev = lam
    raise ConvergenceError(f"{method} did not converge in {maxiter} rounds "
                           f"(last change {abs(lam - prev) / abs(lam):.3e})")


def _lobpcg_round(op: DivergenceOperator, b: int, inner: int = 3):
    """One restarted LOBPCG round of ``inner`` iterations on flattened fields."""
    shape = op.grid.shape
    n = op.grid.size
    mass = op.sqrtg.reshape(-1, 1)

    def fields(X):
        X = np.asarray(X).reshape(n, -1)
        return X.T.reshape((X.shape[1],) + shape)

    def cols(F):
        return F.reshape(F.shape[0], n).T

    A = LinearOperator((n, n), matvec=lambda x: cols(op(fields(x))),
                       matmat=lambda X: cols(op(fields(X))), dtype=float)
    B = LinearOperator((n, n), matvec=lambda x: mass * np.asarray(x).reshape(n, -1),
                       matmat=lambda X: mass * X, dtype=float)
    P = LinearOperator((n, n), matvec=lambda x: cols(op.precondition(fields(x))),
                       matmat=lambda X: cols(op.precondition(fields(X))), dtype=float)
    ones = np.ones((n, 1))

    def run(X):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals, vecs = lobpcg(A, cols(X), B=B, M=P, Y=ones, tol=1e-300, maxiter=inner,
                                largest=False)
        order = np.argsort(vals)
        return vals[order], fields(vecs[:, order])

    return run


def lambda1(grid: PeriodicGrid, g: np.ndarray, tol: float = 1e-10, maxiter: int = 100,
            block: int | None = None) -> float:
    """Smallest nonzero eigenvalue of ``-Delta_g``.

    Parameters
    ----------
    grid : PeriodicGrid
    g : ndarray
        Component-first metric field, or a constant ``(d, d)`` matrix.
    tol : float
        Relative tolerance on the eigenvalue.
    """
    g = np.asarray(g, dtype=float)
    if g.shape == (grid.dims, grid.dims):
        g = metric_field(grid, g)
    op = DivergenceOperator.from_metric(grid, g)
    return smallest_eigenpairs(op, tol=tol, maxiter=maxiter, block=block).value


def rayleigh_quotient(op: DivergenceOperator, x: np.ndarray) -> float:
    """``int |grad x|^2 dmu / int x^2 dmu`` for the operator's metric."""
    return float(op.energy(x) / np.sum(op.sqrtg * x * x))
