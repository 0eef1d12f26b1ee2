"""Periodic grids and spectral differentiation.

Fields are plain numpy arrays whose trailing ``grid.dims`` axes are the grid
axes; any leading axes are treated as a batch. Derivatives are those of the
trigonometric interpolant: odd-order derivatives drop the Nyquist mode,
even-order ones keep it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft as sfft


def fft_workers() -> int:
    """Thread count for FFTs, read from ``CALABIFLOW_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CALABIFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _axis_symbol(k: np.ndarray, order: int, nyquist: np.ndarray) -> np.ndarray:
    """Symbol of d^order/dx^order along one axis."""
    if order == 0:
        return np.ones_like(k, dtype=complex)
    s = (1j * k) ** order
    if order % 2 == 1:
        s = np.where(nyquist, 0.0, s)
    return s


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the flat torus ``prod_a [0, period_a)``.

    Parameters
    ----------
    resolution : sequence of int
        Points per axis; each must be even and at least 8.
    period : sequence of float, optional
        Period per axis, default 1.0.
    """

    resolution: tuple[int, ...]
    period: tuple[float, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        res = tuple(int(r) for r in np.atleast_1d(self.resolution))
        if self.period is None:
            per = (1.0,) * len(res)
        else:
            per = tuple(float(p) for p in np.atleast_1d(self.period))
        if len(per) != len(res):
            raise ValueError("period and resolution must have the same length")
        for r in res:
            if r < 8 or r % 2:
                raise ValueError(f"resolution {r} must be even and >= 8")
        for p in per:
            if not p > 0:
                raise ValueError(f"period {p} must be positive")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "period", per)

    @property
    def dims(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(p / r for p, r in zip(self.period, self.resolution))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.period))

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dims, 0))

    def coords(self) -> list[np.ndarray]:
        """Meshgrid of coordinates, one array per axis (``ij`` indexing)."""
        xs = [np.arange(r) * h for r, h in zip(self.resolution, self.spacing)]
        return np.meshgrid(*xs, indexing="ij")

    # -- spectral machinery -------------------------------------------------

    @cached_property
    def _wavenumbers(self) -> list[np.ndarray]:
        """Angular wavenumbers on the rfft layout, broadcastable per axis."""
        out = []
        for a, (r, p) in enumerate(zip(self.resolution, self.period)):
            if a == self.dims - 1:
                k = sfft.rfftfreq(r, d=p / r) * 2 * np.pi
                nyq = np.arange(k.size) == r // 2
            else:
                k = sfft.fftfreq(r, d=p / r) * 2 * np.pi
                nyq = np.arange(r) == r // 2
            shape = [1] * self.dims
            shape[a] = k.size
            out.append((k.reshape(shape), nyq.reshape(shape)))
        return out

    def wavenumber(self, axis: int) -> np.ndarray:
        """Angular wavenumbers along ``axis`` in the rfft layout."""
        return self._wavenumbers[axis][0]

    def symbol(self, orders: Sequence[int]) -> np.ndarray:
        """Fourier symbol of the mixed derivative with the given axis orders."""
        if len(orders) != self.dims:
            raise ValueError("need one order per axis")
        s = np.ones((1,) * self.dims, dtype=complex)
        for a, o in enumerate(orders):
            k, nyq = self._wavenumbers[a]
            s = s * _axis_symbol(k, int(o), nyq)
        return s

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """Symbol of the flat Laplacian, sum of second derivatives (real)."""
        s = 0.0
        for a in range(self.dims):
            k = self._wavenumbers[a][0]
            s = s - k**2
        return np.broadcast_to(s, self.spectral_shape).copy()

    @cached_property
    def kernel_mask(self) -> np.ndarray:
        """Modes killed by every first derivative: all indices 0 or Nyquist."""
        m = np.ones((1,) * self.dims, dtype=bool)
        for a in range(self.dims):
            k, nyq = self._wavenumbers[a]
            m = m & ((k == 0) | nyq)
        return np.broadcast_to(m, self.spectral_shape).copy()

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.resolution[:-1] + (self.resolution[-1] // 2 + 1,)

    def rfft(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfftn(values, axes=self.axes, workers=fft_workers())

    def irfft(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfftn(coeffs, s=self.resolution, axes=self.axes,
                           workers=fft_workers())

    def apply(self, coeffs: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        """Inverse transform of ``symbol * coeffs``; symbol must be Hermitian."""
        return self.irfft(coeffs * symbol)

    # -- derivatives --------------------------------------------------------

    def derivative(self, values: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
        """Spectral derivative of a real field along one axis."""
        return spectral_derivative(self, values, axis, order)

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """All first derivatives, stacked on a new axis before the grid axes."""
        c = self.rfft(values)
        out = [self.apply(c, self.symbol(_unit(self.dims, a)))
               for a in range(self.dims)]
        return np.stack(out, axis=-self.dims - 1)

    def hessian(self, values: np.ndarray) -> np.ndarray:
        """Second derivatives d_a d_b, shape (..., d, d, *grid)."""
        d = self.dims
        c = self.rfft(values)
        batch = values.shape[:-d]
        out = np.empty(batch + (d, d) + self.shape)
        pre = (slice(None),) * len(batch)
        for a in range(d):
            for b in range(a, d):
                o = [0] * d
                o[a] += 1
                o[b] += 1
                out[pre + (a, b)] = self.apply(c, self.symbol(o))
                out[pre + (b, a)] = out[pre + (a, b)]
        return out

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        """Flat Laplacian."""
        return self.apply(self.rfft(values), self.laplacian_symbol)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Flat integral over the grid axes (trapezoid = spectral rule)."""
        return np.sum(values, axis=self.axes) * self.cell_volume

    def mean(self, values: np.ndarray) -> np.ndarray:
        return np.mean(values, axis=self.axes)


def _unit(d: int, a: int) -> list[int]:
    o = [0] * d
    o[a] = 1
    return o


def spectral_derivative(grid: PeriodicGrid, values: np.ndarray, axis: int,
                        order: int = 1) -> np.ndarray:
    """Derivative of the trigonometric interpolant of ``values``.

    Parameters
    ----------
    grid : PeriodicGrid
    values : ndarray
        Real samples, trailing axes matching ``grid.shape``.
    axis : int
        Grid axis, ``0 <= axis < grid.dims``.
    order : {1, 2}

    Returns
    -------
    ndarray
        Same shape as ``values``.
    """
    if not 0 <= axis < grid.dims:
        raise IndexError(f"axis {axis} out of range for a {grid.dims}-d grid")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    values = np.asarray(values, dtype=float)
    if values.shape[-grid.dims:] != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    o = [0] * grid.dims
    o[axis] = order
    return grid.apply(grid.rfft(values), grid.symbol(o))


def trig_field(grid: PeriodicGrid, rng: np.random.Generator, kmax: int = 2,
               amplitude: float = 1.0, zero_mean: bool = True) -> np.ndarray:
    """Seeded band-limited trigonometric polynomial, scaled to sup = amplitude.

    Fourier coefficients are drawn for integer wave vectors with every
    component in ``[-kmax, kmax]`` and damped like ``exp(-|k|^2 / 2)``.
    """
    d = grid.dims
    coeffs = np.zeros(grid.spectral_shape, dtype=complex)
    idx = []
    for a, r in enumerate(grid.resolution):
        n = r // 2 + 1 if a == d - 1 else r
        ints = np.rint(np.asarray(grid.wavenumber(a)).ravel()
                       * grid.period[a] / (2 * np.pi)).astype(int)
        idx.append(ints[:n])
    mesh = np.meshgrid(*idx, indexing="ij")
    mask = np.ones(grid.spectral_shape, dtype=bool)
    for m in mesh:
        mask &= np.abs(m) <= kmax
    k2 = sum(m.astype(float) ** 2 for m in mesh)
    n_active = int(mask.sum())
    draw = rng.standard_normal(n_active) + 1j * rng.standard_normal(n_active)
    coeffs[mask] = draw * np.exp(-0.5 * k2[mask])
    if zero_mean:
        coeffs[(0,) * d] = 0.0
    values = grid.irfft(coeffs)
    if zero_mean:
        values = values - values.mean()
    return amplitude * values / np.max(np.abs(values))
