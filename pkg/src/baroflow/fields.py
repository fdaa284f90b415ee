"""Periodic-box fields and their discrete Fourier representation.

The box is the d-dimensional torus [-P/2, P/2)^d sampled on a uniform
n^d lattice.  Forward transforms carry the 1/|box| normalization, so a
plain mode sum (no prefactor) reconstructs the field and Parseval reads

    (1/vol) * sum_x |w(x)|^2 * dx^d  ==  sum_k |w_hat(k)|^2 .
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PeriodicGrid",
    "Field",
    "SpectralField",
    "make_grid",
    "dft_forward",
    "dft_inverse",
    "shift_field",
    "lp_norm",
    "box_integral",
    "weighted_fields",
]


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform sampling of the periodic box [-P/2, P/2)^d.

    Parameters
    ----------
    d : int
        Spatial dimension, 1, 2 or 3.
    n : int
        Points per axis.  Must be even and at least 4 (powers of two are
        fastest but any even n is accepted).
    P : float
        Box edge length.

    Attributes set during construction
    ----------------------------------
    dx : float
        Lattice spacing P / n.
    vol : float
        Box volume P**d.
    shape : tuple of int
        Spatial array shape, (n,) * d.
    modes : list of ndarray
        Integer mode numbers per axis in FFT storage order, with the
        Nyquist entry labelled +n/2.  Shaped for broadcasting.
    wavevectors : list of ndarray
        (2*pi/P) * modes, broadcastable per axis.
    ik_deriv : list of ndarray
        i*k per axis with the Nyquist mode zeroed, for odd-order
        spectral derivatives of real fields.
    k2 : ndarray
        |k|^2 on the full lattice (Nyquist included), for diffusion.
    mode_norm : ndarray
        Euclidean length of the integer mode vector, full lattice.
    shell : ndarray
        Integer shell index round(|mode|), full lattice.
    n_shells : int
        Number of shells, max(shell) + 1.
    dealias : ndarray of bool
        Two-thirds-rule mask, True where |mode| <= n//3 on every axis.
    """

    d: int
    n: int
    P: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 4 or self.n % 2 != 0:
            raise ValueError(f"points per axis must be even and >= 4, got {self.n}")
        if not (self.P > 0):
            raise ValueError(f"box length must be positive, got {self.P}")
        object.__setattr__(self, "P", float(self.P))

        n, d, P = self.n, self.d, self.P
        object.__setattr__(self, "dx", P / n)
        object.__setattr__(self, "vol", P**d)
        object.__setattr__(self, "shape", (n,) * d)

        modes_1d = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
        modes_1d[n // 2] = n // 2  # label the Nyquist mode +n/2
        modes, wavevectors, ik_deriv = [], [], []
        for axis in range(d):
            sh = [1] * d
            sh[axis] = n
            m = modes_1d.reshape(sh)
            modes.append(m)
            wavevectors.append((2.0 * np.pi / P) * m)
            kd = (2.0 * np.pi / P) * modes_1d.astype(np.float64)
            kd[n // 2] = 0.0  # Nyquist is ambiguous under differentiation
            ik_deriv.append((1j * kd).reshape(sh))
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "wavevectors", wavevectors)
        object.__setattr__(self, "ik_deriv", ik_deriv)

        k2 = np.zeros(self.shape)
        mode_sq = np.zeros(self.shape)
        for axis in range(d):
            k2 = k2 + wavevectors[axis].astype(np.float64) ** 2
            mode_sq = mode_sq + modes[axis].astype(np.float64) ** 2
        mode_norm = np.sqrt(mode_sq)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "mode_norm", mode_norm)
        shell = np.rint(mode_norm).astype(np.int64)
        object.__setattr__(self, "shell", shell)
        object.__setattr__(self, "n_shells", int(shell.max()) + 1)

        cut = n // 3
        keep = np.ones(self.shape, dtype=bool)
        for axis in range(d):
            keep &= np.abs(modes[axis]) <= cut
        object.__setattr__(self, "dealias", keep)

        # Samples start at -P/2, so mode phases pick up e^{-ik*x0} = (-1)^mode
        # per axis relative to the raw FFT.  The factor is its own inverse.
        phase = np.ones(self.shape)
        for axis in range(d):
            phase = phase * np.where(modes[axis] % 2 == 0, 1.0, -1.0)
        object.__setattr__(self, "origin_phase", phase)

    def axes_coordinates(self):
        """Per-axis sample coordinates in [-P/2, P/2), broadcastable."""
        x0 = -0.5 * self.P + self.dx * np.arange(self.n)
        out = []
        for axis in range(self.d):
            sh = [1] * self.d
            sh[axis] = self.n
            out.append(x0.reshape(sh))
        return out

    def spatial_axes(self):
        return tuple(range(-self.d, 0))


def make_grid(d: int, n: int, P: float) -> PeriodicGrid:
    """Construct a PeriodicGrid, validating d, n and P."""
    return PeriodicGrid(d=d, n=n, P=P)


def _check_component_shape(grid: PeriodicGrid, values: np.ndarray) -> int:
    if values.shape == grid.shape:
        return 1
    if values.ndim == grid.d + 1 and values.shape[1:] == grid.shape and values.shape[0] >= 1:
        return values.shape[0]
    raise ValueError(
        f"values shape {values.shape} does not match grid shape {grid.shape} "
        "(scalar) or (components,) + grid shape"
    )


@dataclass(frozen=True)
class Field:
    """Real-valued sampled field, scalar or multi-component.

    Scalar fields store shape grid.shape, multi-component fields
    (components,) + grid.shape.  Values are copied and frozen at
    construction; fields are immutable once built.
    """

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        c = _check_component_shape(self.grid, vals)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "components", c)

    @property
    def is_scalar(self) -> bool:
        return self.components == 1


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a Field on the full integer mode lattice.

    Coefficients follow the grid's FFT storage order and the 1/vol
    forward normalization, so coefficients are mode amplitudes.
    """

    grid: PeriodicGrid
    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=np.complex128, copy=True)
        c = _check_component_shape(self.grid, coef)
        if not np.all(np.isfinite(coef)):
            raise ValueError("spectral coefficients must be finite")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "components", c)


def dft_forward(f: Field) -> SpectralField:
    """Forward transform with amplitude normalization 1/n^d.

    A single mode A*cos(k.x) maps to coefficients A/2 at +/-k.
    """
    axes = f.grid.spatial_axes()
    coef = np.fft.fftn(f.values, axes=axes) / float(f.grid.n**f.grid.d)
    return SpectralField(grid=f.grid, coefficients=coef * f.grid.origin_phase)


def dft_inverse(s: SpectralField, imag_tol: float = 1e-10) -> Field:
    """Mode sum back to samples; rejects coefficients that are not the
    transform of a real field (relative imaginary residual > imag_tol)."""
    axes = s.grid.spatial_axes()
    w = np.fft.ifftn(s.coefficients * s.grid.origin_phase, axes=axes) * float(s.grid.n**s.grid.d)
    re, im = np.real(w), np.imag(w)
    scale = max(float(np.max(np.abs(re))), 1e-300)
    worst = float(np.max(np.abs(im)))
    if worst > imag_tol * scale:
        raise ValueError(
            f"inverse transform is not real: imaginary residual {worst:.3e} "
            f"exceeds {imag_tol:.1e} of field scale {scale:.3e}"
        )
    return Field(grid=s.grid, values=re)


def shift_field(f: Field, offsets) -> Field:
    """Circularly shift samples: result(x) = f(x + offsets*dx).

    offsets is an integer, or one integer per axis, in lattice units.
    The shift is an exact index roll, no interpolation.
    """
    d = f.grid.d
    if np.isscalar(offsets):
        offsets = (int(offsets),) * d
    offsets = tuple(int(o) for o in offsets)
    if len(offsets) != d:
        raise ValueError(f"expected {d} offsets, got {len(offsets)}")
    axes = f.grid.spatial_axes()
    rolled = np.roll(f.values, shift=tuple(-o for o in offsets), axis=axes)
    return Field(grid=f.grid, values=rolled)


def _pointwise_magnitude(f: Field) -> np.ndarray:
    if f.is_scalar:
        return np.abs(f.values)
    return np.sqrt(np.sum(f.values**2, axis=0))


def lp_norm(f: Field, p: float, mode: str = "full") -> float:
    """L^p norm over the box, exact lattice quadrature.

    mode "full" returns (sum |f|^p dx^d)^(1/p); mode "volume" divides
    the integral by the box volume first.  Multi-component fields use
    the pointwise Euclidean magnitude.  Summation is exactly rounded
    (math.fsum), so any relabeling of samples gives the identical float.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if mode not in ("full", "volume"):
        raise ValueError(f"mode must be 'full' or 'volume', got {mode!r}")
    mag = _pointwise_magnitude(f)
    total = math.fsum((mag**p).ravel().tolist())
    if mode == "full":
        total *= f.grid.dx**f.grid.d
    else:
        total /= float(f.grid.n**f.grid.d)
    return total ** (1.0 / p)


def box_integral(values: np.ndarray, grid: PeriodicGrid) -> float:
    """Integral of a sampled scalar over the box, dx^d-weighted fsum."""
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist()) * grid.dx**grid.d


def weighted_fields(
    rho: Field,
    m: Field,
    gamma: float,
    kappa: float,
    rho_min: float = 1e-10,
) -> Field:
    """Energy-weighted bundle w = (sqrt(rho)*u, sqrt(rho)*c).

    Velocity is m / max(rho, rho_min) and the sonic weight uses
    c^2 = p/rho = kappa*rho^(gamma-1), so componentwise

        w_u = m / sqrt(max(rho, rho_min)) * (rho / max(rho, rho_min)) ** 0
            = sqrt(rho) * m / max(rho, rho_min),
        w_c = sqrt(kappa) * rho^(gamma/2),

    and 0.5*|w_u|^2 + |w_c|^2/(gamma-1) equals the pointwise total
    energy density wherever rho >= rho_min.  Returns a Field with
    d + 1 components, w_u first.
    """
    if gamma <= 1:
        raise ValueError(f"gamma must exceed 1, got {gamma}")
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if rho.grid is not m.grid and rho.grid != m.grid:
        raise ValueError("rho and m live on different grids")
    if not rho.is_scalar or m.components != rho.grid.d:
        raise ValueError("expected scalar rho and d-component m")
    r = rho.values
    if float(np.min(r)) < -1e-12:
        raise ValueError(f"density has negative values beyond tolerance: min {np.min(r):.3e}")
    r = np.maximum(r, 0.0)
    denom = np.maximum(r, rho_min)
    w = np.empty((rho.grid.d + 1,) + rho.grid.shape)
    w[: rho.grid.d] = np.sqrt(r) * m.values / denom
    w[rho.grid.d] = math.sqrt(kappa) * r ** (0.5 * gamma)
    return Field(grid=rho.grid, values=w)
