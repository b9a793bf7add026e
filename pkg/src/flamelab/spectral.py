"""Periodic-grid fields and the spectral building blocks shared by solver and models.

Fields live on a uniform grid over (-pi, pi]^d with d in {1, 2}. Transforms use
the real-to-complex convention (Hermitian storage along the last axis,
normalization 1/p^d on the inverse), so a Spectrum of a p-point axis holds
p//2 + 1 coefficients for the non-negative wavenumbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError

__all__ = [
    "Grid",
    "Field",
    "Spectrum",
    "fft_forward",
    "fft_inverse",
    "gamma",
    "spectral_derivative",
    "dispersion_symbol",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid: `p` points per axis on (-pi, pi]^d."""

    d: int
    p: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigurationError(f"grid dimension must be 1 or 2, got {self.d}")
        if self.p < 4 or (self.p & (self.p - 1)) != 0:
            raise ConfigurationError(f"points per axis must be a power of two >= 4, got {self.p}")

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / self.p

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.p,) * self.d

    @property
    def half_shape(self) -> tuple[int, ...]:
        """Shape of the Hermitian-stored spectrum over the spatial axes."""
        return (self.p,) * (self.d - 1) + (self.p // 2 + 1,)

    @property
    def npoints(self) -> int:
        return self.p**self.d

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays per axis, x_j = -pi + j * spacing."""
        x = -np.pi + self.spacing * np.arange(self.p)
        return (x,) * self.d

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumber array per spatial axis of the half spectrum.

        The last axis carries the non-negative rfft frequencies; any leading
        axis carries the full signed set.
        """
        ks = []
        for ax in range(self.d):
            if ax == self.d - 1:
                ks.append(np.arange(self.p // 2 + 1, dtype=np.float64))
            else:
                ks.append(np.fft.fftfreq(self.p, d=1.0 / self.p).astype(np.float64))
        return tuple(ks)

    def wavenumber_norm(self) -> np.ndarray:
        """|kappa| on the half-spectrum layout."""
        ks = self.wavenumbers()
        if self.d == 1:
            return ks[0]
        k0, k1 = ks
        return np.sqrt(k0[:, None] ** 2 + k1[None, :] ** 2)


@dataclass
class Field:
    """Real-valued channels sampled on a Grid; values shaped (channels, *grid)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim == self.grid.d:
            self.values = self.values[None]
        if self.values.shape[1:] != self.grid.shape:
            raise ConfigurationError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if np.iscomplexobj(self.values):
            raise ConfigurationError("field values must be real")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        xs = np.meshgrid(*grid.coords(), indexing="ij")
        return cls(grid, np.asarray(fn(*xs), dtype=np.float64))


@dataclass
class Spectrum:
    """Hermitian-stored complex coefficients of a real Field."""

    grid: Grid
    coef: np.ndarray

    def __post_init__(self):
        self.coef = np.asarray(self.coef)
        if self.coef.ndim == self.grid.d:
            self.coef = self.coef[None]
        if self.coef.shape[1:] != self.grid.half_shape:
            raise ConfigurationError(
                f"spectrum shape {self.coef.shape} does not match grid {self.grid.half_shape}"
            )

    @property
    def channels(self) -> int:
        return self.coef.shape[0]


def _spatial_axes(d: int) -> tuple[int, ...]:
    return tuple(range(-d, 0))


def fft_forward(f: Field) -> Spectrum:
    """Forward real transform (unnormalized), per channel."""
    return Spectrum(f.grid, sfft.rfftn(f.values, axes=_spatial_axes(f.grid.d)))


def fft_inverse(s: Spectrum) -> Field:
    """Inverse transform back to a real Field (1/p^d normalization)."""
    return Field(s.grid, sfft.irfftn(s.coef, s=s.grid.shape, axes=_spatial_axes(s.grid.d)))


def gamma(f: Field) -> Field:
    """Non-local operator: multiply each Fourier mode by |kappa|."""
    s = fft_forward(f)
    return fft_inverse(Spectrum(f.grid, s.coef * f.grid.wavenumber_norm()))


def spectral_derivative(f: Field, which: str):
    """Spectral gradient / laplacian / biharmonic of a Field.

    `grad` returns a tuple of d Fields (one per axis) with the Nyquist mode of
    each differentiated axis zeroed; `laplacian` and `biharmonic` return one
    Field (symbols -|kappa|^2 and |kappa|^4).
    """
    grid = f.grid
    s = fft_forward(f)
    if which == "grad":
        out = []
        for ax, k in enumerate(grid.wavenumbers()):
            ik = 1j * k.copy()
            if ax == grid.d - 1:
                ik[-1] = 0.0  # unpaired Nyquist mode of the rfft axis
            else:
                ik[grid.p // 2] = 0.0
            shape = [1] * grid.d
            shape[ax] = -1
            out.append(fft_inverse(Spectrum(grid, s.coef * ik.reshape(shape))))
        return tuple(out)
    k2 = grid.wavenumber_norm() ** 2
    if which == "laplacian":
        return fft_inverse(Spectrum(grid, s.coef * (-k2)))
    if which == "biharmonic":
        return fft_inverse(Spectrum(grid, s.coef * k2**2))
    raise ConfigurationError(f"unknown derivative kind {which!r}")


def dispersion_symbol(eq: str, beta: float, kappa):
    """Linear growth rate omega(|kappa|) of the MS or KS equation.

    MS: tau * (|k|/beta - |k|^2/beta^2) with tau = beta/10.
    KS: |k|^2/beta^2 - |k|^4/beta^4.
    Both vanish at |k| = beta, the largest unstable wavenumber.
    """
    if beta <= 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    k = np.abs(np.asarray(kappa, dtype=np.float64))
    if eq == "MS":
        tau = beta / 10.0
        om = tau * (k / beta - (k / beta) ** 2)
    elif eq == "KS":
        om = (k / beta) ** 2 - (k / beta) ** 4
    else:
        raise ConfigurationError(f"unknown equation {eq!r}")
    return om if om.ndim else float(om)
