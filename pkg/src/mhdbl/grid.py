"""Mixed Fourier/finite-difference grid for the half-plane strip.

x is periodic on [0, L_x) and handled spectrally; y lives on a uniform
grid over [0, Y_max] with second order finite differences.  Fields are
stored as complex x-mode amplitudes per y node (shape (ny, nx), y major),
normalized so that a physical field cos(xi_1 x) f(y) has amplitude f(y)/2
at the modes +-xi_1.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft


class TailViolationError(RuntimeError):
    """Weighted field mass escaped toward the top of the y domain."""


def _workers() -> int:
    raw = os.environ.get("MHDBL_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid: nx Fourier modes on [0, lx), ny nodes on [0, ymax]."""

    lx: float
    nx: int
    ymax: float
    ny: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if not _is_pow2(self.nx) or self.nx < 8:
            raise ValueError(f"nx must be a power of two >= 8, got {self.nx}")
        if not self.ymax > 4.0:
            raise ValueError(f"ymax must exceed 4, got {self.ymax}")
        if self.ny < 16:
            raise ValueError(f"ny must be >= 16, got {self.ny}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError("dealias_fraction must be in (0, 1]")
        if self.lx <= 0.0:
            raise ValueError("lx must be positive")

    # ---- derived geometry -------------------------------------------------

    @property
    def dy(self) -> float:
        return self.ymax / (self.ny - 1)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.ymax, self.ny)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * (self.lx / self.nx)

    @property
    def xi(self) -> np.ndarray:
        """Mode frequencies 2*pi*j/lx, j in [-nx/2, nx/2), FFT layout."""
        return np.fft.fftfreq(self.nx, d=self.lx / self.nx) * 2.0 * np.pi

    @property
    def trapz_weights(self) -> np.ndarray:
        w = np.full(self.ny, self.dy)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    @property
    def dealias_mask(self) -> np.ndarray:
        """True on kept modes: |j| <= dealias_fraction * nx/2."""
        j = np.fft.fftfreq(self.nx) * self.nx
        return np.abs(j) <= self.dealias_fraction * (self.nx / 2)

    @property
    def mode_order(self) -> np.ndarray:
        """Column permutation sorting modes by ascending |xi| (DC first).

        Fixes the summation order of reductions over modes so reruns are
        bit reproducible regardless of how the coefficients were produced.
        """
        j = np.fft.fftfreq(self.nx) * self.nx
        return np.lexsort((j, np.abs(j)))


BC_DIRICHLET = "dirichlet"
BC_NEUMANN = "neumann"


@dataclass
class Field:
    """x-spectral field on a GridSpec.

    coeffs[i, j] is the amplitude of mode xi_j at height y_i.  Real
    physical fields keep the Hermitian symmetry c(-xi) = conj(c(xi));
    `bc` tags the wall behaviour at y = 0 ("dirichlet": value pinned to
    zero, "neumann": zero normal derivative).  The top boundary is always
    a homogeneous Dirichlet truncation of the decaying far tail.
    """

    grid: GridSpec
    coeffs: np.ndarray
    bc: str = BC_DIRICHLET

    def __post_init__(self):
        if self.coeffs.shape != (self.grid.ny, self.grid.nx):
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match grid "
                f"({self.grid.ny}, {self.grid.nx})"
            )
        if self.bc not in (BC_DIRICHLET, BC_NEUMANN):
            raise ValueError(f"unknown bc tag {self.bc!r}")
        if self.coeffs.dtype != np.complex128:
            self.coeffs = self.coeffs.astype(np.complex128)

    @classmethod
    def zeros(cls, grid: GridSpec, bc: str = BC_DIRICHLET) -> "Field":
        return cls(grid, np.zeros((grid.ny, grid.nx), dtype=np.complex128), bc)

    @classmethod
    def from_physical(cls, grid: GridSpec, values: np.ndarray,
                      bc: str = BC_DIRICHLET) -> "Field":
        return cls(grid, x_transform(grid, np.asarray(values, dtype=float),
                                     "forward"), bc)

    @classmethod
    def from_profiles(cls, grid: GridSpec, x_spectrum: np.ndarray,
                      y_profile: np.ndarray, bc: str = BC_DIRICHLET) -> "Field":
        """Separable field: coeffs[i, j] = y_profile[i] * x_spectrum[j]."""
        c = np.outer(np.asarray(y_profile, dtype=complex),
                     np.asarray(x_spectrum, dtype=complex))
        return cls(grid, c, bc)

    def copy(self) -> "Field":
        return Field(self.grid, self.coeffs.copy(), self.bc)

    def physical(self) -> np.ndarray:
        return x_transform(self.grid, self.coeffs, "inverse")

    def hermitian_defect(self) -> float:
        """Max deviation from c(-xi) = conj(c(xi)) (0 for real fields)."""
        c = self.coeffs
        mirrored = np.conj(c[:, (-np.arange(self.grid.nx)) % self.grid.nx])
        return float(np.max(np.abs(c - mirrored)))


# ---- transforms ------------------------------------------------------------


def x_transform(grid: GridSpec, values: np.ndarray, direction: str) -> np.ndarray:
    """FFT in x.  "forward": physical (ny, nx) real -> mode amplitudes.
    "inverse": amplitudes -> physical real array."""
    if direction == "forward":
        return sfft.fft(np.asarray(values, dtype=float), axis=-1,
                        workers=_workers()) / grid.nx
    if direction == "inverse":
        out = sfft.ifft(np.asarray(values, dtype=complex), axis=-1,
                        workers=_workers()) * grid.nx
        return np.ascontiguousarray(out.real)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def dealias(field: Field) -> Field:
    c = field.coeffs.copy()
    c[:, ~field.grid.dealias_mask] = 0.0
    return Field(field.grid, c, field.bc)


def ddx(field: Field) -> Field:
    """Exact spectral x derivative (i*xi per mode)."""
    return Field(field.grid, field.coeffs * (1j * field.grid.xi), field.bc)


def ddy(field: Field) -> Field:
    """Second order centered y derivative with ghost closures from the bc tag.

    Dirichlet: odd ghost f(-dy) = -f(dy); Neumann: even ghost f(-dy) = f(dy).
    Top: odd ghost about ymax (value pinned to zero there).
    """
    c = field.coeffs
    dy = field.grid.dy
    out = np.empty_like(c)
    out[1:-1] = (c[2:] - c[:-2]) / (2.0 * dy)
    if field.bc == BC_DIRICHLET:
        out[0] = c[1] / dy
    else:
        out[0] = 0.0
    out[-1] = -c[-2] / dy
    # the derivative of a Dirichlet field is Neumann-like at the wall and
    # vice versa; tag conservatively as Neumann (no pinned wall value).
    new_bc = BC_NEUMANN if field.bc == BC_DIRICHLET else BC_DIRICHLET
    return Field(field.grid, out, new_bc)


def d2dy(field: Field) -> Field:
    """Second order centered second derivative, bc-tagged ghost closure."""
    c = field.coeffs
    dy2 = field.grid.dy ** 2
    out = np.empty_like(c)
    out[1:-1] = (c[2:] - 2.0 * c[1:-1] + c[:-2]) / dy2
    if field.bc == BC_DIRICHLET:
        out[0] = -2.0 * c[0] / dy2
    else:
        out[0] = 2.0 * (c[1] - c[0]) / dy2
    out[-1] = -2.0 * c[-1] / dy2
    return Field(field.grid, out, field.bc)


# ---- quadrature ------------------------------------------------------------


def integrate_y_tail(field: Field) -> Field:
    """Trapezoid integral from y up to ymax, accumulated from the top.

    Result[i] = int_{y_i}^{ymax} f dy'; exactly zero at the top node.
    """
    c = field.coeffs
    dy = field.grid.dy
    seg = 0.5 * dy * (c[1:] + c[:-1])
    out = np.zeros_like(c)
    out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    return Field(field.grid, out, BC_DIRICHLET)


def integrate_y_from0(field: Field) -> Field:
    """Trapezoid integral from 0 up to y; exactly zero at the wall.

    Shares the top-down accumulation of integrate_y_tail and returns
    total - tail, so the two integrals sum to the per-mode total without
    reassociating anything.  (The tail must be accumulated from the top:
    its far-field rows have to decay with relative accuracy because they
    later meet Gaussian-growing weights.)
    """
    c = field.coeffs
    dy = field.grid.dy
    seg = 0.5 * dy * (c[1:] + c[:-1])
    suffix = np.cumsum(seg[::-1], axis=0)[::-1]
    out = np.zeros_like(c)
    out[1:-1] = suffix[0] - suffix[1:]
    out[-1] = suffix[0]
    return Field(field.grid, out, BC_DIRICHLET)


def column_flux(field: Field) -> np.ndarray:
    """Per-mode trapezoid integral over the whole y range (shape (nx,))."""
    w = field.grid.trapz_weights
    return w @ field.coeffs


# ---- weighted norms --------------------------------------------------------


def psi_weight(grid: GridSpec, a: float, t: float) -> np.ndarray:
    """exp(a * y^2 / (8 <t>)) sampled on the y nodes, <t> = 1 + t.

    Rows beyond the double-precision range come back as inf without a
    warning; callers mask rows whose data is exactly zero and treat any
    surviving non-finite product as a tail violation."""
    with np.errstate(over="ignore"):
        return np.exp(a * grid.y ** 2 / (8.0 * (1.0 + t)))


def weighted_l2(field: Field, a: float, t: float) -> float:
    """Gaussian-weighted L2 norm || e^{a Psi} f ||, Psi = y^2/(8<t>).

    Exact in x via Parseval (int |f|^2 dx = lx * sum_j |c_j|^2), trapezoid
    in y.  Mode summation runs in ascending |xi| order; rows accumulate in
    ascending y.  Raises TailViolationError if the weighted amplitude is
    not finite (mass reached the exponential part of the weight).
    """
    g = field.grid
    c2 = np.abs(field.coeffs[:, g.mode_order]) ** 2
    row = np.add.reduce(c2, axis=1)
    srow = np.sqrt(row)
    with np.errstate(over="ignore", invalid="ignore"):
        amp = np.where(srow == 0.0, 0.0, psi_weight(g, a, t) * srow)
    if not np.all(np.isfinite(amp)):
        raise TailViolationError(
            "weighted amplitude overflowed; field tail too wide for ymax")
    total = np.add.reduce(g.trapz_weights * amp * amp)
    return float(np.sqrt(g.lx * total))


def parseval_l2(field: Field) -> float:
    """Plain L2 norm over the strip (a = 0 weight)."""
    return weighted_l2(field, 0.0, 0.0)
