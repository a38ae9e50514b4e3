"""Dyadic frequency analysis in x: smooth shell partition, Besov norms,
analytic-band multipliers, paraproduct split, time-integrated shell norms.

Shells follow the classical convention: a low cutoff chi supported in
{|tau| <= 4/3} equal to 1 on {|tau| <= 3/4}, and phi(tau) = chi(tau/2) -
chi(tau) supported in {3/4 <= |tau| <= 8/3}, with chi + sum_{k>=0}
phi(2^-k .) = 1 and sum_{k in Z} phi(2^-k tau) = 1 for tau > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import Field, GridSpec, TailViolationError, psi_weight, x_transform


# ---- bump functions --------------------------------------------------------


def _gexp(tau):
    """exp(-1/tau) for tau > 0, 0 otherwise; C-infinity on the line."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    pos = tau > 0.0
    out[pos] = np.exp(-1.0 / tau[pos])
    return out


def smooth_step(tau):
    """C-infinity monotone 0 -> 1 transition across [0, 1]."""
    g0 = _gexp(tau)
    g1 = _gexp(1.0 - tau)
    return g0 / (g0 + g1)


_LO, _HI = 0.75, 4.0 / 3.0


def chi_lowpass(tau):
    """Low cutoff: 1 on |tau| <= 3/4, 0 on |tau| >= 4/3, smooth between."""
    t = np.abs(np.asarray(tau, dtype=float))
    return 1.0 - smooth_step((t - _LO) / (_HI - _LO))


def phi_shell(tau):
    """Shell bump chi(tau/2) - chi(tau), supported in 3/4 <= |tau| <= 8/3."""
    t = np.abs(np.asarray(tau, dtype=float))
    return chi_lowpass(t / 2.0) - chi_lowpass(t)


# ---- partition -------------------------------------------------------------


@dataclass
class DyadicPartition:
    """Shell tables for one grid: phi(2^-k |xi_j|) rows for k_min..k_max.

    The k range is the smallest window covering every nonzero grid
    frequency; sum_k phi_table[k] equals 1 on those modes (checked at
    build time to 1e-12).  The DC column is zero in every row.
    """

    grid: GridSpec
    k_min: int
    k_max: int
    phi_table: np.ndarray   # (n_shells, nx)
    chi_table: np.ndarray   # (n_shells, nx), chi(2^-k |xi|) per k

    @property
    def ks(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1)

    @property
    def n_shells(self) -> int:
        return self.k_max - self.k_min + 1

    def shell_row(self, k: int) -> np.ndarray:
        if not self.k_min <= k <= self.k_max:
            raise ValueError(f"shell {k} outside [{self.k_min}, {self.k_max}]")
        return self.phi_table[k - self.k_min]


def build_partition(grid: GridSpec) -> DyadicPartition:
    xi = np.abs(grid.xi)
    nz = xi[xi > 0.0]
    xi_lo, xi_hi = float(nz.min()), float(nz.max())
    # lowest shell: the one whose bump still touches xi_lo from below
    k_min = math.floor(math.log2(xi_lo * 3.0 / 4.0))
    k_max = math.ceil(math.log2(xi_hi * 4.0 / 3.0)) - 1
    ks = np.arange(k_min, k_max + 1)
    scaled = xi[None, :] / (2.0 ** ks[:, None])
    phi_t = phi_shell(scaled)
    chi_t = chi_lowpass(scaled)
    phi_t[:, xi == 0.0] = 0.0
    part = DyadicPartition(grid, k_min, k_max, phi_t, chi_t)
    tot = part.phi_table.sum(axis=0)
    err = np.max(np.abs(tot[xi > 0.0] - 1.0))
    if err > 1e-12:
        raise AssertionError(f"shell partition off by {err:.2e} on grid modes")
    return part


def lp_project(part: DyadicPartition, field: Field, k: int) -> Field:
    """Shell piece Delta_k f (zero outside the partition's k range)."""
    if k < part.k_min or k > part.k_max:
        return Field(field.grid, np.zeros_like(field.coeffs), field.bc)
    return Field(field.grid, field.coeffs * part.shell_row(k), field.bc)


def lowpass(part: DyadicPartition, field: Field, k: int) -> Field:
    """Low-frequency piece S_k f = chi(2^-k |xi|) f (DC included)."""
    row = chi_lowpass(np.abs(field.grid.xi) / 2.0 ** k)
    return Field(field.grid, field.coeffs * row, field.bc)


# ---- analytic-band multiplier ----------------------------------------------


def gevrey_multiplier(field: Field, r: float) -> Field:
    """Multiply mode xi by exp(r |xi|) (analytic-band weight, radius r >= 0)."""
    if r < 0.0:
        raise ValueError(f"band radius must be nonnegative, got {r}")
    w = np.exp(r * np.abs(field.grid.xi))
    return Field(field.grid, field.coeffs * w, field.bc)


# ---- Besov norms -----------------------------------------------------------


def shell_weighted_norms(part: DyadicPartition, field: Field, a: float,
                         t: float, r: float = 0.0) -> np.ndarray:
    """|| e^{a Psi} Delta_k (e^{r|Dx|} f) ||_{L2} for each shell k.

    Vectorized over shells; same quadrature and summation order as
    grid.weighted_l2.  Returns an (n_shells,) array.
    """
    g = field.grid
    order = g.mode_order
    band = np.exp(r * np.abs(g.xi)) if r != 0.0 else None
    c = field.coeffs if band is None else field.coeffs * band
    c2 = np.abs(c[:, order]) ** 2                     # (ny, nx)
    p2 = (part.phi_table ** 2)[:, order]              # (K, nx)
    m = np.einsum("yj,kj->yk", c2, p2)                # per-shell row power
    sm = np.sqrt(m)
    wpsi = psi_weight(g, a, t)[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        amp = np.where(sm == 0.0, 0.0, wpsi * sm)
    if not np.all(np.isfinite(amp)):
        raise TailViolationError("weighted shell amplitude overflowed")
    tot = np.einsum("y,yk->k", g.trapz_weights, amp * amp)
    return np.sqrt(g.lx * tot)


def besov_norm(part: DyadicPartition, field: Field, s: float, a: float = 0.0,
               t: float = 0.0, r: float = 0.0) -> float:
    """Anisotropic Besov norm sum_k 2^{ks} ||e^{a Psi} Delta_k f||_{L2}.

    Only s <= 1/2 is meaningful for this scale on our fields; larger s is
    rejected rather than silently returned.
    """
    if s > 0.5:
        raise ValueError("horizontal regularity above 1/2 is not supported "
                         "for strip fields; use besov_h_norm for profiles")
    norms = shell_weighted_norms(part, field, a, t, r)
    return float(np.add.reduce((2.0 ** (s * part.ks)) * norms))


def besov_pair_norm(part: DyadicPartition, fa: Field, fb: Field, s: float,
                    a: float = 0.0, t: float = 0.0, r: float = 0.0) -> float:
    """Besov norm of a two-component field, root-sum-square per shell."""
    if s > 0.5:
        raise ValueError("horizontal regularity above 1/2 is not supported")
    na = shell_weighted_norms(part, fa, a, t, r)
    nb = shell_weighted_norms(part, fb, a, t, r)
    per = np.sqrt(na * na + nb * nb)
    return float(np.add.reduce((2.0 ** (s * part.ks)) * per))


def besov_h_shell_norms(part: DyadicPartition, spectrum: np.ndarray,
                        r: float = 0.0) -> np.ndarray:
    """Per-shell L2(x) norms of a 1-D horizontal profile (mode amplitudes)."""
    g = part.grid
    c = np.asarray(spectrum, dtype=complex)
    if c.shape != (g.nx,):
        raise ValueError(f"expected ({g.nx},) spectrum, got {c.shape}")
    if r != 0.0:
        c = c * np.exp(r * np.abs(g.xi))
    c2 = np.abs(c[g.mode_order]) ** 2
    p2 = (part.phi_table ** 2)[:, g.mode_order]
    return np.sqrt(g.lx * (p2 @ c2))


def besov_h_norm(part: DyadicPartition, spectrum: np.ndarray, s: float,
                 r: float = 0.0) -> float:
    """1-D horizontal Besov norm sum_k 2^{ks} ||Delta_k f||_{L2(x)}.

    Profiles are genuinely one dimensional, so any s is allowed here.
    """
    norms = besov_h_shell_norms(part, spectrum, r)
    return float(np.add.reduce((2.0 ** (s * part.ks)) * norms))


# ---- paraproduct -----------------------------------------------------------


def paraproduct(part: DyadicPartition, f: Field, g: Field):
    """Bony decomposition of the pointwise product on the grid.

    Returns (T_f g, T_g f, R) as Fields.  The three pieces sum exactly to
    the grid product f*g minus the product of the x means, because the
    regrouping is purely multiplicative in physical space.
    """
    if f.grid is not g.grid and f.grid != g.grid:
        raise ValueError("paraproduct operands must share a grid")
    gr = f.grid
    ks = part.ks
    # physical shell pieces and running low-pass sums
    fp = f.physical()
    gp = g.physical()
    f_shell = [lp_project(part, f, k).physical() for k in ks]
    g_shell = [lp_project(part, g, k).physical() for k in ks]
    f_low = [lowpass(part, f, k - 1).physical() for k in ks]
    g_low = [lowpass(part, g, k - 1).physical() for k in ks]

    t_fg = np.zeros_like(fp)
    t_gf = np.zeros_like(fp)
    for i in range(len(ks)):
        t_fg += f_low[i] * g_shell[i]
        t_gf += g_low[i] * f_shell[i]
    rem = np.zeros_like(fp)
    n = len(ks)
    for i in range(n):
        near = np.zeros_like(fp)
        for j in (i - 1, i, i + 1):
            if 0 <= j < n:
                near += g_shell[j]
        rem += f_shell[i] * near
    to_f = lambda arr, bc: Field(gr, x_transform(gr, arr, "forward"), bc)
    return to_f(t_fg, f.bc), to_f(t_gf, f.bc), to_f(rem, f.bc)


# ---- time-integrated (Chemin-Lerner style) accumulation ---------------------


@dataclass
class CLAccumulator:
    """Left-endpoint running integrals of weighted shell norms.

    Accumulates I_k += w(t) * ||Delta_k a(t)||^p * dt per shell and
    reports sum_k 2^{ks} I_k^{1/p}; p = inf tracks the sup instead.
    """

    part: DyadicPartition
    s: float
    p: float
    integrals: np.ndarray = dc_field(default=None)

    def __post_init__(self):
        if self.integrals is None:
            self.integrals = np.zeros(self.part.n_shells)
        else:
            self.integrals = np.asarray(self.integrals, dtype=float)
        if not (self.p in (1.0, 2.0) or math.isinf(self.p)):
            raise ValueError("p must be 1, 2, or inf")

    def add(self, shell_norms: np.ndarray, weight: float, dt: float) -> None:
        sn = np.asarray(shell_norms, dtype=float)
        if sn.shape != self.integrals.shape:
            raise ValueError("shell norm vector has wrong length")
        if math.isinf(self.p):
            np.maximum(self.integrals, weight * sn, out=self.integrals)
        else:
            self.integrals += weight * sn ** self.p * dt

    def value(self) -> float:
        ks = self.part.ks
        if math.isinf(self.p):
            per = self.integrals
        else:
            per = self.integrals ** (1.0 / self.p)
        return float(np.add.reduce((2.0 ** (self.s * ks)) * per))


def cl_accumulate(acc: CLAccumulator, part: DyadicPartition, field: Field,
                  t: float, dt: float, a: float = 0.0, r: float = 0.0,
                  weight: float = 1.0) -> None:
    """Convenience wrapper: push one sample of a single field."""
    acc.add(shell_weighted_norms(part, field, a, t, r), weight, dt)
