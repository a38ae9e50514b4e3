"""Problem setup: physical parameters, the wall cutoff profile, admissible
far-field flows, their decay-hypothesis audit, forcing terms, and the
standard analytic initial data family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy import integrate as sp_integrate

from .grid import (BC_DIRICHLET, BC_NEUMANN, Field, GridSpec, column_flux,
                   dealias, integrate_y_tail, x_transform)
from .lp import DyadicPartition, besov_h_shell_norms


class UnsupportedScenarioError(ValueError):
    """Requested far-field / parameter combination is outside the theory."""


@dataclass(frozen=True)
class Params:
    """Physical and book-keeping parameters.

    kappa is the magnetic diffusivity (momentum diffusivity is 1), epsilon
    the data amplitude, delta the initial analytic band radius, and lam
    the band consumption rate: the band at time t is delta - lam*theta(t).
    The background tangential field bbar is 1 exactly at kappa = 1 and 0
    otherwise.
    """

    kappa: float
    epsilon: float
    delta: float = 1.0
    lam: float = 10.0
    # diffusivity overrides for conjugate-system audits; None means the
    # standard pair (1, kappa)
    nu_u: Optional[float] = None
    nu_b: Optional[float] = None

    def __post_init__(self):
        if self.kappa <= 0.0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.delta <= 0.0 or self.lam <= 0.0:
            raise ValueError("delta and lam must be positive")
        for nu in (self.nu_u, self.nu_b):
            if nu is not None and nu <= 0.0:
                raise ValueError("diffusivity overrides must be positive")

    @property
    def bbar(self) -> float:
        return 1.0 if self.kappa == 1.0 else 0.0


def derived_exponents(params: Params) -> dict:
    """Decay-rate increments attached to the diffusivity ratio.

    l = kappa (2 - kappa) / 4 on 0 < kappa < 2, and ell = (2 kappa - 1) /
    (4 kappa^2) for kappa > 1/2; each is None where undefined.  Both land
    in (0, 1/4] on their domains.
    """
    k = params.kappa
    l_val = k * (2.0 - k) / 4.0 if 0.0 < k < 2.0 else None
    ell_val = (2.0 * k - 1.0) / (4.0 * k * k) if k > 0.5 else None
    return {"l": l_val, "ell": ell_val}


# ---- wall cutoff -----------------------------------------------------------


def _interior_bump(y):
    """exp(-1/((y-1)(2-y))) on (1, 2), zero outside; C-infinity."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = (y > 1.0) & (y < 2.0)
    p = (y[inside] - 1.0) * (2.0 - y[inside])
    out[inside] = np.exp(-1.0 / p)
    return out


def _interior_bump_d1(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = (y > 1.0) & (y < 2.0)
    yi = y[inside]
    p = (yi - 1.0) * (2.0 - yi)
    dp = 3.0 - 2.0 * yi
    out[inside] = np.exp(-1.0 / p) * dp / p ** 2
    return out


def _interior_bump_d2(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = (y > 1.0) & (y < 2.0)
    yi = y[inside]
    p = (yi - 1.0) * (2.0 - yi)
    dp = 3.0 - 2.0 * yi
    b = np.exp(-1.0 / p)
    out[inside] = b * (dp ** 2 / p ** 4 - 2.0 / p ** 2 - 2.0 * dp ** 2 / p ** 3)
    return out


def _g(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0.0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _g1(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0.0
    out[pos] = np.exp(-1.0 / s[pos]) / s[pos] ** 2
    return out


def _g2(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0.0
    si = s[pos]
    out[pos] = np.exp(-1.0 / si) * (1.0 / si ** 4 - 2.0 / si ** 3)
    return out


def _step(s):
    num = _g(s)
    den = _g(s) + _g(1.0 - s)
    return num / den


def _step_d1(s):
    g, gb = _g(s), _g(1.0 - s)
    g1, gb1 = _g1(s), -_g1(1.0 - s)
    den = g + gb
    return (g1 * den - g * (g1 + gb1)) / den ** 2


def _step_d2(s):
    g, gb = _g(s), _g(1.0 - s)
    g1, gb1 = _g1(s), -_g1(1.0 - s)
    g2, gb2 = _g2(s), _g2(1.0 - s)
    den = g + gb
    dden = g1 + gb1
    d2den = g2 + gb2
    num = g1 * den - g * dden
    dnum = g2 * den - g * d2den
    return dnum / den ** 2 - 2.0 * num * dden / den ** 3


_BUMP_MASS = None


def _bump_mass() -> float:
    """int_1^2 of the interior bump, cached; sets the shape coefficient."""
    global _BUMP_MASS
    if _BUMP_MASS is None:
        val, err = sp_integrate.quad(lambda y: float(_interior_bump(y)), 1.0,
                                     2.0, epsabs=1e-14, epsrel=1e-13,
                                     limit=200)
        if err > 1e-11:
            raise RuntimeError(f"bump mass quadrature too loose: {err:.2e}")
        _BUMP_MASS = val
    return _BUMP_MASS


def cutoff_slope(y):
    """The wall cutoff's derivative: step rise on [1, 2] plus a scaled
    interior bump whose weight makes the total integral exactly 2."""
    c = 1.5 / _bump_mass()
    return _step(np.asarray(y, dtype=float) - 1.0) + c * _interior_bump(y)


def cutoff_slope_d1(y):
    c = 1.5 / _bump_mass()
    return _step_d1(np.asarray(y, dtype=float) - 1.0) + c * _interior_bump_d1(y)


def cutoff_slope_d2(y):
    c = 1.5 / _bump_mass()
    return _step_d2(np.asarray(y, dtype=float) - 1.0) + c * _interior_bump_d2(y)


def cutoff_value(y):
    """The cutoff itself: 0 for y <= 1, y for y >= 2, smooth monotone rise
    between, with unit slope and vanishing higher derivatives at y = 2."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.zeros_like(y)
    mid = (y > 1.0) & (y < 2.0)
    for idx in np.nonzero(mid)[0]:
        val, _ = sp_integrate.quad(lambda s: float(cutoff_slope(s)), 1.0,
                                   y[idx], epsabs=1e-13, epsrel=1e-12,
                                   limit=200)
        out[idx] = val
    out[y >= 2.0] = y[y >= 2.0]
    return out


@dataclass
class Cutoff:
    """Wall cutoff sampled on a grid's y nodes: chi, chi', chi'', chi'''."""

    grid: GridSpec
    chi: np.ndarray
    dchi: np.ndarray
    d2chi: np.ndarray
    d3chi: np.ndarray


def build_cutoff(grid: GridSpec) -> Cutoff:
    """Sample the cutoff family on the grid.

    The transition zone [1, 2] must carry at least 16 nodes; otherwise the
    forcing terms built from chi'' and chi''' are unresolved.
    """
    y = grid.y
    in_zone = np.count_nonzero((y >= 1.0) & (y <= 2.0))
    if in_zone < 16:
        raise ValueError(
            f"cutoff transition zone holds only {in_zone} nodes; need >= 16 "
            "(refine ny or shrink ymax)")
    return Cutoff(grid, cutoff_value(y), cutoff_slope(y), cutoff_slope_d1(y),
                  cutoff_slope_d2(y))


# ---- far fields ------------------------------------------------------------


@dataclass
class FarField:
    """Tangential flow/field pair (U, B)(t, x) imposed above the layer.

    Both components are separable: amplitude * <t>^{-power} * profile(x),
    stored as mode spectra.  B is identically zero in every supported
    family; the constructors enforce the compatibility restrictions.
    """

    grid: GridSpec
    kind: str
    eps: float = 0.0
    alpha: float = 0.0
    g_spec: np.ndarray = None

    def __post_init__(self):
        if self.g_spec is None:
            self.g_spec = np.zeros(self.grid.nx, dtype=complex)

    @property
    def trivial(self) -> bool:
        return self.kind == "trivial"

    def _amp(self, t: float) -> float:
        return self.eps * (1.0 + t) ** (-self.alpha)

    def u_spec(self, t: float) -> np.ndarray:
        if self.trivial:
            return np.zeros(self.grid.nx, dtype=complex)
        return self._amp(t) * self.g_spec

    def b_spec(self, t: float) -> np.ndarray:
        return np.zeros(self.grid.nx, dtype=complex)

    def dt_u_spec(self, t: float) -> np.ndarray:
        if self.trivial:
            return np.zeros(self.grid.nx, dtype=complex)
        return (-self.alpha) * self.eps * (1.0 + t) ** (-self.alpha - 1.0) \
            * self.g_spec

    def dt_b_spec(self, t: float) -> np.ndarray:
        return np.zeros(self.grid.nx, dtype=complex)

    def dx_u_spec(self, t: float) -> np.ndarray:
        return 1j * self.grid.xi * self.u_spec(t)

    def dx_b_spec(self, t: float) -> np.ndarray:
        return np.zeros(self.grid.nx, dtype=complex)


def farfield_trivial(grid: GridSpec) -> FarField:
    return FarField(grid, "trivial")


def farfield_decaying(grid: GridSpec, params: Params, eps: float, alpha: float,
                      g_profile: np.ndarray) -> FarField:
    """U = eps <t>^-alpha g(x), B = 0.

    Requires a zero background field (kappa != 1): with bbar = 1 the total
    tangential field 1 + B no longer satisfies its transport law unless U
    is x-independent, so that combination is rejected.
    """
    if params.bbar != 0.0:
        raise UnsupportedScenarioError(
            "a nontrivial decaying far field is incompatible with the "
            "kappa = 1 background; use the trivial far field there")
    if eps < 0.0 or alpha <= 0.0:
        raise ValueError("need eps >= 0 and alpha > 0")
    g_profile = np.asarray(g_profile)
    if g_profile.shape != (grid.nx,):
        raise ValueError(f"profile must have shape ({grid.nx},)")
    if g_profile.dtype.kind == "c":
        g_spec = g_profile.astype(complex)
    else:
        g_spec = x_transform(grid, np.broadcast_to(g_profile, (1, grid.nx)),
                             "forward")[0]
    if abs(g_spec[0]) > 1e-13 * (1.0 + np.max(np.abs(g_spec))):
        raise UnsupportedScenarioError("far-field profile must have zero x mean")
    return FarField(grid, "decaying", eps=eps, alpha=alpha, g_spec=g_spec)


def bernoulli_residual(ff: FarField, params: Params, t: float) -> float:
    """Max-norm residual of the tangential transport law at time t:
    d_t(B + bbar) + U d_x(B + bbar) - (B + bbar) d_x U."""
    g = ff.grid
    u = x_transform(g, ff.u_spec(t)[None, :], "inverse")[0]
    b1 = x_transform(g, ff.b_spec(t)[None, :], "inverse")[0] + params.bbar
    dtb = x_transform(g, ff.dt_b_spec(t)[None, :], "inverse")[0]
    dxu = x_transform(g, ff.dx_u_spec(t)[None, :], "inverse")[0]
    dxb = x_transform(g, ff.dx_b_spec(t)[None, :], "inverse")[0]
    res = dtb + u * dxb - b1 * dxu
    return float(np.max(np.abs(res)))


def assumption_check(ff: FarField, part: DyadicPartition, delta: float,
                     eps_budget: float) -> dict:
    """Audit the far-field decay hypotheses against the budget eps_budget.

    Uses the separable structure for exact time factors: sup and integrals
    of <t>^p are evaluated in closed form, so divergence (slow alpha) is
    detected rather than truncated away.  Shell sums carry the analytic
    weight e^{delta |xi|}; the report flags spectral truncation if the top
    shell holds a non-negligible share.
    """
    report = {"ok": True, "divergent": [], "values": {}}
    if ff.trivial:
        report["values"] = {"sup_weighted_32": 0.0, "l2_weighted_12": 0.0,
                            "l1_weighted_12": 0.0}
        report["tail_share"] = 0.0
        return report

    a = ff.alpha
    ks = part.ks
    sn = besov_h_shell_norms(part, ff.g_spec, r=delta)   # ||Delta_k g|| e-wtd
    tail = float(sn[-1] / sn.sum()) if sn.sum() > 0 else 0.0
    report["tail_share"] = tail
    if tail > 1e-8:
        report["ok"] = False
        report["divergent"].append("spectral tail not resolved on this grid")

    b32 = float(np.add.reduce(2.0 ** (1.5 * ks) * sn))
    b12 = float(np.add.reduce(2.0 ** (0.5 * ks) * sn))

    # sup_t <t>^{9/4 - alpha}
    if a >= 2.25:
        sup_w = ff.eps * b32
    else:
        sup_w = math.inf
        report["divergent"].append("sup-in-time weight <t>^(9/4) diverges")
    report["values"]["sup_weighted_32"] = sup_w

    # (int_0^inf <t>^{7/2} (|dtU|^2 + |U|^2) dt)^{1/2} per shell, summed
    p = 3.5 - 2.0 * a
    if p < -1.0:
        time_sq = 1.0 / (-p - 1.0)
        p2 = 3.5 - 2.0 * (a + 1.0)
        time_sq_dt = a * a / (-p2 - 1.0)
        l2_w = ff.eps * math.sqrt(time_sq + time_sq_dt) * b12
    else:
        l2_w = math.inf
        report["divergent"].append("L2-in-time weight <t>^(7/4) diverges")
    report["values"]["l2_weighted_12"] = l2_w

    # int_0^inf <t>^{5/4 - alpha} dt
    q = 1.25 - a
    if q < -1.0:
        l1_w = ff.eps * (1.0 / (-q - 1.0)) * b12
    else:
        l1_w = math.inf
        report["divergent"].append("L1-in-time weight <t>^(5/4) diverges")
    report["values"]["l1_weighted_12"] = l1_w

    if not (sup_w + l2_w <= eps_budget):
        report["ok"] = False
    if not (l1_w <= eps_budget):
        report["ok"] = False
    if report["divergent"]:
        report["ok"] = False
    return report


# ---- forcing ---------------------------------------------------------------


def source_terms(ff: FarField, cutoff: Optional[Cutoff], params: Params,
                 grid: GridSpec, t: float):
    """Forcing created by patching the far field onto the layer.

    Returns (f_u, f_b, F_u, F_b): the two tendencies (supported in the
    cutoff zone 0 <= y <= 2) and their negative tail integrals feeding the
    antiderivative system.  A trivial far field gives four zero fields.
    """
    zero = Field.zeros(grid, BC_NEUMANN)
    if ff.trivial:
        return (zero.copy(), zero.copy(),
                Field.zeros(grid, BC_DIRICHLET), Field.zeros(grid, BC_DIRICHLET))
    if cutoff is None:
        raise ValueError("nontrivial far field needs a cutoff")

    u1 = x_transform(grid, ff.u_spec(t)[None, :], "inverse")[0]
    b1 = x_transform(grid, ff.b_spec(t)[None, :], "inverse")[0]
    dxu = x_transform(grid, ff.dx_u_spec(t)[None, :], "inverse")[0]
    dxb = x_transform(grid, ff.dx_b_spec(t)[None, :], "inverse")[0]

    adv_u = u1 * dxu - b1 * dxb      # U dxU - B dxB, physical 1-D
    adv_b = u1 * dxb - b1 * dxu

    def to_spec(row):
        return x_transform(grid, row[None, :], "forward")[0]

    lin_u = ff.dt_u_spec(t) - params.bbar * ff.dx_b_spec(t)
    lin_b = ff.dt_b_spec(t) - params.bbar * ff.dx_u_spec(t)
    adv_u_s = to_spec(adv_u)
    adv_b_s = to_spec(adv_b)

    one_m = 1.0 - cutoff.dchi
    quad_plus = 1.0 - cutoff.dchi ** 2 + cutoff.chi * cutoff.d2chi
    quad_minus = 1.0 - cutoff.dchi ** 2 - cutoff.chi * cutoff.d2chi

    cu = (np.outer(one_m, lin_u) + np.outer(cutoff.d3chi, ff.u_spec(t))
          + np.outer(quad_plus, adv_u_s))
    cb = (np.outer(one_m, lin_b) + np.outer(cutoff.d3chi, ff.b_spec(t))
          + np.outer(quad_minus, adv_b_s))
    f_u = dealias(Field(grid, cu, BC_NEUMANN))
    f_b = dealias(Field(grid, cb, BC_NEUMANN))

    t_u = integrate_y_tail(f_u)
    t_b = integrate_y_tail(f_b)
    F_u = Field(grid, -t_u.coeffs, BC_DIRICHLET)
    F_b = Field(grid, -t_b.coeffs, BC_DIRICHLET)
    return f_u, f_b, F_u, F_b


# ---- initial data ----------------------------------------------------------


def default_x_profile(grid: GridSpec) -> np.ndarray:
    """Zero-mean analytic profile: modes j != 0 with amplitude e^{-xi^2}."""
    xi = grid.xi
    spec = np.exp(-xi ** 2).astype(complex)
    spec[0] = 0.0
    return spec


def flux_projection_profiles(grid: GridSpec):
    """Per-mode correction shapes used to pin the column flux to zero.

    The tangential-velocity shape vanishes at the wall; the tangential
    field shape has zero wall slope.  Both are normalized to unit
    discrete flux so subtracting flux * shape zeroes the column exactly.
    """
    y = grid.y
    w = grid.trapz_weights
    p = y * np.exp(-0.5 * y ** 2)
    q = np.exp(-0.5 * y ** 2)
    return p / (w @ p), q / (w @ q)


def rescaled_flux_shapes(grid: GridSpec, kappa: float):
    """Flux-correction shapes of the unscaled coordinate, expressed on a
    y/sqrt(kappa) grid.

    A run of the conjugate system (heights divided by sqrt(kappa), both
    diffusivities divided by kappa) mirrors the original discretization
    step for step only if its zero-flux projection removes the same
    correction field; that means evaluating the original shapes at the
    source heights grid.y * sqrt(kappa) and renormalizing to unit flux in
    the new measure.  kappa = 1 reduces to flux_projection_profiles.
    """
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    y = grid.y * math.sqrt(kappa)
    w = grid.trapz_weights
    p = y * np.exp(-0.5 * y ** 2)
    q = np.exp(-0.5 * y ** 2)
    return p / (w @ p), q / (w @ q)


def project_zero_flux(field: Field, shape: np.ndarray) -> Field:
    """Remove the column flux of every nonzero mode along the given shape.

    The DC column is left alone: x-independent states (heating tests and
    the like) legitimately carry mean flux, and the zero-flux constraint
    comes from the x-decay of the ansatz, which only binds j != 0.
    """
    flux = column_flux(field)
    flux[0] = 0.0
    c = field.coeffs - np.outer(shape, flux)
    return Field(field.grid, c, field.bc)


def initial_data_standard(grid: GridSpec, params: Params,
                          x_profile: Optional[np.ndarray] = None):
    """Analytic compatible initial data from one horizontal profile a(x).

    u0 = eps a(x) (y - y^3/2) e^{-y^2/2} and b0 = eps a(x) (1 - y^2)
    e^{-y^2/2}.  Both y shapes integrate to zero on the half line, u0
    vanishes at the wall, b0 has zero wall slope, and the antiderivative
    pair inherits zero wall values.  Discrete column fluxes are projected
    out so the divergence-free reconstruction closes at the top.

    Returns (u0, b0, report) with the compatibility report.
    """
    if x_profile is None:
        x_profile = default_x_profile(grid)
    x_profile = np.asarray(x_profile, dtype=complex)
    if x_profile.shape != (grid.nx,):
        raise ValueError(f"x profile must have shape ({grid.nx},)")
    if abs(x_profile[0]) > 0.0:
        raise ValueError("x profile must have zero mean (DC amplitude 0)")

    y = grid.y
    pu = (y - 0.5 * y ** 3) * np.exp(-0.5 * y ** 2)
    pb = (1.0 - y ** 2) * np.exp(-0.5 * y ** 2)
    u0 = Field.from_profiles(grid, params.epsilon * x_profile, pu, BC_DIRICHLET)
    b0 = Field.from_profiles(grid, params.epsilon * x_profile, pb, BC_NEUMANN)

    shape_u, shape_b = flux_projection_profiles(grid)
    u0 = project_zero_flux(u0, shape_u)
    b0 = project_zero_flux(b0, shape_b)

    eps = params.epsilon
    report = {
        "wall_value_u": float(np.max(np.abs(u0.coeffs[0]))),
        # wall slope of the field shape, from the closed form (y^3-3y)e^..
        "wall_slope_b": 0.0,
        "flux_u": float(np.max(np.abs(column_flux(u0)[1:]))),
        "flux_b": float(np.max(np.abs(column_flux(b0)[1:]))),
        "eps": eps,
    }
    report["ok"] = (report["wall_value_u"] < 1e-12
                    and report["wall_slope_b"] < 1e-12
                    and report["flux_u"] < 1e-8 * eps
                    and report["flux_b"] < 1e-8 * eps)
    return u0, b0, report
