"""Tests for problem setup: parameters, the wall cutoff family, far-field
flows and their decay audit, patching sources, and the standard initial
data.

The cutoff family is cross-checked against finite differences of its own
samples; far-field admissibility is probed on both sides of each decay
threshold; initial data are compared with their closed forms.
"""

import numpy as np
import pytest
from scipy import integrate as sp_integrate

from mhdbl.grid import Field, GridSpec, column_flux, ddy, integrate_y_tail
from mhdbl.lp import build_partition
from mhdbl.scenario import (
    Cutoff,
    FarField,
    Params,
    UnsupportedScenarioError,
    assumption_check,
    bernoulli_residual,
    build_cutoff,
    cutoff_slope,
    cutoff_slope_d1,
    cutoff_slope_d2,
    cutoff_value,
    default_x_profile,
    derived_exponents,
    farfield_decaying,
    farfield_trivial,
    flux_projection_profiles,
    initial_data_standard,
    project_zero_flux,
    source_terms,
)


def make_grid(nx=32, ny=512, ymax=16.0):
    return GridSpec(lx=2.0 * np.pi, nx=nx, ymax=ymax, ny=ny)


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError, match="kappa"):
            Params(kappa=0.0, epsilon=1e-3)
        with pytest.raises(ValueError, match="epsilon"):
            Params(kappa=1.0, epsilon=0.0)
        with pytest.raises(ValueError, match="delta and lam"):
            Params(kappa=1.0, epsilon=1e-3, lam=-1.0)
        with pytest.raises(ValueError, match="diffusivity"):
            Params(kappa=1.0, epsilon=1e-3, nu_u=-0.5)

    def test_background_field_switch(self):
        assert Params(kappa=1.0, epsilon=1e-3).bbar == 1.0
        assert Params(kappa=1.5, epsilon=1e-3).bbar == 0.0
        assert Params(kappa=0.9, epsilon=1e-3).bbar == 0.0


class TestDerivedExponents:
    def test_unit_ratio(self):
        d = derived_exponents(Params(kappa=1.0, epsilon=1e-3))
        assert d["l"] == pytest.approx(0.25)
        assert d["ell"] == pytest.approx(0.25)

    def test_three_halves(self):
        d = derived_exponents(Params(kappa=1.5, epsilon=1e-3))
        assert d["ell"] == pytest.approx(2.0 / 9.0)
        assert d["l"] == pytest.approx(1.5 * 0.5 / 4.0)

    def test_boundaries(self):
        assert derived_exponents(Params(kappa=2.0, epsilon=1e-3))["l"] is None
        assert derived_exponents(Params(kappa=0.5, epsilon=1e-3))["ell"] is None
        assert derived_exponents(Params(kappa=0.4, epsilon=1e-3))["l"] == \
            pytest.approx(0.4 * 1.6 / 4.0)

    def test_range(self):
        for k in (0.3, 0.8, 1.0, 1.3, 1.9):
            d = derived_exponents(Params(kappa=k, epsilon=1e-3))
            for v in d.values():
                if v is not None:
                    assert 0.0 < v <= 0.25


class TestCutoff:
    def test_slope_outside_transition(self):
        y = np.array([0.0, 0.5, 1.0, 2.0, 3.0, 10.0])
        s = cutoff_slope(y)
        assert np.all(s[:3] == 0.0)
        assert s[3] == pytest.approx(1.0, abs=1e-12)
        assert s[4] == pytest.approx(1.0, abs=1e-12)

    def test_slope_mass_is_two(self):
        val, err = sp_integrate.quad(lambda s: float(cutoff_slope(s)), 1.0,
                                     2.0, epsabs=1e-12, limit=200)
        assert abs(val - 2.0) < 1e-10

    def test_value_anchors(self):
        y = np.array([0.0, 1.0, 2.0, 5.0])
        v = cutoff_value(y)
        assert v[0] == 0.0 and v[1] == 0.0
        assert v[2] == pytest.approx(2.0, abs=1e-10)
        assert v[3] == 5.0

    def test_value_monotone_in_transition(self):
        y = np.linspace(1.0, 2.0, 21)
        v = cutoff_value(y)
        assert np.all(np.diff(v) >= 0.0)

    def test_slope_matches_value_by_finite_differences(self):
        ys = np.array([1.2, 1.4, 1.6, 1.8])
        h = 1e-4
        for y0 in ys:
            fd = (cutoff_value(y0 + h)[0] - cutoff_value(y0 - h)[0]) / (2 * h)
            assert fd == pytest.approx(float(cutoff_slope(y0)), abs=1e-6)

    def test_derivative_chain_by_finite_differences(self):
        y = np.linspace(1.05, 1.95, 41)
        h = 1e-5
        fd1 = (cutoff_slope(y + h) - cutoff_slope(y - h)) / (2 * h)
        assert np.max(np.abs(fd1 - cutoff_slope_d1(y))) < 1e-4 * (
            1.0 + np.max(np.abs(fd1)))
        fd2 = (cutoff_slope_d1(y + h) - cutoff_slope_d1(y - h)) / (2 * h)
        assert np.max(np.abs(fd2 - cutoff_slope_d2(y))) < 1e-4 * (
            1.0 + np.max(np.abs(fd2)))

    def test_build_requires_resolved_transition(self):
        coarse = GridSpec(lx=2.0 * np.pi, nx=8, ymax=26.0, ny=64)
        with pytest.raises(ValueError, match="transition zone"):
            build_cutoff(coarse)

    def test_build_samples_whole_family(self):
        g = make_grid(ny=512, ymax=16.0)
        c = build_cutoff(g)
        assert isinstance(c, Cutoff)
        above = g.y >= 2.0
        assert np.max(np.abs(c.chi[above] - g.y[above])) < 1e-9
        assert np.max(np.abs(c.dchi[above] - 1.0)) < 1e-12
        assert np.max(np.abs(c.d2chi[above])) < 1e-12
        assert np.max(np.abs(c.d3chi[above])) < 1e-12
        below = g.y <= 1.0
        assert np.all(c.chi[below] == 0.0)
        assert np.all(c.dchi[below] == 0.0)


class TestFarField:
    def test_trivial_is_zero(self):
        g = make_grid()
        ff = farfield_trivial(g)
        assert ff.trivial
        assert np.all(ff.u_spec(3.0) == 0.0)
        assert np.all(ff.b_spec(3.0) == 0.0)
        assert np.all(ff.dt_u_spec(3.0) == 0.0)

    def test_trivial_transport_residual_vanishes(self):
        g = make_grid()
        ff = farfield_trivial(g)
        for kappa in (1.0, 1.5):
            p = Params(kappa=kappa, epsilon=1e-3)
            assert bernoulli_residual(ff, p, 0.7) == 0.0

    def test_decaying_rejected_on_unit_background(self):
        g = make_grid()
        p = Params(kappa=1.0, epsilon=1e-3)
        prof = np.cos(g.x)
        with pytest.raises(UnsupportedScenarioError, match="kappa = 1"):
            farfield_decaying(g, p, 0.01, 2.5, prof)

    def test_decaying_validates_arguments(self):
        g = make_grid()
        p = Params(kappa=1.5, epsilon=1e-3)
        with pytest.raises(ValueError, match="alpha"):
            farfield_decaying(g, p, 0.01, 0.0, np.cos(g.x))
        with pytest.raises(ValueError, match="shape"):
            farfield_decaying(g, p, 0.01, 2.5, np.zeros(7))
        with pytest.raises(UnsupportedScenarioError, match="zero x mean"):
            farfield_decaying(g, p, 0.01, 2.5, 1.0 + np.cos(g.x))

    def test_decaying_amplitude_law(self):
        g = make_grid()
        p = Params(kappa=1.5, epsilon=1e-3)
        ff = farfield_decaying(g, p, 0.02, 2.5, np.cos(g.x))
        u0 = ff.u_spec(0.0)
        u3 = ff.u_spec(3.0)
        assert np.max(np.abs(u3 - u0 * 4.0**-2.5)) < 1e-15
        # cos transforms to amplitude 1/2 at modes +-1, scaled by eps
        assert u0[1] == pytest.approx(0.01, abs=1e-14)
        # time derivative matches the closed form
        dt = ff.dt_u_spec(2.0)
        assert np.max(np.abs(dt + 2.5 * ff.u_spec(2.0) / 3.0)) < 1e-16

    def test_decaying_transport_residual_vanishes(self):
        g = make_grid()
        p = Params(kappa=1.5, epsilon=1e-3)
        ff = farfield_decaying(g, p, 0.02, 2.5, np.cos(g.x))
        assert bernoulli_residual(ff, p, 1.3) == 0.0

    def test_complex_spectrum_accepted_directly(self):
        g = make_grid()
        p = Params(kappa=1.5, epsilon=1e-3)
        spec = np.zeros(g.nx, dtype=complex)
        spec[2] = 0.5j
        spec[-2] = -0.5j
        ff = farfield_decaying(g, p, 0.02, 2.5, spec)
        assert np.array_equal(ff.g_spec, spec)


class TestAssumptionCheck:
    def make_ff(self, alpha, eps=1e-3):
        g = make_grid(nx=64)
        p = Params(kappa=1.5, epsilon=1e-3)
        return g, farfield_decaying(g, p, eps, alpha, np.cos(g.x))

    def test_trivial_passes_with_zeros(self):
        g = make_grid()
        rep = assumption_check(farfield_trivial(g), build_partition(g), 1.0,
                               1e-3)
        assert rep["ok"]
        assert rep["values"]["sup_weighted_32"] == 0.0

    def test_fast_decay_within_budget(self):
        g, ff = self.make_ff(2.5, eps=1e-6)
        rep = assumption_check(ff, build_partition(g), 0.5, 1e-2)
        assert rep["ok"]
        assert rep["divergent"] == []
        for v in rep["values"].values():
            assert np.isfinite(v)

    def test_slow_decay_flags_divergence(self):
        g, ff = self.make_ff(2.0)
        rep = assumption_check(ff, build_partition(g), 0.5, 1e30)
        assert not rep["ok"]
        assert any("sup-in-time" in d for d in rep["divergent"])
        assert rep["values"]["sup_weighted_32"] == np.inf

    def test_marginal_decay_flags_integrals(self):
        g, ff = self.make_ff(2.25)
        rep = assumption_check(ff, build_partition(g), 0.5, 1e30)
        # alpha = 9/4 exactly passes the sup threshold but both time
        # integrals sit on their divergence boundary
        assert np.isfinite(rep["values"]["sup_weighted_32"])
        assert any("L2-in-time" in d for d in rep["divergent"])
        assert any("L1-in-time" in d for d in rep["divergent"])

    def test_budget_is_binding(self):
        g, ff = self.make_ff(2.5, eps=1.0)
        rep = assumption_check(ff, build_partition(g), 0.5, 1e-10)
        assert not rep["ok"]
        assert rep["divergent"] == []


class TestSourceTerms:
    def test_trivial_gives_zero_fields(self):
        g = make_grid()
        p = Params(kappa=1.0, epsilon=1e-3)
        f_u, f_b, F_u, F_b = source_terms(farfield_trivial(g), None, p, g, 0.0)
        for f in (f_u, f_b, F_u, F_b):
            assert np.all(f.coeffs == 0.0)

    def test_nontrivial_requires_cutoff(self):
        g = make_grid()
        p = Params(kappa=1.5, epsilon=1e-3)
        ff = farfield_decaying(g, p, 0.01, 2.5, np.cos(g.x))
        with pytest.raises(ValueError, match="cutoff"):
            source_terms(ff, None, p, g, 0.0)

    def test_support_confined_to_cutoff_zone(self):
        g = make_grid(ny=512, ymax=16.0)
        p = Params(kappa=1.5, epsilon=1e-3)
        ff = farfield_decaying(g, p, 0.01, 2.5, np.cos(g.x))
        cut = build_cutoff(g)
        f_u, f_b, F_u, F_b = source_terms(ff, cut, p, g, 0.5)
        above = g.y > 2.0 + 1e-9
        scale = np.max(np.abs(f_u.coeffs)) + np.max(np.abs(f_b.coeffs))
        assert scale > 0.0
        assert np.max(np.abs(f_u.coeffs[above])) < 1e-12 * scale
        assert np.max(np.abs(f_b.coeffs[above])) < 1e-12 * scale
        # tail integrals vanish above the zone as well
        assert np.max(np.abs(F_u.coeffs[above])) < 1e-12 * scale
        assert np.max(np.abs(F_b.coeffs[above])) < 1e-12 * scale

    def test_tail_integral_sign_convention(self):
        g = make_grid(ny=512, ymax=16.0)
        p = Params(kappa=1.5, epsilon=1e-3)
        ff = farfield_decaying(g, p, 0.01, 2.5, np.cos(g.x))
        cut = build_cutoff(g)
        f_u, _, F_u, _ = source_terms(ff, cut, p, g, 0.5)
        expect = -integrate_y_tail(f_u).coeffs
        assert np.array_equal(F_u.coeffs, expect)

    def test_time_decay_of_sources(self):
        g = make_grid(ny=512, ymax=16.0)
        p = Params(kappa=1.5, epsilon=1e-3)
        ff = farfield_decaying(g, p, 0.01, 2.5, np.cos(g.x))
        cut = build_cutoff(g)
        f0 = source_terms(ff, cut, p, g, 0.0)[0]
        f9 = source_terms(ff, cut, p, g, 9.0)[0]
        assert np.max(np.abs(f9.coeffs)) < 0.01 * np.max(np.abs(f0.coeffs))


class TestInitialData:
    def test_closed_form_shapes(self):
        g = make_grid(nx=32, ny=1024, ymax=16.0)
        p = Params(kappa=1.0, epsilon=1e-3)
        u0, b0, rep = initial_data_standard(g, p)
        prof = default_x_profile(g)
        pu = (g.y - 0.5 * g.y**3) * np.exp(-0.5 * g.y**2)
        pb = (1.0 - g.y**2) * np.exp(-0.5 * g.y**2)
        eu = p.epsilon * np.outer(pu, prof)
        eb = p.epsilon * np.outer(pb, prof)
        scale = p.epsilon
        assert np.max(np.abs(u0.coeffs - eu)) < 1e-5 * scale
        assert np.max(np.abs(b0.coeffs - eb)) < 1e-5 * scale
        assert u0.bc == "dirichlet" and b0.bc == "neumann"

    def test_report_compatibility(self):
        g = make_grid(nx=32, ny=1024, ymax=16.0)
        p = Params(kappa=1.3, epsilon=1e-3)
        u0, b0, rep = initial_data_standard(g, p)
        assert rep["ok"]
        assert rep["wall_value_u"] == 0.0
        assert rep["flux_u"] < 1e-8 * p.epsilon
        assert rep["flux_b"] < 1e-8 * p.epsilon

    def test_wall_behaviour(self):
        g = make_grid(nx=32, ny=1024, ymax=16.0)
        p = Params(kappa=1.0, epsilon=1e-3)
        u0, b0, _ = initial_data_standard(g, p)
        assert np.all(u0.coeffs[0] == 0.0)
        # Neumann closure reports zero wall slope for the field component
        assert np.all(ddy(b0).coeffs[0] == 0.0)

    def test_antiderivative_wall_values_vanish(self):
        """Tail integrals of projected data vanish at the wall per mode."""
        g = make_grid(nx=32, ny=1024, ymax=16.0)
        p = Params(kappa=1.0, epsilon=1e-3)
        u0, b0, _ = initial_data_standard(g, p)
        phi0 = integrate_y_tail(u0)
        psi0 = integrate_y_tail(b0)
        assert np.max(np.abs(phi0.coeffs[0, 1:])) < 1e-12 * p.epsilon
        assert np.max(np.abs(psi0.coeffs[0, 1:])) < 1e-12 * p.epsilon

    def test_rejects_bad_profiles(self):
        g = make_grid()
        p = Params(kappa=1.0, epsilon=1e-3)
        with pytest.raises(ValueError, match="zero mean"):
            spec = np.ones(g.nx, dtype=complex)
            initial_data_standard(g, p, spec)
        with pytest.raises(ValueError, match="shape"):
            initial_data_standard(g, p, np.zeros(5, dtype=complex))

    def test_default_profile_is_zero_mean_analytic(self):
        g = make_grid(nx=64)
        spec = default_x_profile(g)
        assert spec[0] == 0.0
        assert spec[1] == pytest.approx(np.exp(-1.0), rel=1e-14)
        # Hermitian by construction (real even amplitudes)
        assert np.max(np.abs(spec - np.conj(spec[(-np.arange(g.nx)) % g.nx]))) == 0.0
        low = np.abs(np.rint(g.xi)) <= 8
        assert np.all(np.abs(spec[low & (np.abs(g.xi) > 0)]) > 0.0)

    def test_flux_shapes_have_unit_flux(self):
        g = make_grid(ny=256)
        su, sb = flux_projection_profiles(g)
        w = g.trapz_weights
        assert w @ su == pytest.approx(1.0, rel=1e-14)
        assert w @ sb == pytest.approx(1.0, rel=1e-14)
        assert su[0] == 0.0

    def test_projection_zeroes_nonzero_mode_flux(self):
        g = make_grid(nx=16, ny=256)
        rng = np.random.default_rng(13)
        coeffs = rng.standard_normal((g.ny, g.nx)) * np.exp(-g.y)[:, None]
        f = Field(g, coeffs.astype(complex), "dirichlet")
        su, _ = flux_projection_profiles(g)
        proj = project_zero_flux(f, su)
        flux = column_flux(proj)
        scale = np.max(np.abs(column_flux(f)))
        assert np.max(np.abs(flux[1:])) < 1e-14 * max(scale, 1.0)
        # DC column is untouched
        assert flux[0] == column_flux(f)[0]
        assert np.array_equal(proj.coeffs[:, 0], f.coeffs[:, 0])
