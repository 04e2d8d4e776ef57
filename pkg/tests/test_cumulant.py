import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import superproc as sp
from superproc.cumulant import STRICT_OPTIONS, SolverOptions


class TestOptions:
    def test_defaults_valid(self):
        opts = SolverOptions()
        assert opts.truncation_sequence[0] == 16.0
        assert opts.truncation_sequence[-1] == 2.0**40

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SolverOptions(rel_tol=0.0)
        with pytest.raises(ValueError):
            SolverOptions(truncation_sequence=(8.0, 4.0))


class TestSolve(object):
    def test_zero_fixed_point(self, three_site):
        m, tr = three_site
        traj = sp.solve_cumulant(m, tr, np.zeros(3), 2.0)
        assert not traj.values.any()
        assert not traj.value_at(1.3).any()

    def test_feller_closed_form(self, feller, oracle_certified):
        m, tr, p = feller
        traj = sp.solve_cumulant(m, tr, [1.0], math.log(2.0))
        assert traj.final[0] == pytest.approx(1.0 / 3.0, rel=1e-8)

    def test_closed_form_grid(self, feller, oracle_certified):
        m, tr, p = feller
        for f in (0.1, 1.0, 10.0):
            traj = sp.solve_cumulant(m, tr, [f], 5.0)
            for t in np.linspace(0.01, 5.0, 23):
                ref = sp.feller_cumulant(p, f, t)
                assert float(traj.value_at(t)[0]) == pytest.approx(ref, rel=1e-6)

    def test_initial_condition_on_grid(self, three_site, rng):
        m, tr = three_site
        f = rng.uniform(0, 2, 3)
        traj = sp.solve_cumulant(m, tr, f, 1.0)
        assert traj.values[0] == pytest.approx(f, abs=1e-12)

    def test_small_mass_linearisation(self, three_site):
        m, tr = three_site
        eps = 1e-6
        traj = sp.solve_cumulant(m, tr, eps * tr.phi, 2.0)
        for t in (0.5, 1.0, 2.0):
            expected = eps * math.exp(tr.lam * t) * tr.phi
            assert float(np.abs(traj.value_at(t) / expected - 1.0).max()) < 1e-4

    def test_rejects_infinite_f(self, feller):
        m, tr, _ = feller
        with pytest.raises(sp.ModelError):
            sp.solve_cumulant(m, tr, [math.inf], 1.0)

    def test_rejects_bad_horizon(self, feller):
        m, tr, _ = feller
        with pytest.raises(ValueError):
            sp.solve_cumulant(m, tr, [1.0], 0.0)

    def test_value_at_outside_window(self, feller):
        m, tr, _ = feller
        traj = sp.solve_cumulant(m, tr, [1.0], 1.0)
        with pytest.raises(ValueError):
            traj.value_at(2.0)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_monotone_in_start(self, three_site, seed):
        m, tr = three_site
        r = np.random.default_rng(seed)
        f = r.uniform(0.0, 2.0, 3)
        g = f + r.uniform(0.0, 1.5, 3)
        tf = sp.solve_cumulant(m, tr, f, 1.5, STRICT_OPTIONS)
        tg = sp.solve_cumulant(m, tr, g, 1.5, STRICT_OPTIONS)
        assert float((tf.values - tg.values).max()) <= 1e-9

    def test_dominated_by_linear_flow(self, three_site, rng):
        m, tr = three_site
        f = rng.uniform(0.2, 2.0, 3)
        traj = sp.solve_cumulant(m, tr, f, 2.0, STRICT_OPTIONS)
        for t in (0.25, 1.0, 2.0):
            dom = sp.mean_semigroup(m, t) @ f
            assert float((traj.value_at(t) - dom).max()) <= 1e-9

    def test_concave_in_scale(self, three_site, rng):
        m, tr = three_site
        f = rng.uniform(0.5, 2.0, 3)
        us = np.linspace(0.0, 1.0, 5)
        finals = [sp.solve_cumulant(m, tr, u * f, 1.0, STRICT_OPTIONS).final for u in us]
        for i in range(3):
            mid = 0.5 * (finals[i] + finals[i + 2])
            assert (finals[i + 1] >= mid - 1e-9).all()


class TestExtinction:
    def test_feller_closed_form(self, feller, oracle_certified):
        m, tr, p = feller
        v = sp.extinction_function(m, tr, T=2.0)
        for t in (1e-3, 0.1, math.log(2.0), 1.5):
            assert float(v.value_at(t)[0]) == pytest.approx(
                sp.feller_extinction(p, t), rel=1e-5
            )
        assert v.truncation_level is not None

    def test_time_zero_entry_is_cap(self, feller):
        m, tr, _ = feller
        v = sp.extinction_function(m, tr, T=1.0)
        assert v.values[0][0] == v.truncation_level

    def test_truncation_monotone(self, feller):
        m, tr, _ = feller
        prev = None
        for cap in (16.0, 256.0, 4096.0):
            vals = sp.solve_cumulant(m, tr, [cap], 1.0, STRICT_OPTIONS).values
            if prev is not None:
                assert (prev <= vals + 1e-9).all()
            prev = vals

    def test_noise_free_diverges(self):
        m = sp.SuperprocessModel(
            sp.StateSpace(("s",)),
            sp.RateMatrix(np.array([[0.0]])),
            sp.BranchingMechanism(np.array([-1.0]), np.array([0.0]), ((),)),
        )
        tr = sp.principal_triple(m)
        with pytest.raises(sp.ExtinctionDivergesError, match="appears to fail"):
            sp.extinction_function(m, tr, T=1.5)

    def test_grey_sufficient_gives_finite_values(self, three_site):
        m, tr = three_site
        assert sp.grey_condition_check(m).holds
        v = sp.extinction_function(m, tr, T=2.0)
        assert np.isfinite(v.values[1:]).all()

    def test_partial_infinity(self, three_site):
        m, tr = three_site
        f = np.array([math.inf, 1.0, math.inf])
        traj = sp.solve_extended(m, tr, f, 1.0)
        full = sp.extinction_function(m, tr, T=1.0)
        finite = sp.solve_cumulant(m, tr, [0.0, 1.0, 0.0], 1.0)
        at = traj.value_at(0.5)
        # squeezed between the finite start and the all-infinite start
        assert (at <= full.value_at(0.5) + 1e-6).all()
        assert (at >= finite.value_at(0.5) - 1e-6).all()


class TestResiduals:
    def test_semigroup_zero_function(self, feller):
        m, _, _ = feller
        assert sp.semigroup_residual(m, [0.0], 0.5, 0.5) == 0.0

    def test_semigroup_feller_closed_form(self, feller, oracle_certified):
        m, _, p = feller
        s = t = math.log(2.0)
        # both routes collapse to 1/7 in exact arithmetic
        assert sp.feller_cumulant(p, 1.0, 2 * s) == pytest.approx(1.0 / 7.0, abs=1e-15)
        assert sp.feller_cumulant(p, sp.feller_cumulant(p, 1.0, s), t) == pytest.approx(
            1.0 / 7.0, abs=1e-15
        )
        assert sp.semigroup_residual(m, [1.0], t, s) < 1e-7

    def test_semigroup_three_site(self, three_site, rng):
        m, _ = three_site
        f = rng.uniform(0.0, 2.0, 3)
        assert sp.semigroup_residual(m, f, 0.7, 0.7) < 1e-6

    def test_mild_equation_zero(self, feller):
        m, tr, _ = feller
        assert sp.mild_equation_residual(m, tr, [0.0], 1.0) == pytest.approx(0.0, abs=1e-14)

    def test_mild_equation_feller(self, feller):
        m, tr, _ = feller
        assert sp.mild_equation_residual(m, tr, [1.0], 1.0) < 1e-6

    def test_mild_equation_two_site(self, two_site):
        m, tr = two_site
        assert sp.mild_equation_residual(m, tr, [1.0, 0.0], 1.0) < 1e-6


class TestDiagnostics:
    def test_profile_scalar_model_is_zero(self, feller):
        m, tr, _ = feller
        d = sp.profile_diagnostics(m, tr, [2.0], 1.0)
        assert d["c4_sup"] == pytest.approx(0.0, abs=1e-9)

    def test_profile_zero_function_convention(self, three_site):
        m, tr = three_site
        d = sp.profile_diagnostics(m, tr, np.zeros(3), 1.0)
        assert d == {"c4_sup": 0.0, "nu_vf": 0.0}

    def test_profile_decays(self, two_site):
        m, tr = two_site
        early = sp.profile_diagnostics(m, tr, [1.0, 0.0], 1.0 / tr.gap)["c4_sup"]
        late = sp.profile_diagnostics(m, tr, [1.0, 0.0], 5.0 / tr.gap)["c4_sup"]
        assert late < early
        assert late < 0.05

    def test_profile_accepts_infinite_start(self, two_site):
        m, tr = two_site
        d = sp.profile_diagnostics(m, tr, np.full(2, math.inf), 3.0)
        assert d["c4_sup"] < 0.05

    def test_ratio_feller(self, feller, oracle_certified):
        m, tr, _ = feller
        r = sp.ratio_diagnostic(m, tr, [1.0], 10.0, 1.0)
        assert r == pytest.approx(math.exp(-1.0), abs=1e-3)

    def test_ratio_small_mass_is_immediate(self, three_site):
        m, tr = three_site
        r = sp.ratio_diagnostic(m, tr, 1e-6 * tr.phi, 0.5, 0.8)
        assert r == pytest.approx(math.exp(0.8 * tr.lam), rel=1e-4)

    def test_ratio_at_s_zero(self, three_site):
        m, tr = three_site
        assert sp.ratio_diagnostic(m, tr, [1.0, 0.5, 2.0], 1.0, 0.0) == 1.0

    def test_ratio_rejects_null_function(self, three_site):
        m, tr = three_site
        with pytest.raises(sp.ModelError):
            sp.ratio_diagnostic(m, tr, np.zeros(3), 1.0, 0.5)


def test_export_csv(tmp_path, feller):
    m, tr, _ = feller
    traj = sp.solve_cumulant(m, tr, [1.0], 1.0)
    out = tmp_path / "traj.csv"
    sp.export_trajectory_csv(traj, out, m.labels)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,V[site]"
    assert len(lines) == len(traj.times) + 1
    t0, v0 = lines[1].split(",")
    assert float(t0) == 0.0 and float(v0) == 1.0

    v = sp.extinction_function(m, tr, T=1.0)
    out2 = tmp_path / "ext.csv"
    sp.export_trajectory_csv(v, out2, m.labels)
    header = out2.read_text().splitlines()[0]
    assert header == "t,V[site],cap"
