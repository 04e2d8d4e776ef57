import math

import numpy as np
import pytest
import scipy.linalg

import superproc as sp
from superproc.spectral import mean_generator


def test_mean_semigroup_identity_at_zero(three_site):
    m, _ = three_site
    assert np.array_equal(sp.mean_semigroup(m, 0.0), np.eye(3))


def test_mean_semigroup_scalar(feller):
    m, _, _ = feller
    assert sp.mean_semigroup(m, 1.0)[0, 0] == pytest.approx(math.exp(-1.0), abs=1e-14)


def test_mean_semigroup_two_site_closed_form(two_site):
    m, _ = two_site
    P = sp.mean_semigroup(m, 1.0)
    diag = math.exp(-1.0) * (1.0 + math.exp(-2.0)) / 2.0
    off = math.exp(-1.0) * (1.0 - math.exp(-2.0)) / 2.0
    assert P == pytest.approx(np.array([[diag, off], [off, diag]]), abs=1e-13)


def test_mean_semigroup_paths_cross_check(two_site):
    # eigendecomposition fast path vs scaling-and-squaring reference
    m, _ = two_site
    A = mean_generator(m)
    for t in (0.3, 1.7, 4.0):
        assert sp.mean_semigroup(m, t) == pytest.approx(scipy.linalg.expm(t * A), abs=1e-12)


def test_mean_semigroup_rejects_negative_time(feller):
    m, _, _ = feller
    with pytest.raises(ValueError):
        sp.mean_semigroup(m, -0.1)


def test_semigroup_property_random_times(three_site, rng):
    m, _ = three_site
    for _ in range(5):
        t, s = rng.uniform(0.0, 5.0, 2)
        lhs = sp.mean_semigroup(m, t + s)
        rhs = sp.mean_semigroup(m, t) @ sp.mean_semigroup(m, s)
        assert float(np.abs(lhs - rhs).max()) < 1e-10


def test_nonnegative_entries(three_site):
    m, _ = three_site
    assert (sp.mean_semigroup(m, 2.5) >= 0.0).all()


class TestPrincipalTriple:
    def test_scalar_case(self, feller):
        _, tr, _ = feller
        assert tr.lam == -1.0
        assert tr.phi.tolist() == [1.0]
        assert tr.nu.tolist() == [1.0]
        assert math.isinf(tr.gap)

    def test_symmetric_two_site(self, two_site):
        _, tr = two_site
        assert tr.lam == pytest.approx(-1.0, abs=1e-12)
        assert tr.phi == pytest.approx(np.array([1.0, 1.0]), abs=1e-12)
        assert tr.nu == pytest.approx(np.array([0.5, 0.5]), abs=1e-12)
        assert tr.gap == pytest.approx(2.0, abs=1e-9)

    def test_killing_model_closed_form(self):
        m = sp.SuperprocessModel(
            sp.StateSpace(("a", "b")),
            sp.RateMatrix(np.array([[-2.0, 1.0], [1.0, -1.0]])),
            sp.BranchingMechanism(np.zeros(2), np.zeros(2), ((), ())),
        )
        tr = sp.principal_triple(m)
        assert tr.lam == pytest.approx((-3.0 + math.sqrt(5.0)) / 2.0, abs=1e-12)
        # cross-check against a dense eigensolver
        ev, V = np.linalg.eig(mean_generator(m))
        lead = np.argmax(ev.real)
        phi_ref = np.abs(V[:, lead].real)
        assert tr.phi / tr.phi[0] == pytest.approx(phi_ref / phi_ref[0], abs=1e-10)

    def test_normalisation(self, three_site):
        _, tr = three_site
        assert tr.nu.sum() == pytest.approx(1.0, abs=1e-13)
        assert float(tr.nu @ tr.phi) == pytest.approx(1.0, abs=1e-13)
        assert (tr.phi > 0).all() and (tr.nu > 0).all()

    def test_residuals(self, three_site):
        m, tr = three_site
        A = mean_generator(m)
        assert float(np.abs(A @ tr.phi - tr.lam * tr.phi).max()) < 1e-10
        assert float(np.abs(A.T @ tr.nu - tr.lam * tr.nu).max()) < 1e-10

    def test_random_metzler_matches_dense_eig(self, rng):
        for _ in range(8):
            n = int(rng.integers(2, 6))
            off = rng.uniform(0.05, 1.0, size=(n, n))
            np.fill_diagonal(off, 0.0)
            q = off.copy()
            np.fill_diagonal(q, -(off.sum(axis=1) + rng.uniform(0, 0.5, n)))
            m = sp.SuperprocessModel(
                sp.StateSpace(tuple(f"s{i}" for i in range(n))),
                sp.RateMatrix(q),
                sp.BranchingMechanism(
                    rng.uniform(-2, 0.5, n), rng.uniform(0, 1, n), ((),) * n
                ),
            )
            tr = sp.principal_triple(m)
            lead = np.linalg.eigvals(mean_generator(m)).real.max()
            assert tr.lam == pytest.approx(lead, abs=1e-10)

    def test_reducible_rejected(self):
        m = sp.SuperprocessModel(
            sp.StateSpace(("a", "b")),
            sp.RateMatrix(np.array([[-1.0, 1.0], [0.0, -1.0]])),
            sp.BranchingMechanism(np.zeros(2), np.zeros(2), ((), ())),
        )
        with pytest.raises(sp.SpectralError, match="reducible generator"):
            sp.principal_triple(m)

    def test_eigen_invariance_over_time(self, three_site):
        m, tr = three_site
        for t in (0.1, 1.0, 10.0):
            P = sp.mean_semigroup(m, t)
            el = math.exp(tr.lam * t)
            assert float(np.abs(tr.nu @ P - el * tr.nu).max()) < 1e-9
            assert float(np.abs(P @ tr.phi - el * tr.phi).max()) < 1e-9


class TestSubcritical:
    def test_pass(self, feller):
        _, tr, _ = feller
        sp.require_subcritical(tr)

    @pytest.mark.parametrize("lam", [0.0, 0.5])
    def test_reject(self, lam):
        tr = sp.SpectralTriple(lam=lam, phi=np.array([1.0]), nu=np.array([1.0]), gap=math.inf)
        with pytest.raises(sp.NotSubcriticalError, match="not subcritical"):
            sp.require_subcritical(tr)


class TestH1:
    def test_scalar_model_is_exact(self, feller):
        m, tr, _ = feller
        assert sp.h1_diagnostic(m, tr, 3.0).value == pytest.approx(0.0, abs=1e-12)

    def test_two_site_closed_form_decay(self, two_site):
        m, tr = two_site
        # deviation equals e^{-2t} exactly for the symmetric pair
        for t in (0.5, 1.0, 2.0):
            assert sp.h1_diagnostic(m, tr, t).value == pytest.approx(
                math.exp(-2.0 * t), rel=1e-10
            )

    def test_monotone_decay_and_smallness(self, three_site):
        m, tr = three_site
        g = tr.gap
        v3 = sp.h1_diagnostic(m, tr, 3.0 / g).value
        v10 = sp.h1_diagnostic(m, tr, 10.0 / g).value
        assert v10 < v3
        assert v10 < 1e-2

    def test_log_slope_matches_gap(self, three_site):
        m, tr = three_site
        g = tr.gap
        ts = np.linspace(8.0 / g, 16.0 / g, 10)
        slope = np.polyfit(ts, np.log([sp.h1_diagnostic(m, tr, t).value for t in ts]), 1)[0]
        assert slope == pytest.approx(-g, rel=0.1)

    def test_rejects_nonpositive_time(self, feller):
        m, tr, _ = feller
        with pytest.raises(ValueError):
            sp.h1_diagnostic(m, tr, 0.0)


class TestFirstMoment:
    def test_eigen_identity(self, two_site):
        m, tr = two_site
        assert sp.first_moment(m, tr, tr.nu, tr.phi, 1.0) == pytest.approx(
            math.exp(tr.lam), abs=1e-12
        )

    def test_time_zero(self, three_site, rng):
        m, tr = three_site
        mu = rng.uniform(0, 2, 3)
        f = rng.uniform(0, 2, 3)
        assert sp.first_moment(m, tr, mu, f, 0.0) == pytest.approx(float(mu @ f))

    def test_scalar_arithmetic(self, feller):
        m, tr, _ = feller
        assert sp.first_moment(m, tr, [2.0], [3.0], math.log(2.0)) == pytest.approx(3.0)

    def test_rejects_infinite_f(self, feller):
        m, tr, _ = feller
        with pytest.raises(sp.ModelError):
            sp.first_moment(m, tr, [1.0], [math.inf], 1.0)


def test_spectral_report_shape(three_site):
    m, _ = three_site
    rep = sp.spectral_report(m)
    assert rep["subcritical"] is True
    assert rep["lambda"] < 0
    assert len(rep["h1_decay"]) == 6
    assert rep["eigen_residuals"]["right"] < 1e-10
