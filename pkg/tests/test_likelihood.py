import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frailnet.errors import BaselineUndefinedAtTime, CensoredRecordInBatch, NonPositiveAlpha, UnknownClusterSize
from frailnet.likelihood import (
    FrailtyState,
    NoEventsWarning,
    a_correction,
    breslow_grad,
    breslow_loglik,
    frailty_terms,
    full_hlik,
    gamma_log_density_terms,
    grad_profiled_hlik,
    minibatch_hlik,
    minibatch_scores,
    profiled_hlik,
    with_frailty,
)
from frailnet.model import BaselineHazard, WeibullBaseline, cluster_cumulative_hazard, estimate_baseline, frailty_bup
from frailnet.trainer import profile_frailties

from conftest import make_ds, random_ds
from oracles import breslow_naive, marginal_closed_form, marginal_quadrature


def hp_total(ds, eta_m, v, alpha):
    return profiled_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, alpha)).total


class TestBreslow:
    def test_zero_predictor(self):
        ds = make_ds([1, 2, 3], [1, 1, 1])
        assert breslow_loglik(ds, np.zeros(3)) == pytest.approx(-math.log(6), abs=1e-15)

    def test_hand_risk_sets(self):
        ds = make_ds([1, 2, 3], [1, 1, 1])
        assert breslow_loglik(ds, np.array([math.log(2), 0, 0])) == pytest.approx(-math.log(4), abs=1e-15)

    def test_tie(self):
        ds = make_ds([2.0, 2.0], [1, 1])
        assert breslow_loglik(ds, np.zeros(2)) == pytest.approx(-2 * math.log(2), abs=1e-15)

    def test_no_events(self):
        ds = make_ds([1, 2], [0, 0])
        with pytest.warns(NoEventsWarning):
            assert breslow_loglik(ds, np.zeros(2)) == 0.0

    def test_shape(self):
        ds = make_ds([1, 2], [1, 1])
        with pytest.raises(ValueError):
            breslow_loglik(ds, np.zeros(3))

    def test_matches_naive(self, rng):
        for _ in range(20):
            ds = random_ds(rng, n_clusters=4, ties=True)
            eta = rng.normal(size=ds.N)
            assert breslow_loglik(ds, eta) == pytest.approx(breslow_naive(ds.time, ds.status, eta), rel=1e-12)

    def test_overflow_safe(self, rng):
        ds = random_ds(rng, n_clusters=6, ties=True)
        eta = rng.normal(size=ds.N)
        assert abs(breslow_loglik(ds, eta + 1e4) - breslow_loglik(ds, eta)) < 1e-8

    @given(st.floats(-50, 50))
    def test_shift_invariance(self, eps):
        rng = np.random.default_rng(3)
        ds = random_ds(rng, n_clusters=3)
        eta = rng.normal(size=ds.N)
        assert breslow_loglik(ds, eta + eps) == pytest.approx(breslow_loglik(ds, eta), abs=1e-9)

    def test_gradient_fd(self, rng):
        ds = random_ds(rng, n_clusters=5, ties=True)
        eta = rng.normal(size=ds.N)
        g = breslow_grad(ds, eta)
        h = 1e-6
        fd = [(breslow_loglik(ds, eta + h * e) - breslow_loglik(ds, eta - h * e)) / (2 * h) for e in np.eye(ds.N)]
        np.testing.assert_allclose(g, fd, atol=1e-7)


class TestCorrection:
    def test_alpha1_d0(self):
        assert a_correction(1.0, 0) == pytest.approx(-1.0, abs=1e-15)

    def test_half_two(self):
        assert a_correction(0.5, 2) == pytest.approx(4 * (math.log(4) - 1) - math.log(6), abs=1e-14)
        assert a_correction(0.5, 2) == pytest.approx(-0.246582, abs=5e-7)

    def test_high_precision(self):
        for alpha, d in [(0.3, 0), (1.7, 5), (0.01, 3), (20.0, 1), (2.0, 100)]:
            s = mpmath.mpf(d) + 1 / mpmath.mpf(alpha)
            ref = float(s * (mpmath.log(s) - 1) - mpmath.loggamma(s))
            assert a_correction(alpha, d) == pytest.approx(ref, rel=1e-12, abs=1e-13)

    def test_stirling_large_d(self):
        # a = (1/2) log(s / (2 pi)) - 1/(12 s) + O(s^-3), s = d + 1/alpha
        s = 1e6 + 1.0
        approx = 0.5 * math.log(s / (2 * math.pi)) - 1 / (12 * s)
        assert a_correction(1.0, 1e6) == pytest.approx(approx, rel=1e-6)

    def test_nonpositive_alpha(self):
        with pytest.raises(NonPositiveAlpha):
            a_correction(0.0, 1)
        with pytest.raises(NonPositiveAlpha):
            FrailtyState(np.zeros(2), -1.0)

    def test_stable_form_equals_literal(self, rng):
        for alpha in (0.05, 0.5, 1.0, 3.0, 50.0):
            v = rng.normal(size=8)
            d = rng.integers(0, 6, 8)
            literal = gamma_log_density_terms(v, alpha) - a_correction(alpha, d)
            np.testing.assert_allclose(frailty_terms(v, alpha, d), literal, rtol=1e-11, atol=1e-11)

    def test_small_alpha_finite(self):
        # literal form cancels O(r log r) terms; the stable one stays accurate
        v = np.array([1e-4, -2e-4])
        G = frailty_terms(v, 1e-7, np.array([3, 0]))
        # G ~ -v^2/(2 alpha) - log1p(d alpha)/2 for tiny alpha
        approx = -(v ** 2) / 2e-7 - 0.5 * np.log1p(np.array([3, 0]) * 1e-7)
        np.testing.assert_allclose(G, approx, rtol=1e-3)


class TestProfiled:
    def test_v_zero_alpha_one(self, rng):
        ds = random_ds(rng, n_clusters=4)
        lb = profiled_hlik(ds, np.zeros(ds.N), FrailtyState(np.zeros(4), 1.0))
        assert lb.gamma_term == pytest.approx(-4.0, abs=1e-14)
        assert lb.correction_term == pytest.approx(-np.sum(a_correction(1.0, ds.delta_plus)), abs=1e-12)

    def test_single_cluster_no_events_cancels(self):
        ds = make_ds([1.0, 2.0], [0, 0])
        with pytest.warns(NoEventsWarning):
            lb = profiled_hlik(ds, np.zeros(2), FrailtyState(np.zeros(1), 1.0))
        assert lb.gamma_term == pytest.approx(-1.0)
        assert lb.correction_term == pytest.approx(1.0)
        assert lb.total == pytest.approx(lb.partial_term, abs=1e-14)

    def test_decomposition(self, rng):
        for _ in range(10):
            ds = random_ds(rng, n_clusters=5)
            v = rng.normal(scale=0.5, size=5)
            alpha = float(rng.uniform(0.1, 3))
            lb = profiled_hlik(ds, with_frailty(ds, rng.normal(size=ds.N), v), FrailtyState(v, alpha))
            assert lb.total == pytest.approx(lb.partial_term + lb.gamma_term + lb.correction_term, rel=1e-12)

    def test_pure(self, rng):
        ds = random_ds(rng)
        v = rng.normal(size=ds.n_clusters)
        eta = with_frailty(ds, rng.normal(size=ds.N), v)
        a = profiled_hlik(ds, eta, FrailtyState(v, 0.7))
        b = profiled_hlik(ds, eta, FrailtyState(v, 0.7))
        assert a == b

    def test_v_shape(self, rng):
        ds = random_ds(rng, n_clusters=3)
        with pytest.raises(ValueError):
            profiled_hlik(ds, np.zeros(ds.N), FrailtyState(np.zeros(4), 1.0))

    def test_shift_identifiability(self, rng):
        ds = random_ds(rng, n_clusters=4)
        eta_m = rng.normal(size=ds.N)
        v = rng.normal(size=4)
        a = profiled_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, 1.0))
        b = profiled_hlik(ds, with_frailty(ds, eta_m + 0.7, v - 0.7), FrailtyState(v - 0.7, 1.0))
        assert a.partial_term == pytest.approx(b.partial_term, abs=1e-12)
        assert a.gamma_term != pytest.approx(b.gamma_term)


def fd_grads(ds, eta_m, v, alpha, h=1e-6):
    g_eta = np.array([(hp_total(ds, eta_m + h * e, v, alpha) - hp_total(ds, eta_m - h * e, v, alpha)) / (2 * h)
                      for e in np.eye(ds.N)])
    g_v = np.array([(hp_total(ds, eta_m, v + h * e, alpha) - hp_total(ds, eta_m, v - h * e, alpha)) / (2 * h)
                    for e in np.eye(v.size)])
    ha = h * max(alpha, 1e-3)
    g_a = (hp_total(ds, eta_m, v, alpha + ha) - hp_total(ds, eta_m, v, alpha - ha)) / (2 * ha)
    return g_eta, g_v, g_a


def rel_err(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


class TestGradients:
    def test_finite_differences(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(30):
            ds = random_ds(rng, n_clusters=4, size=(1, 4), ties=bool(rng.integers(2)))
            eta_m = rng.normal(size=ds.N)
            v = rng.normal(scale=0.6, size=4)
            alpha = float(np.exp(rng.uniform(-2, 1.5)))
            g_eta, g_v, g_a = grad_profiled_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, alpha))
            fe, fv, fa = fd_grads(ds, eta_m, v, alpha)
            worst = max(worst, rel_err(g_eta, fe), rel_err(g_v, fv), rel_err(g_a, fa))
        assert worst < 1e-5

    def test_all_censored(self, rng):
        ds = make_ds([1.0, 2.0, 3.0], [0, 0, 0], [0, 1, 1])
        v = np.array([0.3, -0.2])
        with pytest.warns(NoEventsWarning):
            g_eta, g_v, _ = grad_profiled_hlik(ds, with_frailty(ds, np.zeros(3), v), FrailtyState(v, 0.5))
        assert np.all(g_eta == 0)
        np.testing.assert_allclose(g_v, (1 - np.exp(v)) / 0.5)

    def test_alpha_derivative_sign_matches_fd(self):
        rng = np.random.default_rng(5)
        ds = random_ds(rng, n_clusters=6)
        eta_m = rng.normal(size=ds.N)
        for _ in range(20):
            v = rng.normal(scale=rng.uniform(0.1, 1.5), size=6)
            alpha = float(np.exp(rng.uniform(-3, 2)))
            _, _, g_a = grad_profiled_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, alpha))
            _, _, fa = fd_grads(ds, eta_m, v, alpha)
            assert np.sign(g_a) == np.sign(fa)
            assert g_a == pytest.approx(fa, rel=1e-5, abs=1e-6)

    def test_bup_stationarity(self, rng):
        for _ in range(10):
            ds = random_ds(rng, n_clusters=5)
            eta_m = rng.normal(size=ds.N)
            alpha = float(rng.uniform(0.2, 2))
            v = profile_frailties(ds, eta_m, np.zeros(5), alpha, tol=1e-13, max_iter=5000)
            _, g_v, _ = grad_profiled_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, alpha))
            np.testing.assert_allclose(g_v, 0.0, atol=1e-8)
            # and v is the closed-form predictor under its own baseline
            base = estimate_baseline(ds, with_frailty(ds, eta_m, v))
            u = frailty_bup(ds.delta_plus, cluster_cumulative_hazard(ds, eta_m, base), alpha)
            np.testing.assert_allclose(np.log(u), v, atol=1e-10)


class TestFullHlik:
    def test_hand_example(self):
        ds = make_ds([1.0], [1])
        base = WeibullBaseline(shape=1.0, scale=1.0)
        val = full_hlik(ds, np.zeros(1), FrailtyState(np.zeros(1), 1.0), base)
        assert a_correction(1.0, 1) == pytest.approx(-0.613706, abs=5e-7)
        assert val == pytest.approx(-1.386294, abs=5e-7)

    def test_cancellation(self):
        ds = make_ds([1.0, 2.0], [0, 0], [0, 1])
        base = WeibullBaseline(shape=1.0, scale=1.0)
        val = full_hlik(ds, np.zeros(2), FrailtyState(np.zeros(2), 1.0), base)
        assert val == pytest.approx(-3.0, abs=1e-14)  # only -Lambda0(y) e^eta = -(1 + 2) remains

    def test_step_baseline_undefined(self):
        ds = make_ds([1.0, 2.0], [1, 1])
        base = BaselineHazard(np.array([1.0]), np.array([0.5]))
        with pytest.raises(BaselineUndefinedAtTime):
            full_hlik(ds, np.zeros(2), FrailtyState(np.zeros(1), 1.0), base)

    def test_profile_identity(self, rng):
        """With the Breslow step baseline, h = h_p + sum_k d_k (log d_k - 1)."""
        ds = random_ds(rng, n_clusters=4, ties=True)
        v = rng.normal(size=4)
        eta = with_frailty(ds, rng.normal(size=ds.N), v)
        fr = FrailtyState(v, 0.8)
        base = estimate_baseline(ds, eta)
        d = ds.event_multiplicities
        assert full_hlik(ds, eta, fr, base) == pytest.approx(
            profiled_hlik(ds, eta, fr).total + float(np.sum(d * (np.log(d) - 1))), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_marginal_identity(self, seed):
        rng = np.random.default_rng(seed)
        ds = random_ds(rng, n_clusters=4, size=(1, 5))
        eta_m = rng.normal(scale=0.5, size=ds.N)
        alpha = float(np.exp(rng.uniform(-2, 1)))
        base = WeibullBaseline(shape=float(rng.uniform(0.5, 3)), scale=float(rng.uniform(0.3, 2)))
        lam = np.bincount(ds.cluster, weights=base.cumulative(ds.time) * np.exp(eta_m), minlength=4)
        v = np.log(frailty_bup(ds.delta_plus, lam, alpha))
        h = full_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, alpha), base)
        args = (ds.time, ds.status, ds.cluster, eta_m, alpha, lambda t: np.log(base.hazard(t)), base.cumulative)
        assert h == pytest.approx(marginal_closed_form(*args), abs=1e-8)
        assert h == pytest.approx(marginal_quadrature(*args), abs=1e-8)


def untied_uncensored(rng, n_clusters=4, size=(2, 5)):
    ds = random_ds(rng, n_clusters=n_clusters, size=size, censor=0.0)
    assert np.unique(ds.time).size == ds.N
    return ds


class TestMinibatch:
    def test_full_batch_equals_profiled(self, rng):
        for _ in range(10):
            ds = untied_uncensored(rng)
            v = rng.normal(size=ds.n_clusters)
            alpha = float(rng.uniform(0.1, 3))
            eta = with_frailty(ds, rng.normal(size=ds.N), v)
            fr = FrailtyState(v, alpha)
            mb = minibatch_hlik(ds, np.arange(ds.N), eta, fr)
            assert mb == pytest.approx(profiled_hlik(ds, eta, fr).total, abs=1e-10)

    def test_full_batch_scores_equal_profiled_grads(self, rng):
        ds = untied_uncensored(rng)
        v = rng.normal(size=ds.n_clusters)
        eta = with_frailty(ds, rng.normal(size=ds.N), v)
        fr = FrailtyState(v, 0.9)
        g_eta, U_a, U_v = minibatch_scores(ds, np.arange(ds.N), eta, fr)
        ge, gv, ga = grad_profiled_hlik(ds, eta, fr)
        np.testing.assert_allclose(g_eta, ge, atol=1e-12)
        np.testing.assert_allclose(U_v, gv, atol=1e-12)
        assert U_a == pytest.approx(ga, abs=1e-10)

    def test_singleton(self, rng):
        ds = untied_uncensored(rng)
        v = rng.normal(size=ds.n_clusters)
        fr = FrailtyState(v, 0.5)
        eta = with_frailty(ds, rng.normal(size=ds.N), v)
        c = ds.cluster[0]
        n0 = ds.cluster_sizes[c]
        expect = frailty_terms(v[c:c + 1], 0.5, np.array([n0]))[0] / n0
        assert minibatch_hlik(ds, [0], eta, fr) == pytest.approx(expect, abs=1e-14)

    def test_within_cluster_shift(self, rng):
        ds = untied_uncensored(rng)
        batch = np.flatnonzero(ds.cluster == 1)
        v = rng.normal(size=ds.n_clusters)
        eta_m = rng.normal(size=ds.N)
        w = v.copy()
        w[1] += 0.9
        fr_a, fr_b = FrailtyState(v, 1.0), FrailtyState(w, 1.0)
        part_a = minibatch_hlik(ds, batch, with_frailty(ds, eta_m, v), fr_a) - np.sum(
            frailty_terms(v[[1]], 1.0, ds.cluster_sizes[[1]])) * batch.size / ds.cluster_sizes[1]
        part_b = minibatch_hlik(ds, batch, with_frailty(ds, eta_m, w), fr_b) - np.sum(
            frailty_terms(w[[1]], 1.0, ds.cluster_sizes[[1]])) * batch.size / ds.cluster_sizes[1]
        assert part_a == pytest.approx(part_b, abs=1e-12)

    def test_rejects_censored(self):
        ds = make_ds([1.0, 2.0], [1, 0])
        with pytest.raises(CensoredRecordInBatch):
            minibatch_hlik(ds, [0, 1], np.zeros(2), FrailtyState(np.zeros(1), 1.0))

    def test_unknown_cluster_size(self):
        ds = make_ds([1.0, 2.0], [1, 1], [0, 1])
        fr = FrailtyState(np.zeros(2), 1.0)
        with pytest.raises(UnknownClusterSize):
            minibatch_hlik(ds, [0, 1], np.zeros(2), fr, cluster_sizes=np.array([1, 0]))
        with pytest.raises(UnknownClusterSize):
            minibatch_hlik(ds, [0, 1], np.zeros(2), fr, cluster_sizes=np.array([1]))

    def test_scores_fd(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            ds = untied_uncensored(rng, size=(3, 6))
            batch = rng.choice(ds.N, size=5, replace=False)
            eta_m = rng.normal(size=ds.N)
            v = rng.normal(size=ds.n_clusters)
            alpha = float(rng.uniform(0.2, 2.5))
            sizes = ds.cluster_sizes + rng.integers(0, 5, ds.n_clusters)

            def F(em, vv, a):
                return minibatch_hlik(ds, batch, with_frailty(ds, em, vv), FrailtyState(vv, a), sizes)

            g_eta, U_a, U_v = minibatch_scores(ds, batch, with_frailty(ds, eta_m, v), FrailtyState(v, alpha), sizes)
            h = 1e-6
            fe = np.array([(F(eta_m + h * e, v, alpha) - F(eta_m - h * e, v, alpha)) / (2 * h) for e in np.eye(ds.N)])
            fv = np.array([(F(eta_m, v + h * e, alpha) - F(eta_m, v - h * e, alpha)) / (2 * h)
                           for e in np.eye(ds.n_clusters)])
            fa = (F(eta_m, v, alpha + h) - F(eta_m, v, alpha - h)) / (2 * h)
            np.testing.assert_allclose(g_eta, fe, atol=1e-6)
            np.testing.assert_allclose(U_v, fv, atol=1e-6)
            assert U_a == pytest.approx(fa, abs=1e-6)
