"""One test per primary acceptance criterion.

The statistical criteria run 10 seeded replicates per cell through the same
code path as ``frailnet experiment`` and print the per-replicate numbers.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frailnet.cli import ExperimentSpec, run_replicate
from frailnet.data import ClusteredDataset
from frailnet.likelihood import FrailtyState, full_hlik, grad_profiled_hlik, minibatch_hlik, minibatch_scores, \
    profiled_hlik, with_frailty
from frailnet.metrics import c_harrell, censoring_km, clustered_cindex, brier_score, ibs
from frailnet.model import WeibullBaseline, frailty_bup
from frailnet.nn import Architecture, backward, forward, init_params, predict
from frailnet.sim import make_rng, sample_covariates, true_risk

from conftest import random_ds
from oracles import golden_max, marginal_closed_form, marginal_quadrature, pairs_bruteforce, \
    within_mean_bruteforce

REPLICATES = 10
MASTER_SEED = 2024


def report(name, ok, detail):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")


# ---------------------------------------------------------------------------
# property suite
# ---------------------------------------------------------------------------

def test_gradient_oracle():
    rng = np.random.default_rng(100)
    worst = 0.0
    h = 1e-6
    for k in range(100):
        ds = random_ds(rng, n_clusters=3, size=(1, 5), p=2, ties=bool(k % 2))
        params = init_params(Architecture(2, (3, 2), "tanh" if k % 3 else "relu"), k)
        # zero biases put dead-unit records exactly on a ReLU kink, where FD is not a derivative
        for b in params.biases:
            b += rng.normal(scale=0.3, size=b.shape)
        v = rng.normal(scale=0.5, size=3)
        alpha = float(np.exp(rng.uniform(-2, 1.5)))
        arrays = params.arrays()

        def hp(vv=v, a=alpha):
            eta_m = predict(params, ds.x)
            return profiled_hlik(ds, with_frailty(ds, eta_m, vv), FrailtyState(vv, a)).total

        eta_m, tape = forward(params, ds.x)
        g_eta, g_v, g_a = grad_profiled_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, alpha))
        grads, _ = backward(tape, g_eta)
        analytic = np.concatenate([g.ravel() for g in grads] + [g_v, [g_a]])
        fd = []
        for arr in arrays:
            flat = arr.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = hp()
                flat[i] = old - h
                dn = hp()
                flat[i] = old
                fd.append((up - dn) / (2 * h))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd.append((hp(v + e) - hp(v - e)) / (2 * h))
        ha = h * alpha
        fd.append((hp(a=alpha + ha) - hp(a=alpha - ha)) / (2 * ha))
        fd = np.array(fd)
        worst = max(worst, float(np.max(np.abs(analytic - fd)) / max(1.0, np.max(np.abs(fd)))))
    report("gradient oracle", worst < 1e-5, f"max rel err {worst:.2e} over 100 instances")
    assert worst < 1e-5


def test_bup_oracle():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        ds = random_ds(rng, n_clusters=3, size=(1, 6))
        eta_m = rng.normal(scale=0.5, size=ds.N)
        alpha = float(np.exp(rng.uniform(-2, 1.5)))
        base = WeibullBaseline(float(rng.uniform(0.5, 3)), float(rng.uniform(0.2, 2)))
        lam = np.bincount(ds.cluster, weights=base.cumulative(ds.time) * np.exp(eta_m), minlength=3)
        u = frailty_bup(ds.delta_plus, lam, alpha)
        v0 = np.log(u)
        for i in range(3):
            def h(vi):
                v = v0.copy()
                v[i] = vi
                return full_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, alpha), base)

            v_star = golden_max(h, v0[i] - 10, v0[i] + 10, tol=1e-8)
            worst = max(worst, abs(u[i] - math.exp(v_star)))
    report("BUP oracle", worst < 1e-6, f"max |u - argmax| {worst:.2e} over 50 instances")
    assert worst < 1e-6


def test_hlik_identity():
    rng = np.random.default_rng(102)
    worst_q = worst_c = 0.0
    for _ in range(20):
        nc = int(rng.integers(1, 5))
        ds = random_ds(rng, n_clusters=nc, size=(1, 6))
        eta_m = rng.normal(scale=0.5, size=ds.N)
        alpha = float(np.exp(rng.uniform(-2, 1)))
        base = WeibullBaseline(float(rng.uniform(0.5, 3)), float(rng.uniform(0.2, 2)))
        lam = np.bincount(ds.cluster, weights=base.cumulative(ds.time) * np.exp(eta_m), minlength=nc)
        v = np.log(frailty_bup(ds.delta_plus, lam, alpha))
        h = full_hlik(ds, with_frailty(ds, eta_m, v), FrailtyState(v, alpha), base)
        args = (ds.time, ds.status, ds.cluster, eta_m, alpha, lambda t: np.log(base.hazard(t)), base.cumulative)
        worst_q = max(worst_q, abs(h - marginal_quadrature(*args)))
        worst_c = max(worst_c, abs(h - marginal_closed_form(*args)))
    ok = worst_q < 1e-8 and worst_c < 1e-8
    report("h-likelihood identity", ok, f"quadrature {worst_q:.1e}, closed form {worst_c:.1e}")
    assert ok


def test_minibatch_consistency():
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(50):
        ds = random_ds(rng, n_clusters=5, size=(1, 10), censor=0.0)
        assert np.unique(ds.time).size == ds.N
        v = rng.normal(size=5)
        fr = FrailtyState(v, float(rng.uniform(0.05, 5)))
        eta = with_frailty(ds, rng.normal(size=ds.N), v)
        worst = max(worst, abs(minibatch_hlik(ds, np.arange(ds.N), eta, fr) - profiled_hlik(ds, eta, fr).total))
    report("minibatch D_s = D_n", worst < 1e-10, f"max abs diff {worst:.1e}")
    assert worst < 1e-10


def _uncensored_cluster(rng, n, alpha, phi=2.0):
    x = sample_covariates(rng, n)
    f = true_risk(x)
    u = rng.gamma(1 / alpha, alpha)
    T = (-np.log(rng.uniform(size=n)) / (u * np.exp(f))) ** (1 / phi)
    ds = ClusteredDataset(cluster=np.zeros(n, int), time=T, status=np.ones(n, int), x=x, n_clusters=1)
    return ds, f, u


def test_minibatch_alpha_score_unbiased():
    rng = make_rng(104)
    alpha, n, s = 1.0, 8, 4
    scores = np.empty(10_000)
    for r in range(scores.size):
        ds, f, _ = _uncensored_cluster(rng, n, alpha)
        lam = np.sum(ds.time ** 2 * np.exp(f))
        v = np.log(frailty_bup([n], [lam], alpha))
        batch = rng.choice(n, size=s, replace=False)
        _, U_a, _ = minibatch_scores(ds, batch, with_frailty(ds, f, v), FrailtyState(v, alpha), np.array([n]))
        scores[r] = U_a
    mean, se = scores.mean(), scores.std(ddof=1) / math.sqrt(scores.size)
    ok = abs(mean) < 3 * se
    report("minibatch alpha-score unbiased", ok, f"mean U_alpha {mean:.4g}, SE {se:.3g}, 10^4 within-cluster batches")
    assert ok


def test_minibatch_frailty_score_vanishes():
    rng = make_rng(105)
    alpha, s = 1.0, 10
    sizes = [10, 100, 1000]
    means = []
    for n in sizes:
        vals = []
        for _ in range(400):
            ds, f, u = _uncensored_cluster(rng, n, alpha)
            v = np.array([math.log(u)])
            batch = rng.choice(n, size=min(s, n), replace=False)
            _, _, U_v = minibatch_scores(ds, batch, with_frailty(ds, f, v), FrailtyState(v, alpha), np.array([n]))
            vals.append(abs(U_v[0]))
        means.append(float(np.mean(vals)))
    slope = float(np.polyfit(np.log(sizes), np.log(means), 1)[0])
    ok = slope <= -0.8 and means[0] > means[1] > means[2]
    report("minibatch frailty-score decay", ok, f"mean |U_v| {means}, log-log slope {slope:.3f}")
    assert ok


def test_metrics_oracles():
    checks = []
    def eq(a, b):  # exact up to one rounding
        return a is not None and abs(a - b) <= 1e-15

    km = censoring_km([1, 2, 3], [0, 1, 0])
    checks += [eq(km(1.0), 2 / 3), km(3.0) == 0.0, np.all(censoring_km([1, 2], [1, 1])([0, 1, 5]) == 1.0)]
    t4 = np.array([1.0, 2.0, 3.0, 4.0])
    checks += [brier_score(t4, np.ones(4), np.full(4, 0.5), 2.0) == 0.25,
               brier_score(t4, np.ones(4), (t4 > 2.5).astype(float), 2.5) == 0.0,
               abs(brier_score(t4, [1, 0, 1, 0], [0.2, 0.5, 0.7, 0.9], 2.5) - 0.0475) < 1e-15]
    g = np.linspace(0, 3, 100)
    checks += [eq(ibs(g, np.full(100, 0.3)), 0.3), abs(ibs(g, g / 3) - 0.5) < 1e-4]
    checks += [c_harrell([1, 2, 3], [1, 1, 1], [3, 2, 1]) == 1.0, c_harrell([1, 2, 3], [1, 1, 1], [1, 1, 1]) == 0.5,
               eq(c_harrell([1, 2, 3], [1, 1, 1], [2, 3, 1]), 2 / 3)]
    c = clustered_cindex([1.0, 3, 2, 4], [1, 1, 1, 0], [0, 0, 1, 1], [1.0, 0, 0, 1], [1.5, 0.5, -0.5, 0.5])
    checks += [eq(c.c_within, 0.5), eq(c.c_between, 0.625), eq(c.c_overall, 3.5 / 6)]
    one = clustered_cindex([1, 2, 3], [1, 1, 1], [0, 0, 0], [2, 3, 1], [2, 3, 1])
    checks += [one.c_between is None, one.c_overall == one.c_within]
    hand_ok = all(bool(x) for x in checks)

    rng = np.random.default_rng(106)
    inv_ok = acc_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 40))
        time = np.round(rng.exponential(size=n), 1) + 0.1
        status = rng.integers(0, 2, n)
        status[0] = 1
        eta_m = np.round(rng.normal(size=n), 1)
        eta = np.round(eta_m + rng.normal(size=n), 1)  # on a 0.1 grid so ties are exact
        group = rng.integers(0, 4, n)
        a = clustered_cindex(time, status, group, eta_m, eta, 4)
        b = clustered_cindex(time, status, group, np.exp(2 * eta_m) - 7, np.arctan(eta), 4)
        inv_ok &= (a.c_within, a.c_between, a.c_overall) == (b.c_within, b.c_between, b.c_overall)
        if pairs_bruteforce(time, status, eta)[1]:
            inv_ok &= c_harrell(time, status, eta) == c_harrell(time, status, np.exp(eta))
        _, wn, _, bn = pairs_bruteforce(time, status, eta, group)
        acc_ok &= a.n_total == a.n_within + a.n_between and (a.n_within, a.n_between) == (wn, bn)
        w = within_mean_bruteforce(time, status, eta_m, group)
        acc_ok &= (w is None and a.c_within is None) or abs(w - a.c_within) < 1e-14
    ok = hand_ok and inv_ok and acc_ok
    report("metrics oracles", ok, f"hand examples {hand_ok}, invariance {inv_ok}, pair accounting {acc_ok}")
    assert ok


# ---------------------------------------------------------------------------
# desk-scale statistical reproduction
# ---------------------------------------------------------------------------

_cache = {}


def replicate_rows(alpha, kinds):
    key = (alpha, tuple(kinds))
    if key not in _cache:
        spec = ExperimentSpec(alphas=[alpha], censorings=[0.15], kinds=list(kinds), replicates=REPLICATES,
                              master_seed=MASTER_SEED)
        rows = []
        for rep in range(REPLICATES):
            rs, _ = run_replicate(spec, alpha, 0.15, rep)
            assert not any(r.get("error") for r in rs), rs
            rows.append({r["kind"]: r for r in rs})
        _cache[key] = rows
    return _cache[key]


def test_alpha1_estimates():
    rows = replicate_rows(1.0, ("fm", "dnn_fm"))
    fm = np.array([r["fm"]["alpha_hat"] for r in rows])
    dnn = np.array([r["dnn_fm"]["alpha_hat"] for r in rows])
    ok = 0.85 <= dnn.mean() <= 1.15 and fm.mean() < dnn.mean()
    print("\nDNN-FM alpha_hat", np.round(dnn, 3), "\nFM alpha_hat    ", np.round(fm, 3))
    report("alpha=1 trend", ok, f"DNN-FM mean {dnn.mean():.3f} (sd {dnn.std(ddof=1):.3f}), "
           f"FM mean {fm.mean():.3f} (sd {fm.std(ddof=1):.3f}); "
           f"DNN-FM in [0.85, 1.15] in {int(np.sum((dnn >= 0.85) & (dnn <= 1.15)))}/10")
    assert ok


def test_alpha2_cindex_ordering():
    rows = replicate_rows(2.0, ("cox", "dnn_cox", "fm", "dnn_fm"))
    c = {k: np.array([r[k]["c_overall"] for r in rows]) for k in ("cox", "dnn_cox", "fm", "dnn_fm")}
    hits = int(np.sum((c["dnn_fm"] > c["fm"]) & (c["fm"] > c["dnn_cox"]) & (c["dnn_cox"] > c["cox"])))
    print("\n" + "\n".join(f"{k:8s} C {np.round(v, 3)}" for k, v in c.items()))
    report("alpha=2 C-index ordering", hits >= 8, f"{hits}/10 replicates; means "
           + ", ".join(f"{k} {v.mean():.3f}" for k, v in c.items()))
    assert hits >= 8


def test_alpha2_ibs():
    rows = replicate_rows(2.0, ("cox", "dnn_cox", "fm", "dnn_fm"))
    b = {k: np.array([r[k]["ibs"] for r in rows]) for k in ("cox", "dnn_cox", "fm", "dnn_fm")}
    hits = int(np.sum(b["dnn_fm"] < b["fm"]))
    print("\n" + "\n".join(f"{k:8s} IBS {np.round(v, 4)}" for k, v in b.items()))
    report("alpha=2 IBS DNN-FM < FM", hits >= 8, f"{hits}/10 replicates; means "
           + ", ".join(f"{k} {v.mean():.4f}" for k, v in b.items()))
    assert hits >= 8


def test_alpha0_sanity():
    rows = replicate_rows(0.0, ("fm", "dnn_fm"))
    fm = np.array([r["fm"]["alpha_hat"] for r in rows])
    dnn = np.array([r["dnn_fm"]["alpha_hat"] for r in rows])
    ok = fm.mean() < 0.05 and dnn.mean() < 0.05
    report("alpha=0 sanity", ok, f"FM mean {fm.mean():.4f}, DNN-FM mean {dnn.mean():.4f}")
    assert ok
