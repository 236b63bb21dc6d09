"""Baseline hazards, frailty predictors, survival prediction and model persistence.

Also hosts the Newton fitter for the linear Cox model. The frailty fitters live
in :mod:`frailnet.trainer` because they run the alternating h-likelihood loop.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BaselineUndefinedAtTime, NoEvents, NonPositiveAlpha, UnknownCluster
from .likelihood import FrailtyState, breslow_loglik, risk_log_sums
from .nn import Architecture, MlpParams, predict

KINDS = ("cox", "dnn_cox", "fm", "dnn_fm")
FRAILTY_KINDS = ("fm", "dnn_fm")


class UnknownClusterWarning(UserWarning):
    pass


class NonConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BaselineHazard:
    """Right-continuous step-function cumulative hazard with jumps at ``times``.

    The cumulative hazard is 0 before the first jump and held constant after
    the last one.
    """

    times: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "increments", np.asarray(self.increments, dtype=np.float64))

    @property
    def cumulative_values(self):
        return np.cumsum(self.increments)

    def cumulative(self, t):
        t = np.asarray(t, dtype=np.float64)
        cum = np.concatenate(([0.0], self.cumulative_values))
        return cum[np.searchsorted(self.times, t, side="right")]

    def hazard(self, t):
        """Jump size at ``t``; only defined on the jump grid."""
        t = np.asarray(t, dtype=np.float64)
        k = np.searchsorted(self.times, t, side="left")
        k_safe = np.minimum(k, max(self.times.size - 1, 0))
        ok = (k < self.times.size) & (self.times[k_safe] == t) if self.times.size else np.zeros(t.shape, bool)
        if not np.all(ok):
            bad = np.atleast_1d(t)[~np.atleast_1d(ok)][0]
            raise BaselineUndefinedAtTime(f"step baseline has no jump at t={bad!r}")
        return self.increments[k_safe]

    def to_dict(self):
        return {"times": self.times.tolist(), "increments": self.increments.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["times"], dtype=np.float64), np.array(d["increments"], dtype=np.float64))


@dataclass(frozen=True)
class WeibullBaseline:
    """lambda0(t) = shape * scale * t^(shape-1); Lambda0(t) = scale * t^shape."""

    shape: float = 2.0
    scale: float = 1.0

    def hazard(self, t):
        return self.shape * self.scale * np.power(np.asarray(t, dtype=np.float64), self.shape - 1.0)

    def cumulative(self, t):
        return self.scale * np.power(np.asarray(t, dtype=np.float64), self.shape)


def estimate_baseline(dataset, eta):
    """Breslow plug-in: jump d_(k) / sum_{R_(k)} exp(eta) at each distinct event time."""
    risk = dataset.risk
    if risk.K == 0:
        raise NoEvents("cannot estimate a baseline hazard without events")
    log_s = risk_log_sums(dataset, eta)
    return BaselineHazard(risk.event_times.copy(), risk.event_counts * np.exp(-log_s))


def cluster_cumulative_hazard(dataset, eta_m, baseline):
    """Lambda_i+ = sum_j Lambda0(y_ij) exp(eta_m_ij) per cluster."""
    lam = baseline.cumulative(dataset.time) * np.exp(np.asarray(eta_m, dtype=np.float64))
    return np.bincount(dataset.cluster, weights=lam, minlength=dataset.n_clusters)


def frailty_bup(delta_plus, lambda_plus, alpha):
    """E(u_i | data) = (delta_i+ + 1/alpha) / (Lambda_i+ + 1/alpha)."""
    if not np.all(np.asarray(alpha) > 0):
        raise NonPositiveAlpha(f"frailty variance must be positive, got {alpha}")
    r = 1.0 / np.asarray(alpha, dtype=np.float64)
    return (np.asarray(delta_plus, dtype=np.float64) + r) / (np.asarray(lambda_plus, dtype=np.float64) + r)


@dataclass(eq=False)
class FittedModel:
    kind: str
    params: MlpParams
    baseline: BaselineHazard
    frailty: FrailtyState = None
    cluster_labels: tuple = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if (self.kind in FRAILTY_KINDS) != (self.frailty is not None):
            raise ValueError(f"kind {self.kind!r} {'requires' if self.kind in FRAILTY_KINDS else 'forbids'} frailties")

    @property
    def has_frailty(self):
        return self.frailty is not None

    def risk_score(self, x):
        """Network (or linear) log-risk without the frailty."""
        return predict(self.params, np.asarray(x, dtype=np.float64))

    def log_frailty(self, cluster, strict=False):
        """v-hat for each cluster code; 0 for non-frailty models and unknown clusters."""
        cluster = np.asarray(cluster, dtype=np.int64)
        if not self.has_frailty:
            return np.zeros(cluster.shape)
        v = self.frailty.v
        known = (cluster >= 0) & (cluster < v.size)
        if not np.all(known):
            if strict:
                raise UnknownCluster(f"no frailty estimate for cluster {np.atleast_1d(cluster)[~np.atleast_1d(known)][0]}")
            warnings.warn("unknown cluster: frailty 1 used", UnknownClusterWarning, stacklevel=2)
        return np.where(known, v[np.clip(cluster, 0, v.size - 1)], 0.0)

    def linear_predictor(self, x, cluster=None, strict=False):
        eta = self.risk_score(x)
        if cluster is not None:
            eta = eta + self.log_frailty(cluster, strict)
        return eta

    def to_dict(self):
        d = {
            "format": "frailnet-model",
            "version": 1,
            "kind": self.kind,
            "network": self.params.to_dict(),
            "baseline": self.baseline.to_dict(),
            "cluster_labels": list(self.cluster_labels) if self.cluster_labels is not None else None,
            "metadata": self.metadata,
        }
        if self.has_frailty:
            d["v"] = self.frailty.v.tolist()
            d["alpha"] = self.frailty.alpha
        return d

    @classmethod
    def from_dict(cls, d):
        frailty = FrailtyState(np.array(d["v"], dtype=np.float64), d["alpha"]) if "v" in d else None
        labels = tuple(d["cluster_labels"]) if d.get("cluster_labels") is not None else None
        return cls(d["kind"], MlpParams.from_dict(d["network"]), BaselineHazard.from_dict(d["baseline"]),
                   frailty, labels, d.get("metadata", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict_survival(model, x, t, cluster=None, strict=False):
    """exp(-Lambda0(t) * u * exp(NN(x))) with u = exp(v-hat) of ``cluster`` (1 if none).

    ``x`` may be one covariate vector or a matrix; ``t`` broadcasts against the
    records.
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    eta = model.linear_predictor(x, cluster, strict)
    return np.exp(-model.baseline.cumulative(t) * np.exp(eta))


def survival_matrix(model, x, times, cluster=None, strict=False):
    """(N, T) survival probabilities for every record at every time in ``times``."""
    eta = np.atleast_1d(model.linear_predictor(x, cluster, strict))
    cum = model.baseline.cumulative(np.asarray(times, dtype=np.float64))
    return np.exp(-np.outer(np.exp(eta), cum))


# ---------------------------------------------------------------------------
# Linear Cox model
# ---------------------------------------------------------------------------

@dataclass
class CoxResult:
    beta: np.ndarray
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool


def _cox_derivatives(dataset, beta):
    """Breslow log-likelihood, gradient and Hessian for eta = X beta (O(N p^2))."""
    X = dataset.x
    eta = X @ beta
    risk = dataset.risk
    order = risk.order
    c = eta.max()
    w = np.exp(eta[order] - c)
    Xs = X[order]
    s0 = np.cumsum(w[::-1])[::-1][risk.starts]
    s1 = np.cumsum((w[:, None] * Xs)[::-1], axis=0)[::-1][risk.starts]
    s2 = np.cumsum((w[:, None, None] * Xs[:, :, None] * Xs[:, None, :])[::-1], axis=0)[::-1][risk.starts]
    d = risk.event_counts
    ev = dataset.status == 1
    loglik = float(eta[ev].sum() - d @ (np.log(s0) + c))
    mean1 = s1 / s0[:, None]
    grad = X[ev].sum(axis=0) - d @ mean1
    hess = -(np.einsum("k,kij->ij", d / s0, s2) - np.einsum("k,ki,kj->ij", d, mean1, mean1))
    return loglik, grad, hess


def newton_cox(dataset, beta0=None, tol=1e-8, max_iter=100):
    """Maximise the Breslow partial likelihood of a linear predictor by damped Newton."""
    beta = np.zeros(dataset.p) if beta0 is None else np.array(beta0, dtype=np.float64)
    if dataset.risk.K == 0:
        return CoxResult(beta, 0.0, 0.0, 0, True)
    # constant covariates are unidentified; their score is 0 at 0, so hold them there
    free = np.ptp(dataset.x, axis=0) > 0 if dataset.N else np.zeros(dataset.p, bool)
    ll, g, H = _cox_derivatives(dataset, beta)
    g[~free] = 0.0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) < tol:
            return CoxResult(beta, ll, float(np.linalg.norm(g)), it - 1, True)
        step = np.zeros_like(beta)
        step[free] = np.linalg.lstsq(-H[np.ix_(free, free)], g[free], rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, g_new, H_new = _cox_derivatives(dataset, cand)
            g_new[~free] = 0.0
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll, g, H = cand, ll_new, g_new, H_new
    gn = float(np.linalg.norm(g))
    return CoxResult(beta, ll, gn, max_iter, gn < tol)


def fit_cox(dataset, config=None):
    """Linear Cox model via Newton; packages a FittedModel of kind ``cox``."""
    max_iter = getattr(config, "newton_max_iter", 100) if config is not None else 100
    res = newton_cox(dataset, max_iter=max_iter)
    if not res.converged:
        warnings.warn(f"Cox Newton stopped with gradient norm {res.grad_norm:.3g} (separation?)",
                      NonConvergenceWarning, stacklevel=2)
    params = MlpParams(Architecture(dataset.p, ()), [], [], res.beta.copy())
    baseline = estimate_baseline(dataset, dataset.x @ res.beta)
    meta = {
        "converged": bool(res.converged),
        "iterations": res.iterations,
        "loglik": res.loglik,
        "grad_norm": res.grad_norm,
        "neg_hp": -breslow_loglik(dataset, dataset.x @ res.beta),
    }
    return FittedModel("cox", params, baseline, None, dataset.cluster_labels, meta)


def fit_fm(dataset, config=None, validation=None):
    """Gamma frailty model with linear predictor (see :func:`frailnet.trainer.fit_fm`)."""
    from .trainer import fit_fm as _fit_fm
    return _fit_fm(dataset, validation, config)[0]
