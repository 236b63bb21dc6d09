"""Loss kernels and their exact gradients.

Conventions
-----------
``eta`` is always the full per-record log-risk, i.e. network output plus the
record's cluster log-frailty when a frailty model is involved. Gradients with
respect to ``v`` are total derivatives through ``eta = eta_m + v[cluster]``.

The per-cluster frailty contribution to the profiled h-likelihood,

    G(v, alpha, d) = (v - e^v)/alpha - log(alpha)/alpha - lgamma(1/alpha) - a(alpha, d),

is evaluated in the rearranged form

    G = r (v - e^v + 1) - log1p(d / r) / 2 + R(d + r) - R(r),   r = 1/alpha,

where R is the Stirling remainder of log-gamma. Both forms are equal; the
second avoids cancelling O(r log r) terms as alpha -> 0.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CensoredRecordInBatch, NonPositiveAlpha, UnknownClusterSize
from .special import digamma_diff, lgamma, stirling_remainder


class NoEventsWarning(UserWarning):
    pass


@dataclass
class FrailtyState:
    v: np.ndarray
    alpha: float

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.alpha = float(self.alpha)
        _check_alpha(self.alpha)

    @property
    def u(self):
        return np.exp(self.v)


@dataclass(frozen=True)
class LossBreakdown:
    partial_term: float
    gamma_term: float
    correction_term: float
    total: float


def _check_alpha(alpha):
    if not np.all(np.asarray(alpha) > 0):
        raise NonPositiveAlpha(f"frailty variance must be positive, got {alpha}")


def with_frailty(dataset, eta_m, v):
    """eta = eta_m + v[cluster]."""
    return np.asarray(eta_m, dtype=np.float64) + np.asarray(v, dtype=np.float64)[dataset.cluster]


# ---------------------------------------------------------------------------
# Breslow partial likelihood
# ---------------------------------------------------------------------------

def risk_log_sums(dataset, eta):
    """log sum_{R_(k)} exp(eta) for every distinct event time."""
    risk = dataset.risk
    return kernels.risk_logsumexp(np.asarray(eta, dtype=np.float64)[risk.order], risk.starts)


def _partial(dataset, eta, with_grad=True):
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (dataset.N,):
        raise ValueError(f"eta has shape {eta.shape}, expected ({dataset.N},)")
    risk = dataset.risk
    if risk.K == 0:
        warnings.warn("no events: partial likelihood is identically 0", NoEventsWarning, stacklevel=3)
        return 0.0, (np.zeros(dataset.N) if with_grad else None)
    log_s = risk_log_sums(dataset, eta)
    value = float(eta[dataset.status == 1].sum() - risk.event_counts @ log_s)
    if not with_grad:
        return value, None
    # d/d eta_r = delta_r - exp(eta_r) * Lambda0(y_r), Lambda0 the Breslow estimate;
    # shifting by max(eta) keeps both factors finite.
    c = eta.max()
    inc = np.concatenate(([0.0], np.cumsum(risk.event_counts * np.exp(c - log_s))))
    grad = dataset.status - np.exp(eta - c) * inc[risk.n_events_before]
    return value, grad


def breslow_loglik(dataset, eta):
    """sum_events eta - sum_k d_(k) log sum_{R_(k)} exp(eta)."""
    return _partial(dataset, eta, with_grad=False)[0]


def breslow_grad(dataset, eta):
    return _partial(dataset, eta)[1]


# ---------------------------------------------------------------------------
# Gamma frailty terms
# ---------------------------------------------------------------------------

def a_correction(alpha, d_plus):
    """(d + 1/alpha)(log(d + 1/alpha) - 1) - lgamma(d + 1/alpha)."""
    _check_alpha(alpha)
    s = np.asarray(d_plus, dtype=np.float64) + 1.0 / np.asarray(alpha, dtype=np.float64)
    out = s * (np.log(s) - 1.0) - lgamma(s)
    return float(out) if np.ndim(out) == 0 else out


def gamma_log_density_terms(v, alpha):
    """(v - e^v)/alpha - log(alpha)/alpha - lgamma(1/alpha), per cluster."""
    _check_alpha(alpha)
    v = np.asarray(v, dtype=np.float64)
    r = 1.0 / alpha
    return (v - np.exp(v)) * r + r * np.log(r) - lgamma(np.full(v.shape, r))


def frailty_terms(v, alpha, d_plus):
    """G(v, alpha, d) per cluster (gamma log-density minus the correction a)."""
    _check_alpha(alpha)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d_plus, dtype=np.float64)
    r = 1.0 / alpha
    return (r * (v - np.expm1(v)) - 0.5 * np.log1p(d / r)
            + stirling_remainder(d + r) - stirling_remainder(np.full(d.shape, r)))


def frailty_terms_dv(v, alpha):
    return (1.0 - np.exp(np.asarray(v, dtype=np.float64))) / alpha


def frailty_terms_dalpha(v, alpha, d_plus):
    """dG/dalpha per cluster."""
    _check_alpha(alpha)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d_plus, dtype=np.float64)
    r = 1.0 / alpha
    bracket = (np.expm1(v) - v) + np.log1p(d / r) - digamma_diff(np.full(d.shape, r), d)
    return bracket * r * r


# ---------------------------------------------------------------------------
# Profiled and full h-likelihood
# ---------------------------------------------------------------------------

def _profiled(dataset, eta, frailty, with_grad):
    v = frailty.v
    if v.shape != (dataset.n_clusters,):
        raise ValueError(f"v has shape {v.shape}, expected ({dataset.n_clusters},)")
    d = dataset.delta_plus
    partial, g_eta = _partial(dataset, eta, with_grad)
    gamma_term = float(gamma_log_density_terms(v, frailty.alpha).sum())
    correction = -float(np.sum(a_correction(frailty.alpha, d)))
    total = partial + float(frailty_terms(v, frailty.alpha, d).sum())
    loss = LossBreakdown(partial, gamma_term, correction, total)
    if not with_grad:
        return loss, None
    g_v = np.bincount(dataset.cluster, weights=g_eta, minlength=dataset.n_clusters)
    g_v = g_v + frailty_terms_dv(v, frailty.alpha)
    g_alpha = float(frailty_terms_dalpha(v, frailty.alpha, d).sum())
    return loss, (g_eta, g_v, g_alpha)


def profiled_hlik(dataset, eta, frailty):
    """h_p = partial term + gamma terms - sum_i a(alpha, delta_i+), as a LossBreakdown.

    Event counts delta_i+ come from ``dataset`` itself, so pass the training split.
    """
    return _profiled(dataset, eta, frailty, with_grad=False)[0]


def grad_profiled_hlik(dataset, eta, frailty):
    """(d h_p / d eta per record, d h_p / d v per cluster, d h_p / d alpha)."""
    return _profiled(dataset, eta, frailty, with_grad=True)[1]


def profiled_hlik_and_grad(dataset, eta, frailty):
    return _profiled(dataset, eta, frailty, with_grad=True)


def full_hlik(dataset, eta, frailty, baseline):
    """Unprofiled h-likelihood for a given baseline hazard.

    ``baseline`` must provide ``hazard(t)`` and ``cumulative(t)``; for a
    step-function baseline the hazard at an event time is its jump there.
    """
    eta = np.asarray(eta, dtype=np.float64)
    ev = dataset.status == 1
    log_haz = np.zeros(dataset.N)
    if ev.any():
        log_haz[ev] = np.log(baseline.hazard(dataset.time[ev]))
    cond = float(np.sum(dataset.status * (log_haz + eta)) - np.sum(baseline.cumulative(dataset.time) * np.exp(eta)))
    return cond + float(frailty_terms(frailty.v, frailty.alpha, dataset.delta_plus).sum())


# ---------------------------------------------------------------------------
# Mini-batch profiled h-likelihood
# ---------------------------------------------------------------------------

def _batch_setup(dataset, batch, cluster_sizes):
    batch = np.asarray(batch, dtype=np.int64)
    if np.any(dataset.status[batch] != 1):
        raise CensoredRecordInBatch("mini-batch h-likelihood is defined for uncensored records only")
    sizes = dataset.cluster_sizes if cluster_sizes is None else np.asarray(cluster_sizes)
    if sizes.shape != (dataset.n_clusters,):
        raise UnknownClusterSize("cluster_sizes must give n_i for every cluster")
    cl = dataset.cluster[batch]
    n_i = sizes[cl].astype(np.float64)
    if np.any(n_i < 1):
        raise UnknownClusterSize("cluster size unknown (0) for a batch record")
    return batch, cl, n_i


def _batch_partial(times, eta_b, with_grad):
    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    starts = np.searchsorted(t_sorted, t_sorted, side="left")
    log_s_sorted = kernels.risk_logsumexp(eta_b[order], starts)
    value = float(eta_b.sum() - log_s_sorted.sum())
    if not with_grad:
        return value, None
    # each batch record is its own event: record r collects exp(eta_r - log S_j)
    # from every event j whose risk set contains r
    c = eta_b.max()
    w = np.exp(c - log_s_sorted)
    inc = np.cumsum(w)
    n_before = np.searchsorted(t_sorted, times, side="right")
    grad = 1.0 - np.exp(eta_b - c) * inc[n_before - 1]
    return value, grad


def minibatch_hlik(dataset, batch, eta, frailty, cluster_sizes=None):
    """Mini-batch profiled h-likelihood over the records ``batch`` (indices into ``dataset``).

    Risk sets are formed within the batch. Each record carries 1/n_i of its
    cluster's frailty term with a(alpha, n_i), i.e. every record is an event.
    """
    batch, cl, n_i = _batch_setup(dataset, batch, cluster_sizes)
    eta_b = np.asarray(eta, dtype=np.float64)[batch]
    partial, _ = _batch_partial(dataset.time[batch], eta_b, with_grad=False)
    G = frailty_terms(frailty.v[cl], frailty.alpha, n_i)
    return partial + float(np.sum(G / n_i))


def minibatch_scores(dataset, batch, eta, frailty, cluster_sizes=None):
    """Gradients of :func:`minibatch_hlik`.

    Returns ``(g_eta, U_alpha, U_v)``: ``g_eta`` is per record of ``dataset``
    (zero outside the batch) for chaining into the network; ``U_v`` is per
    cluster and includes the path through eta.
    """
    batch, cl, n_i = _batch_setup(dataset, batch, cluster_sizes)
    eta_b = np.asarray(eta, dtype=np.float64)[batch]
    _, g_b = _batch_partial(dataset.time[batch], eta_b, with_grad=True)
    g_eta = np.zeros(dataset.N)
    np.add.at(g_eta, batch, g_b)
    v_b = frailty.v[cl]
    U_alpha = float(np.sum(frailty_terms_dalpha(v_b, frailty.alpha, n_i) / n_i))
    U_v = np.bincount(cl, weights=g_b + frailty_terms_dv(v_b, frailty.alpha) / n_i, minlength=dataset.n_clusters)
    return g_eta, U_alpha, U_v
