"""Evaluation measures: IPCW Brier score, IBS and concordance indices.

The Brier score uses inverse-probability-of-censoring weights with the
censoring survival function estimated by Kaplan-Meier on the evaluation data.
For frailty models the predicted survival is conditional on the cluster's
predicted frailty.

Concordance is reported as Harrell's pooled C plus a within/between-cluster
decomposition. Within-cluster pairs are scored on the network output alone,
since a shared frailty cannot reorder records of the same cluster. Between
pairs use the full linear predictor. Score ties count 1/2 throughout.
"""

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import EmptyGrid, NoComparablePairs

GRID_POINTS = 100
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


# ---------------------------------------------------------------------------
# censoring distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CensoringKM:
    """Kaplan-Meier estimate of G(t) = P(C > t), right-continuous, G(0) = 1."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        vals = np.concatenate(([1.0], self.values))
        return vals[np.searchsorted(self.times, t, side="right")]


def censoring_km(time, status):
    """Kaplan-Meier on (y, 1 - delta).

    At a tied time, events are taken to happen first, so records failing at t
    are not at risk of being censored at t.
    """
    time = np.asarray(time, dtype=np.float64)
    status = np.asarray(status, dtype=np.int64)
    cens = status == 0
    if not cens.any():
        return CensoringKM(np.empty(0), np.empty(0))
    ct, n_cens = np.unique(time[cens], return_counts=True)
    sorted_t = np.sort(time)
    # at risk for censoring at t: y > t, plus the censored records with y == t
    n_after = sorted_t.size - np.searchsorted(sorted_t, ct, side="right")
    at_risk = n_after + n_cens
    return CensoringKM(ct, np.cumprod(1.0 - n_cens / at_risk))


# ---------------------------------------------------------------------------
# Brier score
# ---------------------------------------------------------------------------

def ipcw_weights(time, status, t, km):
    """Graf weights (1 - y(t)) delta / G(y) + y(t) / G(t); 0 where the needed G is 0."""
    time = np.asarray(time, dtype=np.float64)
    status = np.asarray(status, dtype=np.int64)
    alive = time > t
    g_y = km(time)
    g_t = float(km(t))
    w = np.zeros(time.size)
    died = ~alive & (status == 1) & (g_y > 0)
    w[died] = 1.0 / g_y[died]
    if g_t > 0:
        w[alive] = 1.0 / g_t
    return w


def brier_score(time, status, surv, t, km=None):
    """IPCW Brier score at time ``t``.

    ``surv`` holds the predicted S(t) of each record, or is a callable
    ``surv(t)`` returning that vector. The average is over all N records.
    """
    time = np.asarray(time, dtype=np.float64)
    status = np.asarray(status, dtype=np.int64)
    if t < 0:
        raise ValueError("t must be nonnegative")
    km = km if km is not None else censoring_km(time, status)
    s = np.asarray(surv(t) if callable(surv) else surv, dtype=np.float64)
    y_t = (time > t).astype(np.float64)
    w = ipcw_weights(time, status, t, km)
    return float(np.sum(w * (y_t - s) ** 2) / time.size)


def eval_grid(time, n_points=GRID_POINTS):
    """Equally spaced grid on [0, t_max], t_max the largest observed time."""
    time = np.asarray(time, dtype=np.float64)
    if time.size == 0:
        raise EmptyGrid("no records to build an evaluation grid")
    return np.linspace(0.0, float(time.max()), n_points)


def brier_curve(time, status, surv_matrix, grid, km=None):
    """BS(t) on ``grid``; ``surv_matrix`` is (N, len(grid))."""
    km = km if km is not None else censoring_km(time, status)
    surv_matrix = np.asarray(surv_matrix, dtype=np.float64)
    return np.array([brier_score(time, status, surv_matrix[:, k], t, km) for k, t in enumerate(grid)])


def ibs(grid, curve, t_max=None):
    """Trapezoidal integral of the Brier curve over [0, t_max], divided by t_max."""
    grid = np.asarray(grid, dtype=np.float64)
    curve = np.asarray(curve, dtype=np.float64)
    if grid.size < 2 or grid.shape != curve.shape:
        raise EmptyGrid("need a grid of at least two points matching the curve")
    t_max = float(grid[-1]) if t_max is None else float(t_max)
    if t_max <= 0:
        raise EmptyGrid("t_max must be positive")
    return float(_trapezoid(curve, grid) / t_max)


# ---------------------------------------------------------------------------
# concordance
# ---------------------------------------------------------------------------

def c_harrell(time, status, eta):
    """Harrell's C: pairs with an event at the strictly earlier time, ties in eta count 1/2."""
    time = np.asarray(time, dtype=np.float64)
    zeros = np.zeros(time.size, dtype=np.int64)
    conc, comp, _, _ = kernels.pair_counts(time, status, eta, zeros, 1)
    if comp[0] == 0:
        raise NoComparablePairs("no comparable pairs")
    return float(conc[0] / comp[0])


@dataclass(frozen=True)
class ClusteredCIndex:
    """Within/between/overall concordance; a component is None when it has no pairs."""

    c_within: float
    c_between: float
    c_overall: float
    n_within: int
    n_between: int
    n_total: int
    clusters_used: int


def clustered_cindex(time, status, cluster, eta_m, eta, n_clusters=None):
    """Within-, between- and overall-cluster C-indices.

    Parameters
    ----------
    time, status, cluster : array_like
        Evaluation records.
    eta_m : array_like
        Network output, used for within-cluster pairs.
    eta : array_like
        Network output plus predicted log-frailty, used for between pairs.

    Notes
    -----
    ``c_within`` is the unweighted mean over clusters of each cluster's own
    concordance, skipping clusters without a comparable pair. ``c_overall``
    mixes the two components with weights n_W/n_T and n_B/n_T.
    """
    time = np.asarray(time, dtype=np.float64)
    cluster = np.asarray(cluster, dtype=np.int64)
    n_clusters = int(cluster.max()) + 1 if n_clusters is None else int(n_clusters)
    wc, wn, _, _ = kernels.pair_counts(time, status, eta_m, cluster, n_clusters)
    _, _, bc, bn = kernels.pair_counts(time, status, eta, cluster, n_clusters)
    used = wn > 0
    n_w = int(wn.sum())
    n_b = int(bn)
    c_w = float(np.mean(wc[used] / wn[used])) if used.any() else None
    c_b = float(bc / bn) if bn > 0 else None
    n_t = n_w + n_b
    if n_t == 0:
        c_o = None
    else:
        c_o = (n_w * (c_w or 0.0) + n_b * (c_b or 0.0)) / n_t
    return ClusteredCIndex(c_w, c_b, c_o, n_w, n_b, n_t, int(used.sum()))


def c_clustered(dataset, model):
    """:func:`clustered_cindex` for a fitted model on ``dataset`` (cluster codes must match the fit)."""
    eta_m = model.risk_score(dataset.x)
    eta = eta_m + model.log_frailty(dataset.cluster)
    return clustered_cindex(dataset.time, dataset.status, dataset.cluster, eta_m, eta, dataset.n_clusters)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    grid: list
    brier: list
    ibs: float
    c_harrell: float
    c_within: float
    c_between: float
    c_overall: float
    n_within: int
    n_between: int
    n_total: int
    model_kind: str = None
    n_records: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def brier_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "brier"])
            for t, b in zip(self.grid, self.brier):
                w.writerow([repr(float(t)), repr(float(b))])


REPORT_SCHEMA = {
    "type": "object",
    "required": ["grid", "brier", "ibs", "c_harrell", "c_within", "c_between", "c_overall",
                 "n_within", "n_between", "n_total"],
    "properties": {
        "grid": {"type": "array", "items": {"type": "number"}},
        "brier": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "ibs": {"type": "number", "minimum": 0},
        "c_harrell": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "c_within": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "c_between": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "c_overall": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "n_within": {"type": "integer", "minimum": 0},
        "n_between": {"type": "integer", "minimum": 0},
        "n_total": {"type": "integer", "minimum": 0},
        "model_kind": {"type": ["string", "null"]},
        "n_records": {"type": "integer", "minimum": 0},
    },
}


def evaluate_predictions(time, status, cluster, eta_m, eta, surv_matrix, grid, kind=None, n_clusters=None):
    """Assemble an :class:`EvalReport` from predictions on an evaluation split."""
    km = censoring_km(time, status)
    curve = brier_curve(time, status, surv_matrix, grid, km)
    try:
        ch = c_harrell(time, status, eta)
    except NoComparablePairs:
        warnings.warn("no comparable pairs for Harrell's C", UserWarning, stacklevel=2)
        ch = None
    cc = clustered_cindex(time, status, cluster, eta_m, eta, n_clusters)
    return EvalReport(
        grid=[float(t) for t in grid], brier=[float(b) for b in curve], ibs=ibs(grid, curve),
        c_harrell=ch, c_within=cc.c_within, c_between=cc.c_between, c_overall=cc.c_overall,
        n_within=cc.n_within, n_between=cc.n_between, n_total=cc.n_total,
        model_kind=kind, n_records=int(np.size(time)),
    )


def evaluate(model, dataset, n_points=GRID_POINTS, strict=False, codes=None):
    """Brier curve, IBS and C-indices of ``model`` on ``dataset``.

    For frailty models predictions are conditional on each record's cluster
    frailty; unknown clusters fall back to frailty 1 unless ``strict``.
    ``codes`` maps records to the model's cluster codes and defaults to
    ``dataset.cluster`` (right when the dataset is a split of the training file).
    """
    from .model import survival_matrix

    codes = dataset.cluster if codes is None else np.asarray(codes, dtype=np.int64)
    grid = eval_grid(dataset.time, n_points)
    eta_m = model.risk_score(dataset.x)
    v = model.log_frailty(codes, strict)
    S = survival_matrix(model, dataset.x, grid, codes if model.has_frailty else None, strict)
    return evaluate_predictions(dataset.time, dataset.status, dataset.cluster, eta_m, eta_m + v, S, grid,
                                model.kind, dataset.n_clusters)


def validate_report(d):
    """Check a report dict against :data:`REPORT_SCHEMA`; raises ``ValueError``."""
    for key in REPORT_SCHEMA["required"]:
        if key not in d:
            raise ValueError(f"report lacks {key!r}")
    if len(d["grid"]) != len(d["brier"]):
        raise ValueError("grid and brier differ in length")
    if d["n_total"] != d["n_within"] + d["n_between"]:
        raise ValueError("pair counts do not add up")
    for key in ("c_harrell", "c_within", "c_between", "c_overall"):
        c = d[key]
        if c is not None and not (0.0 <= c <= 1.0 and math.isfinite(c)):
            raise ValueError(f"{key} out of range: {c}")
    if not all(b >= 0 for b in d["brier"]) or d["ibs"] < 0:
        raise ValueError("negative Brier score")
    return True
