"""Alternating h-likelihood training for frailty models.

Each outer iteration

1. trains the predictor and log-frailties v jointly for a fixed alpha,
2. rescales the frailties so that mean(exp(v)) == 1, and
3. maximises the profiled h-likelihood over alpha alone with v held fixed,

until alpha moves by less than ``outer_tol``. Neural predictors are trained by
AdamW with early stopping on the validation loss; linear predictors are
optimised to convergence with L-BFGS. DNN-Cox is the same inner loop with no
frailties and no outer loop.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import NoEvents, NonFiniteLoss
from .likelihood import (
    FrailtyState,
    _partial,
    frailty_terms,
    frailty_terms_dalpha,
    minibatch_scores,
    profiled_hlik,
    profiled_hlik_and_grad,
    risk_log_sums,
    with_frailty,
)
from .model import FittedModel, estimate_baseline
from .nn import AdamWState, Architecture, MlpParams, adamw_step, backward, bump, forward, init_params, predict

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    hidden: tuple = (10, 10, 10)
    activation: str = "relu"
    lr: float = 0.01
    weight_decay: float = 0.0
    max_epochs: int = 1000
    patience: int = 10
    outer_tol: float = 1e-3
    max_outer: int = 20
    alpha_lo: float = 1e-6
    alpha_hi: float = 100.0
    alpha_init: float = 1.0
    seed: int = 0
    batch_size: int = None  # None = full batch
    inner_solver: str = None  # None = "adamw" for networks, "lbfgs" for linear predictors
    val_loss: str = "hp"  # "hp" or "partial"
    polish_v: bool = True
    alpha_step: str = "profile"  # "profile" or "fixed_v"
    accelerate: bool = True  # Aitken extrapolation, fixed_v steps only
    lbfgs_max_iter: int = 2000

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not (0 < self.alpha_lo < self.alpha_hi):
            raise ValueError("need 0 < alpha_lo < alpha_hi")
        if self.outer_tol <= 0 or self.lr <= 0:
            raise ValueError("tolerances and learning rate must be positive")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainTrace:
    epochs: list = field(default_factory=list)  # (outer, epoch, train_loss, val_loss)
    alphas: list = field(default_factory=list)
    shifts: list = field(default_factory=list)
    boundary_hits: list = field(default_factory=list)
    outer_losses: list = field(default_factory=list)
    extrapolations: list = field(default_factory=list)  # (outer, alpha_extrapolated)
    converged: bool = False
    monotone: bool = True

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["outer", "epoch", "train_loss", "val_loss"])
            for row in self.epochs:
                w.writerow([row[0], row[1], repr(row[2]), "" if row[3] is None else repr(row[3])])

    def summary(self):
        return {
            "converged": self.converged,
            "alphas": self.alphas,
            "shifts": self.shifts,
            "boundary_hits": self.boundary_hits,
            "outer_losses": self.outer_losses,
            "extrapolations": self.extrapolations,
            "monotone": self.monotone,
            "epochs": len(self.epochs),
        }


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def canonical_order(dataset):
    """Permutation sorting records by (cluster, time, status, covariates).

    Fitting on the canonically ordered data makes every floating-point
    reduction independent of the input file's row order.
    """
    keys = [dataset.x[:, k] for k in range(dataset.p - 1, -1, -1)]
    return np.lexsort(keys + [dataset.status, dataset.time, dataset.cluster])


def adjust_frailties(v):
    """Shift v so that mean(exp(v)) == 1; returns (v_adjusted, log_ubar)."""
    v = np.asarray(v, dtype=np.float64)
    m = v.max()
    log_ubar = m + math.log(np.mean(np.exp(v - m)))
    return v - log_ubar, log_ubar


def _loss(dataset, eta_m, v, alpha):
    if v is None:
        return -_partial(dataset, eta_m, with_grad=False)[0]
    return -profiled_hlik(dataset, with_frailty(dataset, eta_m, v), FrailtyState(v, alpha)).total


def _val_loss(val, eta_m, v, alpha, mode):
    if mode == "hp" or v is None:
        return _loss(val, eta_m, v, alpha)
    if mode != "partial":
        raise ValueError(f"unknown validation loss {mode!r}")
    return -_partial(val, with_frailty(val, eta_m, v), with_grad=False)[0]


def _loss_and_grads(dataset, eta_m, v, alpha):
    """-h_p (or -partial loglik when v is None) and its gradients in eta and v."""
    if v is None:
        val, g = _partial(dataset, eta_m, with_grad=True)
        return -val, -g, None
    loss, (g_eta, g_v, _) = profiled_hlik_and_grad(dataset, with_frailty(dataset, eta_m, v), FrailtyState(v, alpha))
    return -loss.total, -g_eta, -g_v


def profile_frailties(train, eta_m, v, alpha, tol=1e-10, max_iter=500):
    """Maximise h_p over v with the network fixed.

    Alternates the Breslow baseline and the closed-form frailty predictor
    (each cycle never decreases h_p) until v stops moving.
    """
    v = np.asarray(v, dtype=np.float64).copy()
    eta_m = np.asarray(eta_m, dtype=np.float64)
    risk = train.risk
    r = 1.0 / alpha
    num = train.delta_plus + r
    exp_m = np.exp(eta_m)
    for _ in range(max_iter):
        jumps = risk.event_counts * np.exp(-risk_log_sums(train, with_frailty(train, eta_m, v)))
        cum = np.concatenate(([0.0], np.cumsum(jumps)))[risk.n_events_before]
        lam = np.bincount(train.cluster, weights=cum * exp_m, minlength=train.n_clusters)
        v_new = np.log(num / (lam + r))
        step = np.max(np.abs(v_new - v))
        v = v_new
        if step < tol:
            break
    return v


def _minibatches(train, rng, size):
    batches = []
    for c in rng.permutation(train.n_clusters):
        idx = rng.permutation(np.flatnonzero(train.cluster == c))
        batches += [idx[i:i + size] for i in range(0, idx.size, size)]
    return batches


def _adamw_inner(train, val, params, v, alpha, config, trace, outer):
    arrays = params.arrays()
    decay = [True] * len(arrays)
    if v is not None:
        v = v.copy()
        arrays = arrays + [v]
        decay = decay + [False]
    state = AdamWState.for_arrays(arrays, decay, lr=config.lr, weight_decay=config.weight_decay)
    has_val = val is not None and val.N > 0 and val.risk.K > 0
    rng = np.random.default_rng([config.seed, outer, 7919])
    sizes = train.cluster_sizes

    def snapshot():
        return params.copy(), (None if v is None else v.copy())

    def monitor():
        if not has_val:
            return _loss(train, predict(params, train.x), v, alpha)
        return _val_loss(val, predict(params, val.x), v, alpha, config.val_loss)

    best_loss = monitor()
    best = snapshot()
    wait = 0
    epochs = 0
    for epoch in range(config.max_epochs):
        if config.batch_size:
            frailty = FrailtyState(v, alpha) if v is not None else None
            for batch in _minibatches(train, rng, config.batch_size):
                sub = train.x[batch]
                eta_b, tape = forward(params, sub)
                eta_full = np.zeros(train.N)
                eta_full[batch] = eta_b + (v[train.cluster[batch]] if v is not None else 0.0)
                fr = frailty if frailty is not None else FrailtyState(np.zeros(train.n_clusters), 1.0)
                g_eta, _, U_v = minibatch_scores(train, batch, eta_full, fr, sizes)
                grads, _ = backward(tape, -g_eta[batch])
                if v is not None:
                    grads = grads + [-U_v]
                adamw_step(state, arrays, grads)
                bump(params)
            train_loss = _loss(train, predict(params, train.x), v, alpha)
        else:
            eta_m, tape = forward(params, train.x)
            train_loss, g_eta, g_v = _loss_and_grads(train, eta_m, v, alpha)
            grads, _ = backward(tape, g_eta)
            if v is not None:
                grads = grads + [g_v]
            adamw_step(state, arrays, grads)
            bump(params)
        epochs += 1
        cur = monitor()
        if not (np.isfinite(train_loss) and np.isfinite(cur)):
            raise NonFiniteLoss(f"non-finite loss at outer {outer}, epoch {epoch}", trace=trace)
        trace.epochs.append((outer, epoch, float(train_loss), float(cur) if has_val else None))
        if cur < best_loss:
            best_loss, best, wait = cur, snapshot(), 0
        else:
            wait += 1
            if has_val and wait >= config.patience:
                break
    params_best, v_best = best
    if v_best is not None and config.polish_v:
        v_best = profile_frailties(train, predict(params_best, train.x), v_best, alpha)
    return params_best, v_best, epochs


def _lbfgs_inner(train, params, v, alpha, config, trace, outer):
    """Full optimisation of a linear predictor (and v) for fixed alpha."""
    X = train.x
    p = X.shape[1]

    def unpack(z):
        return z[:p], (None if v is None else z[p:])

    def fun(z):
        beta, vv = unpack(z)
        loss, g_eta, g_v = _loss_and_grads(train, X @ beta, vv, alpha)
        g = X.T @ g_eta
        return loss, (g if vv is None else np.concatenate([g, g_v]))

    z0 = params.beta.copy() if v is None else np.concatenate([params.beta, v])
    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B",
                            options={"maxiter": config.lbfgs_max_iter, "gtol": 1e-9, "ftol": 1e-15})
    beta, vv = unpack(res.x)
    out = MlpParams(params.architecture, [], [], beta.copy())
    trace.epochs.append((outer, int(res.nit), float(res.fun), None))
    return out, (None if vv is None else vv.copy()), int(res.nit)


def inner_loop(train, val, params, v, alpha, config, trace=None, outer=0):
    """Optimise (network, v) at fixed alpha; returns (params, v, epochs_run).

    ``v=None`` trains a model without frailties. The returned parameters are
    the best seen on the validation loss (or the training loss when there is
    no validation data with events).
    """
    trace = trace if trace is not None else TrainTrace()
    solver = config.inner_solver or ("lbfgs" if params.architecture.is_linear else "adamw")
    if config.max_epochs <= 0:
        return params.copy(), (None if v is None else v.copy()), 0
    if solver == "lbfgs":
        if not params.architecture.is_linear:
            raise ValueError("the L-BFGS inner solver supports linear predictors only")
        return _lbfgs_inner(train, params, v, alpha, config, trace, outer)
    return _adamw_inner(train, val, params.copy(), v, alpha, config, trace, outer)


def alpha_objective(v, d_plus, alpha):
    """-(gamma + correction terms) of h_p as a function of alpha (v fixed)."""
    return -float(frailty_terms(v, alpha, d_plus).sum())


def alpha_objective_grad(v, d_plus, alpha):
    return -float(frailty_terms_dalpha(v, alpha, d_plus).sum())


def aitken(a0, a1, a2, lo, hi):
    """Safeguarded Aitken extrapolation of a monotone, contracting alpha sequence.

    Returns None when the three iterates do not look linearly convergent. The
    jump is limited to a factor of 10 in alpha and clipped to [lo, hi].
    """
    d1, d2 = a1 - a0, a2 - a1
    if d1 * d2 <= 0 or abs(d2) >= abs(d1):
        return None
    r = d2 / d1
    ext = a2 + d2 * r / (1.0 - r)
    return float(min(max(ext, a2 / 10.0, lo), a2 * 10.0, hi))


def outer_alpha_step(train, v, config=None, grid_size=201):
    """argmin over alpha of -h_p with v fixed; returns (alpha_hat, boundary_hit).

    A log-spaced grid over [alpha_lo, alpha_hi] brackets the minimum, then the
    root of the analytic derivative in log alpha inside that bracket is polished
    with Brent's method.
    """
    config = config or TrainConfig()
    d = train.delta_plus
    v = np.asarray(v, dtype=np.float64)
    lo, hi = math.log(config.alpha_lo), math.log(config.alpha_hi)
    grid = np.linspace(lo, hi, grid_size)
    f = np.array([alpha_objective(v, d, math.exp(s)) for s in grid])
    i = int(np.argmin(f))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]

    def dfds(s):
        al = math.exp(s)
        return alpha_objective_grad(v, d, al) * al

    fa, fb = dfds(a), dfds(b)
    if np.ptp(f) <= 1e-12 * (1.0 + abs(f[i])):
        s_hat = lo  # flat objective: frailty variance not identified
    elif i == 0 and fa >= 0:
        s_hat = lo
    elif i == grid_size - 1 and fb <= 0:
        s_hat = hi
    elif fa < 0 < fb:
        s_hat = optimize.brentq(dfds, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    else:
        res = optimize.minimize_scalar(lambda s: alpha_objective(v, d, math.exp(s)), bounds=(a, b),
                                       method="bounded", options={"xatol": 1e-10})
        s_hat = float(res.x)
        if alpha_objective(v, d, math.exp(s_hat)) > f[i]:
            s_hat = grid[i]
    boundary = bool(s_hat - lo < 1e-6 or hi - s_hat < 1e-6)
    return math.exp(s_hat), boundary


def profile_alpha_step(train, eta_m, v, config=None, grid_size=41):
    """argmax over alpha of h_p(v_hat(alpha), alpha) with the network fixed.

    ``v_hat(alpha)`` is the conditional optimum from :func:`profile_frailties`.
    Because d h_p / d v = 0 there, the total alpha-derivative is the partial
    one, and its root is the fixed point that repeated
    :func:`outer_alpha_step` / frailty updates would converge to.
    Returns ``(alpha_hat, v_hat, boundary_hit)``.
    """
    config = config or TrainConfig()
    d = train.delta_plus
    lo, hi = math.log(config.alpha_lo), math.log(config.alpha_hi)
    grid = np.linspace(lo, hi, grid_size)
    vs, vals = [], []
    vv = np.asarray(v, dtype=np.float64)
    for s_ in grid:
        al = math.exp(s_)
        vv = profile_frailties(train, eta_m, vv, al)
        vs.append(vv)
        vals.append(profiled_hlik(train, with_frailty(train, eta_m, vv), FrailtyState(vv, al)).total)
    i = int(np.argmax(vals))
    cache = {}

    def score(s_):
        al = math.exp(s_)
        j = int(np.argmin(np.abs(grid - s_)))
        w = profile_frailties(train, eta_m, vs[j], al)
        cache[s_] = w
        return float(frailty_terms_dalpha(w, al, d).sum()) * al

    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
    fa, fb = score(a), score(b)
    if fa > 0 > fb:
        s_hat = optimize.brentq(score, a, b, xtol=1e-10)
        v_hat = cache.get(s_hat)
        if v_hat is None:
            score(s_hat)
            v_hat = cache[s_hat]
    else:
        s_hat, v_hat = grid[i], vs[i]
    boundary = bool(s_hat - lo < 1e-6 or hi - s_hat < 1e-6)
    return math.exp(s_hat), v_hat, boundary


# ---------------------------------------------------------------------------
# fitters
# ---------------------------------------------------------------------------

def _prepare(train, val):
    if train.N == 0 or train.risk.K == 0:
        raise NoEvents("training split needs at least one event")
    train = train.subset(canonical_order(train))
    if val is not None and val.N:
        val = val.subset(canonical_order(val))
    return train, val


def fit_frailty(train, val, config, hidden):
    """Alternating h-likelihood fit; ``hidden=()`` gives the linear gamma frailty model."""
    train, val = _prepare(train, val)
    arch = Architecture(train.p, hidden, config.activation)
    params = init_params(arch, config.seed)
    v = np.zeros(train.n_clusters)
    alpha = config.alpha_init
    trace = TrainTrace()
    kind = "fm" if arch.is_linear else "dnn_fm"
    total_epochs = 0
    seq = [alpha]
    for outer in range(config.max_outer):
        params, v, ep = inner_loop(train, val, params, v, alpha, config, trace, outer)
        total_epochs += ep
        if config.alpha_step == "profile":
            new_alpha, v, hit = profile_alpha_step(train, predict(params, train.x), v, config)
            v, shift = adjust_frailties(v)
        elif config.alpha_step == "fixed_v":
            v, shift = adjust_frailties(v)
            new_alpha, hit = outer_alpha_step(train, v, config)
        else:
            raise ValueError(f"unknown alpha step {config.alpha_step!r}")
        loss = _loss(train, predict(params, train.x), v, new_alpha)
        trace.alphas.append(new_alpha)
        trace.shifts.append(shift)
        trace.boundary_hits.append(hit)
        trace.outer_losses.append(loss)
        log.info("%s outer %d: alpha %.6g -> %.6g, -h_p %.6f, epochs %d", kind, outer, alpha, new_alpha, loss, ep)
        done = abs(new_alpha - alpha) < config.outer_tol
        alpha = new_alpha
        if done or config.max_epochs <= 0:
            trace.converged = done
            break
        # the alternation converges linearly, slowly near alpha = 0
        seq.append(new_alpha)
        if config.accelerate and config.alpha_step == "fixed_v" and len(seq) == 3:
            ext = aitken(*seq, config.alpha_lo, config.alpha_hi)
            if ext is not None:
                alpha = ext
                trace.extrapolations.append((outer, ext))
                seq = [ext]
            else:
                seq = seq[1:]
    trace.monotone = trace.outer_losses[-1] <= trace.outer_losses[0] + 1e-9 * abs(trace.outer_losses[0])
    eta_m = predict(params, train.x)
    baseline = estimate_baseline(train, with_frailty(train, eta_m, v))
    meta = {
        "seed": config.seed,
        "epochs": total_epochs,
        "outer_iterations": len(trace.alphas),
        "converged": trace.converged,
        "neg_hp": trace.outer_losses[-1],
        "alpha_trace": trace.alphas,
        "boundary_hit": trace.boundary_hits[-1],
        "config": config.to_dict(),
    }
    model = FittedModel(kind, params, baseline, FrailtyState(v, alpha), train.cluster_labels, meta)
    return model, trace


def fit_dnn_fm(train, val=None, config=None):
    config = config or TrainConfig()
    return fit_frailty(train, val, config, config.hidden)


def fit_fm(train, val=None, config=None):
    config = config or TrainConfig()
    return fit_frailty(train, val, config, ())


def fit_dnn_cox(train, val=None, config=None):
    config = config or TrainConfig()
    train, val = _prepare(train, val)
    params = init_params(Architecture(train.p, config.hidden, config.activation), config.seed)
    trace = TrainTrace()
    params, _, epochs = inner_loop(train, val, params, None, None, config, trace, 0)
    eta_m = predict(params, train.x)
    loss = _loss(train, eta_m, None, None)
    trace.outer_losses.append(loss)
    trace.converged = True
    meta = {"seed": config.seed, "epochs": epochs, "converged": True, "neg_hp": loss, "config": config.to_dict()}
    return FittedModel("dnn_cox", params, estimate_baseline(train, eta_m), None, train.cluster_labels, meta), trace


def fit_model(kind, train, val=None, config=None):
    """Fit any of the four model kinds; returns (FittedModel, TrainTrace)."""
    from .model import fit_cox

    config = config or TrainConfig()
    if kind == "cox":
        return fit_cox(_prepare(train, val)[0], config), TrainTrace(converged=True)
    if kind == "dnn_cox":
        return fit_dnn_cox(train, val, config)
    if kind == "fm":
        return fit_fm(train, val, config)
    if kind == "dnn_fm":
        return fit_dnn_fm(train, val, config)
    raise ValueError(f"unknown model kind {kind!r}")
