"""Clustered survival data generator with gamma frailties and a Weibull baseline.

Random streams: a ``SimConfig.seed`` feeds ``numpy.random.SeedSequence``; the
dataset draws and the censoring-calibration pilot use two spawned children,
each driving a Philox (counter-based) bit generator. Replicates of an
experiment derive their seed from ``(master_seed, cell, replicate)`` via
:func:`replicate_seed`, so any replicate can be regenerated on its own.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import ClusteredDataset, SplitSpec
from .errors import BracketFailure


@dataclass(frozen=True)
class SimConfig:
    n_clusters: int = 1000
    cluster_size: int = 8
    rho: float = 0.5
    phi: float = 2.0
    alpha: float = 1.0
    censoring: float = 0.15
    seed: int = 0
    n_train: int = 4
    n_val: int = 2
    pilot_size: int = 100_000
    p: int = 5

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.phi <= 0:
            raise ValueError("phi must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not 0 < self.censoring < 1:
            raise ValueError("censoring rate must lie in (0, 1)")
        if self.p != 5:
            raise ValueError("the true risk function is defined for 5 covariates")
        if self.n_clusters < 1 or self.cluster_size < 1:
            raise ValueError("need at least one cluster of at least one record")


@dataclass
class SimTruth:
    risk: np.ndarray
    u: np.ndarray
    lambda_c: float
    censoring_rate: float
    seed: int
    T: np.ndarray = None
    C: np.ndarray = None

    def to_dict(self, debug=False):
        d = {
            "seed": self.seed,
            "lambda_c": self.lambda_c,
            "censoring_rate": self.censoring_rate,
            "u": self.u.tolist(),
            "f": self.risk.tolist(),
        }
        if debug:
            d["T"] = self.T.tolist()
            d["C"] = self.C.tolist()
        return d

    def save(self, path, debug=False):
        Path(path).write_text(json.dumps(self.to_dict(debug)))


def make_rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def replicate_seed(master_seed, cell, replicate):
    """Entropy tuple for one (cell, replicate) stream; pass it to SimConfig/TrainConfig."""
    ss = np.random.SeedSequence([int(master_seed), int(cell), int(replicate)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def true_risk(x):
    x = np.asarray(x, dtype=np.float64)
    x1, x2, x3, x4, x5 = (x[..., k] for k in range(5))
    return (0.4 * np.cos(x1) + 0.3 * np.cos(x2) + 0.6 * np.cos(x3) + 0.5 * x2 * x3
            + 0.4 / (x4 ** 2 + 1.0) + 0.5 / (x5 ** 2 + 1.0))


def sample_covariates(rng, n_records, rho=0.5, p=5):
    """Stationary Gaussian AR(1) across the p covariates of each record."""
    eps = rng.standard_normal((n_records, p))
    x = np.empty_like(eps)
    x[:, 0] = eps[:, 0]
    s = np.sqrt(1.0 - rho * rho)
    for k in range(1, p):
        x[:, k] = rho * x[:, k - 1] + s * eps[:, k]
    return x


def sample_times(rng, u, f, phi):
    """Inverse-transform draw from hazard phi t^(phi-1) u exp(f)."""
    u = np.asarray(u, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    U = rng.uniform(size=np.broadcast(u, f).shape)
    return weibull_time_from_uniform(U, u, f, phi)


def weibull_time_from_uniform(U, u, f, phi):
    return np.power(-np.log(U) / (u * np.exp(f)), 1.0 / phi)


def sample_frailties(rng, n, alpha):
    if alpha == 0:
        return np.ones(n)
    return rng.gamma(shape=1.0 / alpha, scale=alpha, size=n)


def _draw_times(rng, config, n_clusters):
    u = sample_frailties(rng, n_clusters, config.alpha)
    cluster = np.repeat(np.arange(n_clusters), config.cluster_size)
    x = sample_covariates(rng, cluster.size, config.rho, config.p)
    f = true_risk(x)
    T = sample_times(rng, u[cluster], f, config.phi)
    return cluster, x, f, u, T


def censoring_fraction(T, E, lam):
    """Share censored when C = E / lam, E ~ Exp(1): mean(C < T)."""
    return float(np.mean(E / lam < T))


def calibrate_censoring(rng, config, target=None, tol=0.01):
    """Rate of exponential censoring giving the target censored share.

    Bisects log(rate) on a pilot of at least ``config.pilot_size`` records
    drawn from the same model. Pilot draws are reused across evaluations, which
    makes the censored share a monotone function of the rate.
    """
    target = config.censoring if target is None else target
    n_pilot = -(-config.pilot_size // config.cluster_size)
    _, _, _, _, T = _draw_times(rng, config, n_pilot)
    E = rng.exponential(size=T.size)
    lo, hi = -30.0, 30.0
    if not censoring_fraction(T, E, np.exp(lo)) < target < censoring_fraction(T, E, np.exp(hi)):
        raise BracketFailure(f"cannot bracket censoring rate {target}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        frac = censoring_fraction(T, E, np.exp(mid))
        if abs(frac - target) < 1e-4 or hi - lo < 1e-12:
            break
        if frac < target:
            lo = mid
        else:
            hi = mid
    lam = float(np.exp(mid))
    if abs(censoring_fraction(T, E, lam) - target) > tol:
        raise BracketFailure(f"pilot censoring {censoring_fraction(T, E, lam):.4f} misses target {target}")
    return lam


def generate(config):
    """Simulate one dataset; returns (ClusteredDataset, SplitSpec, SimTruth).

    Records are laid out cluster by cluster; within a cluster the first
    ``n_train`` records form the training split, the next ``n_val`` the
    validation split and the rest the test split.
    """
    main_ss, pilot_ss = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.Generator(np.random.Philox(main_ss))
    pilot_rng = np.random.Generator(np.random.Philox(pilot_ss))
    cluster, x, f, u, T = _draw_times(rng, config, config.n_clusters)
    lam = calibrate_censoring(pilot_rng, config)
    C = rng.exponential(scale=1.0 / lam, size=T.size)
    y = np.minimum(T, C)
    status = (T <= C).astype(np.int64)
    ds = ClusteredDataset(cluster=cluster, time=y, status=status, x=x, n_clusters=config.n_clusters,
                          cluster_labels=tuple(range(config.n_clusters)))
    spec = SplitSpec.per_cluster_pattern(ds, config.n_train, config.n_val)
    truth = SimTruth(f, u, lam, float(1.0 - status.mean()), config.seed, T, C)
    return ds, spec, truth
