"""Clustered right-censored survival data and its risk-set bookkeeping.

Every likelihood in the package reads risk sets through :class:`RiskIndex`.
Records are sorted by time once; the risk set at the k-th distinct event time
is then the suffix ``order[starts[k]:]`` of that ordering, so a single reverse
sweep visits all risk sets from smallest to largest.

Ties follow the Breslow convention: all events sharing a time share one risk
set, and a record censored at an event time is still at risk at that time.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    IncompleteAssignment,
    InvalidStatus,
    MissingColumn,
    NonPositiveTime,
    RaggedCovariates,
)

TRAIN, VALIDATION, TEST = "train", "validation", "test"


@dataclass(frozen=True)
class SurvivalRecord:
    cluster_id: int
    time: float
    status: int
    covariates: tuple


@dataclass(frozen=True)
class RiskIndex:
    """Sorted-suffix representation of the risk sets R_(1) ⊇ ... ⊇ R_(K).

    Attributes
    ----------
    order : (N,) int array
        Record indices sorted by time (stable).
    event_times : (K,) float array
        Strictly increasing distinct event times.
    event_counts : (K,) int array
        Number of events d_(k) at each distinct time.
    starts : (K,) int array
        Position in ``order`` where R_(k) begins.
    n_events_before : (N,) int array
        For record r, the number of distinct event times <= time[r]; the
        cumulative baseline hazard at time[r] is the sum of the first
        ``n_events_before[r]`` increments.
    """

    order: np.ndarray
    event_times: np.ndarray
    event_counts: np.ndarray
    starts: np.ndarray
    n_events_before: np.ndarray

    @property
    def K(self):
        return self.event_times.size

    def risk_set(self, k):
        return self.order[self.starts[k]:]

    def risk_sizes(self):
        return self.order.size - self.starts


def build_risk_index(time, status):
    """Build the risk index for arrays of times and 0/1 statuses."""
    time = np.asarray(time, dtype=np.float64)
    status = np.asarray(status, dtype=np.int64)
    order = np.argsort(time, kind="stable")
    event_times, event_counts = np.unique(time[status == 1], return_counts=True)
    sorted_time = time[order]
    starts = np.searchsorted(sorted_time, event_times, side="left")
    n_before = np.searchsorted(event_times, time, side="right")
    return RiskIndex(
        order=order,
        event_times=event_times,
        event_counts=event_counts.astype(np.int64),
        starts=starts.astype(np.int64),
        n_events_before=n_before.astype(np.int64),
    )


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ClusteredDataset:
    """Immutable clustered survival data with precomputed risk sets.

    ``cluster`` holds contiguous codes in ``[0, n_clusters)``. Datasets produced
    by :func:`split` keep the parent's ``n_clusters`` and ``cluster_labels`` so
    that a frailty vector indexes every split the same way, even when a split
    contains no record of some cluster.
    """

    cluster: np.ndarray
    time: np.ndarray
    status: np.ndarray
    x: np.ndarray
    n_clusters: int
    cluster_labels: tuple = None
    covariate_names: tuple = None
    risk: RiskIndex = field(init=False, repr=False)

    def __post_init__(self):
        cluster = _frozen(self.cluster, np.int64)
        time = _frozen(self.time, np.float64)
        status = _frozen(self.status, np.int64)
        x = np.array(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if time.size else x.reshape(0, 0)
        x.setflags(write=False)
        n = time.size
        if not (cluster.shape == status.shape == (n,) and x.shape[0] == n):
            raise RaggedCovariates("cluster, time, status and covariates disagree in length")
        bad = np.flatnonzero(~(time > 0) | ~np.isfinite(time))
        if bad.size:
            raise NonPositiveTime(f"time must be positive and finite (record {bad[0]})", row=int(bad[0]))
        bad = np.flatnonzero((status != 0) & (status != 1))
        if bad.size:
            raise InvalidStatus(f"status must be 0 or 1 (record {bad[0]})", row=int(bad[0]))
        if n and (cluster.min() < 0 or cluster.max() >= self.n_clusters):
            raise ValueError("cluster codes must lie in [0, n_clusters)")
        labels = self.cluster_labels
        if labels is None:
            labels = tuple(range(self.n_clusters))
        object.__setattr__(self, "cluster", cluster)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "n_clusters", int(self.n_clusters))
        object.__setattr__(self, "cluster_labels", tuple(labels))
        if self.covariate_names is None:
            object.__setattr__(self, "covariate_names", tuple(f"x{k + 1}" for k in range(x.shape[1])))
        object.__setattr__(self, "risk", build_risk_index(time, status))

    @property
    def N(self):
        return self.time.size

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def cluster_sizes(self):
        return np.bincount(self.cluster, minlength=self.n_clusters)

    @property
    def delta_plus(self):
        """Number of events per cluster."""
        return np.bincount(self.cluster, weights=self.status, minlength=self.n_clusters).astype(np.int64)

    @property
    def event_times(self):
        return self.risk.event_times

    @property
    def event_multiplicities(self):
        return self.risk.event_counts

    def records(self):
        return [
            SurvivalRecord(int(c), float(t), int(s), tuple(float(v) for v in row))
            for c, t, s, row in zip(self.cluster, self.time, self.status, self.x)
        ]

    def subset(self, index):
        index = np.asarray(index)
        return ClusteredDataset(
            cluster=self.cluster[index],
            time=self.time[index],
            status=self.status[index],
            x=self.x[index],
            n_clusters=self.n_clusters,
            cluster_labels=self.cluster_labels,
            covariate_names=self.covariate_names,
        )

    @classmethod
    def from_records(cls, records, labels=None, covariate_names=None):
        """Build from :class:`SurvivalRecord` objects, re-encoding cluster ids."""
        records = list(records)
        raw = [r.cluster_id for r in records]
        codes, labels = encode_clusters(raw) if labels is None else (np.array(raw), labels)
        p = len(records[0].covariates) if records else 0
        for i, r in enumerate(records):
            if len(r.covariates) != p:
                raise RaggedCovariates(f"record {i} has {len(r.covariates)} covariates, expected {p}", row=i)
        return cls(
            cluster=codes,
            time=[r.time for r in records],
            status=[r.status for r in records],
            x=np.array([r.covariates for r in records], dtype=np.float64).reshape(len(records), p),
            n_clusters=len(labels),
            cluster_labels=tuple(labels),
            covariate_names=covariate_names,
        )


def encode_clusters(raw_ids):
    """Map arbitrary cluster ids to 0..n-1 in order of first appearance."""
    mapping = {}
    codes = np.empty(len(raw_ids), dtype=np.int64)
    for i, cid in enumerate(raw_ids):
        codes[i] = mapping.setdefault(cid, len(mapping))
    return codes, tuple(mapping)


@dataclass(frozen=True)
class CsvSchema:
    """Column names used by :func:`load_csv` and :func:`write_csv`.

    ``covariates=None`` means every column not named by the other fields.
    """

    cluster: str = "cluster"
    time: str = "time"
    status: str = "status"
    covariates: tuple = None

    @classmethod
    def from_mapping(cls, mapping):
        mapping = dict(mapping or {})
        if "covariates" in mapping and mapping["covariates"] is not None:
            mapping["covariates"] = tuple(mapping["covariates"])
        return cls(**mapping)


def _parse_float(text, row, column):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise RaggedCovariates(f"row {row}: column {column!r} is not numeric: {text!r}", row=row, column=column)


def load_csv(path, schema=None):
    """Read a clustered survival CSV (header row required).

    Cluster ids may be any strings; they are re-encoded to contiguous codes in
    order of first appearance and the original labels are kept on the dataset.
    Rows are numbered from 1 after the header in error messages.
    """
    schema = schema if isinstance(schema, CsvSchema) else CsvSchema.from_mapping(schema)
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn("empty file: header row required")
        for name in (schema.cluster, schema.time, schema.status):
            if name not in header:
                raise MissingColumn(f"missing column {name!r}", column=name)
        if schema.covariates is None:
            named = {schema.cluster, schema.time, schema.status}
            cov_names = tuple(h for h in header if h not in named)
        else:
            cov_names = tuple(schema.covariates)
            for name in cov_names:
                if name not in header:
                    raise MissingColumn(f"missing covariate column {name!r}", column=name)
        if not cov_names:
            raise MissingColumn("at least one covariate column is required")
        ic, it, ist = header.index(schema.cluster), header.index(schema.time), header.index(schema.status)
        icov = [header.index(c) for c in cov_names]

        raw_cluster, times, statuses, xs = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RaggedCovariates(f"row {row_no} has {len(row)} fields, header has {len(header)}", row=row_no)
            t = _parse_float(row[it], row_no, schema.time)
            if not (t > 0) or not np.isfinite(t):
                raise NonPositiveTime(f"row {row_no}: time must be positive, got {row[it]!r}", row=row_no,
                                      column=schema.time)
            s = _parse_float(row[ist], row_no, schema.status)
            if s not in (0.0, 1.0):
                raise InvalidStatus(f"row {row_no}: status must be 0 or 1, got {row[ist]!r}", row=row_no,
                                    column=schema.status)
            raw_cluster.append(row[ic].strip())
            times.append(t)
            statuses.append(int(s))
            xs.append([_parse_float(row[j], row_no, cov_names[k]) for k, j in enumerate(icov)])

    codes, labels = encode_clusters(raw_cluster)
    return ClusteredDataset(
        cluster=codes,
        time=times,
        status=statuses,
        x=np.array(xs, dtype=np.float64).reshape(len(times), len(cov_names)),
        n_clusters=len(labels),
        cluster_labels=labels,
        covariate_names=cov_names,
    )


def write_csv(dataset, path, schema=None, extra_columns=None):
    """Write ``dataset`` with the given schema; floats use shortest round-trip repr."""
    schema = schema if isinstance(schema, CsvSchema) else CsvSchema.from_mapping(schema)
    cov_names = schema.covariates or dataset.covariate_names
    extra_columns = extra_columns or {}
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([schema.cluster, schema.time, schema.status, *cov_names, *extra_columns])
        extras = [np.asarray(v) for v in extra_columns.values()]
        for r in range(dataset.N):
            w.writerow([
                dataset.cluster_labels[dataset.cluster[r]],
                repr(float(dataset.time[r])),
                int(dataset.status[r]),
                *(repr(float(v)) for v in dataset.x[r]),
                *(e[r].item() for e in extras),
            ])


@dataclass(frozen=True)
class SplitSpec:
    assignment: tuple

    @classmethod
    def per_cluster_pattern(cls, dataset, n_train=4, n_val=2):
        """Within each cluster, the first ``n_train`` records (in file order) go to
        train, the next ``n_val`` to validation, the rest to test."""
        labels = []
        seen = np.zeros(dataset.n_clusters, dtype=np.int64)
        for c in dataset.cluster:
            j = seen[c]
            seen[c] += 1
            labels.append(TRAIN if j < n_train else VALIDATION if j < n_train + n_val else TEST)
        return cls(tuple(labels))

    @classmethod
    def random_per_cluster(cls, dataset, rng, n_test=2, n_val=2):
        """Randomly pick ``n_test`` test and ``n_val`` validation records per cluster;
        the remainder trains."""
        labels = np.empty(dataset.N, dtype=object)
        for c in range(dataset.n_clusters):
            idx = rng.permutation(np.flatnonzero(dataset.cluster == c))
            labels[idx[:n_test]] = TEST
            labels[idx[n_test:n_test + n_val]] = VALIDATION
            labels[idx[n_test + n_val:]] = TRAIN
        return cls(tuple(labels))


def split(dataset, spec):
    """Return (train, validation, test) datasets sharing the cluster encoding."""
    labels = np.asarray(spec.assignment, dtype=object)
    if labels.shape != (dataset.N,):
        raise IncompleteAssignment(f"assignment covers {labels.size} of {dataset.N} records")
    valid = np.isin(labels, [TRAIN, VALIDATION, TEST])
    if not valid.all():
        bad = int(np.flatnonzero(~valid)[0])
        raise IncompleteAssignment(f"record {bad} has no split label", row=bad)
    return tuple(dataset.subset(np.flatnonzero(labels == name)) for name in (TRAIN, VALIDATION, TEST))
