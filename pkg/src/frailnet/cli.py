"""Command-line front end: ``frailnet simulate|fit|predict|evaluate|experiment``.

Exit codes are 0 on success, 1 on a runtime failure and 2 on a usage error.
Failures print one JSON object ``{"error": kind, "message": ...}`` on stderr.
Successful commands print a one-line JSON summary on stdout.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import TEST, TRAIN, VALIDATION, CsvSchema, SplitSpec, load_csv, split, write_csv
from .errors import FrailnetError
from .metrics import evaluate, validate_report
from .model import KINDS, FittedModel, survival_matrix
from .sim import SimConfig, generate, replicate_seed
from .trainer import TrainConfig, fit_model

SPLIT_COLUMN = "split"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj, stream=None):
    print(json.dumps(obj), file=stream or sys.stdout, flush=True)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [h.strip() for h in next(csv.reader(fh), [])]


def _schema(args, path):
    base = CsvSchema(args.cluster_col, args.time_col, args.status_col)
    cols = _header(path)
    named = {base.cluster, base.time, base.status, args.split_col}
    return CsvSchema(base.cluster, base.time, base.status, tuple(c for c in cols if c not in named))


def _split_labels(path, column):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if any((v or "").strip() for v in r.values())]
    if not rows or column not in rows[0]:
        return None
    return tuple(r[column].strip() for r in rows)


def load_with_splits(args, path):
    """Dataset plus its (train, validation, test) split when the file has a split column."""
    ds = load_csv(path, _schema(args, path))
    labels = _split_labels(path, args.split_col)
    if labels is None:
        return ds, None
    return ds, split(ds, SplitSpec(labels))


def _select(ds, parts, which):
    if which == "all" or parts is None:
        return ds
    return dict(zip((TRAIN, VALIDATION, TEST), parts))[which]


def frailty_codes(dataset, model):
    """Model cluster code of every record of ``dataset`` (-1 when the model never saw it)."""
    if model.cluster_labels is None:
        return dataset.cluster.copy()
    lookup = {str(lab): k for k, lab in enumerate(model.cluster_labels)}
    per_label = np.array([lookup.get(str(lab), -1) for lab in dataset.cluster_labels], dtype=np.int64)
    return per_label[dataset.cluster]


def _train_config(args):
    d = {}
    if getattr(args, "config", None):
        d.update(json.loads(Path(args.config).read_text()))
    for name in ("seed", "max_epochs", "patience", "lr", "batch_size"):
        val = getattr(args, name, None)
        if val is not None:
            d[name] = val
    return TrainConfig.from_dict(d)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = SimConfig(n_clusters=args.n_clusters, cluster_size=args.cluster_size, rho=args.rho, phi=args.phi,
                    alpha=args.alpha, censoring=args.censoring, seed=args.seed, pilot_size=args.pilot_size)
    ds, spec, truth = generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "data.csv"
    write_csv(ds, data_path, extra_columns={SPLIT_COLUMN: np.array(spec.assignment)})
    truth.save(out / "truth.json", debug=args.debug)
    _emit({"data": str(data_path), "truth": str(out / "truth.json"), "records": ds.N,
           "clusters": ds.n_clusters, "censoring_rate": truth.censoring_rate, "lambda_c": truth.lambda_c})
    return 0


def cmd_fit(args):
    ds, parts = load_with_splits(args, args.data)
    train, val = (ds, None) if parts is None else parts[:2]
    config = _train_config(args)
    model, trace = fit_model(args.kind, train, val, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    trace_csv = out.with_suffix(".trace.csv")
    trace.write_csv(trace_csv)
    out.with_suffix(".trace.json").write_text(json.dumps(trace.summary()))
    meta = model.metadata
    _emit({"model": str(out), "kind": model.kind, "neg_hp": meta.get("neg_hp"),
           "alpha": model.frailty.alpha if model.has_frailty else None,
           "epochs": meta.get("epochs", meta.get("iterations")), "converged": bool(meta.get("converged", True))})
    return 0


def cmd_predict(args):
    model = FittedModel.load(args.model)
    ds, parts = load_with_splits(args, args.data)
    ds = _select(ds, parts, args.split)
    times = [float(t) for t in args.times.split(",")]
    codes = frailty_codes(ds, model) if model.has_frailty else None
    S = survival_matrix(model, ds.x, times, codes, args.strict)
    eta = model.linear_predictor(ds.x, codes, args.strict)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "eta", *[f"S({t!r})" for t in times]])
        for r in range(ds.N):
            w.writerow([ds.cluster_labels[ds.cluster[r]], repr(float(eta[r])), *(repr(float(s)) for s in S[r])])
    _emit({"predictions": str(args.out), "records": ds.N, "times": times})
    return 0


def cmd_evaluate(args):
    model = FittedModel.load(args.model)
    ds, parts = load_with_splits(args, args.data)
    ds = _select(ds, parts, args.split)
    report = evaluate(model, ds, strict=args.strict, codes=frailty_codes(ds, model))
    validate_report(report.to_dict())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_json(out)
    report.brier_csv(out.with_suffix(".brier.csv"))
    _emit({"report": str(out), "ibs": report.ibs, "c_harrell": report.c_harrell, "c_within": report.c_within,
           "c_between": report.c_between, "c_overall": report.c_overall})
    return 0


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    alphas: list = field(default_factory=lambda: [1.0])
    censorings: list = field(default_factory=lambda: [0.15])
    kinds: list = field(default_factory=lambda: list(KINDS))
    replicates: int = 10
    master_seed: int = 0
    output_dir: str = "experiment"
    n_clusters: int = 1000
    cluster_size: int = 8
    train_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ValueError(f"unknown model kinds {bad}")
        TrainConfig.from_dict(self.train_config)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(**d)

    def cells(self):
        return [(float(a), float(c)) for a in self.alphas for c in self.censorings]


RAW_FIELDS = ["alpha", "censoring", "replicate", "kind", "seed", "alpha_hat", "ibs", "c_harrell", "c_within",
              "c_between", "c_overall", "epochs", "converged", "neg_hp", "censoring_rate", "error"]
METRICS = ["alpha_hat", "ibs", "c_harrell", "c_within", "c_between", "c_overall"]


def cell_name(alpha, censoring):
    return f"alpha{alpha:g}_cens{censoring:g}"


def cell_key(alpha, censoring):
    return int(round(alpha * 1000)) * 1000 + int(round(censoring * 1000))


def run_replicate(spec, alpha, censoring, rep):
    """Simulate one replicate and fit every model kind; returns (raw rows, brier rows)."""
    seed = replicate_seed(spec.master_seed, cell_key(alpha, censoring), rep)
    rows, brier_rows = [], []
    base = {"alpha": alpha, "censoring": censoring, "replicate": rep, "seed": seed}
    try:
        ds, sp, truth = generate(SimConfig(n_clusters=spec.n_clusters, cluster_size=spec.cluster_size,
                                           alpha=alpha, censoring=censoring, seed=seed))
        train, val, test = split(ds, sp)
    except Exception as exc:  # record and move on
        return [dict(base, kind=k, error=f"{type(exc).__name__}: {exc}") for k in spec.kinds], []
    config = TrainConfig.from_dict(dict(spec.train_config, seed=seed))
    for kind in spec.kinds:
        row = dict(base, kind=kind, censoring_rate=truth.censoring_rate)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model, _ = fit_model(kind, train, val, config)
                rep_ = evaluate(model, test)
            row.update(alpha_hat=model.frailty.alpha if model.has_frailty else None, ibs=rep_.ibs,
                       c_harrell=rep_.c_harrell, c_within=rep_.c_within, c_between=rep_.c_between,
                       c_overall=rep_.c_overall, epochs=model.metadata.get("epochs", model.metadata.get("iterations")),
                       converged=model.metadata.get("converged"), neg_hp=model.metadata.get("neg_hp"))
            brier_rows += [(alpha, censoring, rep, kind, t, b) for t, b in zip(rep_.grid, rep_.brier)]
        except Exception as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows, brier_rows


def _write_atomic_csv(path, header, rows):
    tmp = path.with_suffix(path.suffix + ".part")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_raw(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows):
    """mean and sd (ddof=1) per (alpha, censoring, kind) over non-failed replicates."""
    groups = {}
    for r in rows:
        groups.setdefault((float(r["alpha"]), float(r["censoring"]), r["kind"]), []).append(r)
    out = []
    for (a, c, k), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], KINDS.index(kv[0][2]))):
        rec = {"alpha": a, "censoring": c, "kind": k, "n": len(rs),
               "failed": sum(1 for r in rs if r.get("error"))}
        for m in METRICS:
            vals = np.array([float(r[m]) for r in rs if r.get(m) not in (None, "")])
            rec[f"{m}_mean"] = float(vals.mean()) if vals.size else None
            rec[f"{m}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else None
        out.append(rec)
    return out


def _summary_cell(rec, m):
    mean, sd = rec[f"{m}_mean"], rec[f"{m}_sd"]
    if mean is None:
        return ""
    return f"{mean:.3f} ({sd:.3f})" if sd is not None else f"{mean:.3f}"


def write_summary(out_dir, rows):
    summary = summarize(rows)
    cols = ["alpha", "censoring", "kind", "n", "failed"]
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + [f"{m}_mean" for m in METRICS] + [f"{m}_sd" for m in METRICS])
        for rec in summary:
            w.writerow([rec[c] for c in cols] + [_fmt(rec[f"{m}_mean"]) for m in METRICS]
                       + [_fmt(rec[f"{m}_sd"]) for m in METRICS])
    with open(out_dir / "summary_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + METRICS)
        for rec in summary:
            w.writerow([rec[c] for c in cols] + [_summary_cell(rec, m) for m in METRICS])
    return summary


def worker_count(requested=None):
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("FRAILNET_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_experiment(spec, jobs=None, log=None):
    """Run every cell not already on disk; returns (summary, cells_run, cells_skipped)."""
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "spec.json").write_text(json.dumps(spec.__dict__, indent=1))
    n_jobs = worker_count(jobs)
    ran, skipped = [], []
    all_rows = []
    for alpha, cens in spec.cells():
        name = cell_name(alpha, cens)
        raw_path = out_dir / f"raw_{name}.csv"
        if raw_path.exists():
            rows = read_raw(raw_path)
            if len(rows) == spec.replicates * len(spec.kinds):
                skipped.append(name)
                all_rows += rows
                continue
        tasks = [(spec, alpha, cens, r) for r in range(spec.replicates)]
        if n_jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=min(n_jobs, len(tasks))) as ex:
                results = list(ex.map(_run_replicate_star, tasks))
        else:
            results = [run_replicate(*t) for t in tasks]
        raw = [row for rows, _ in results for row in rows]
        brier = [b for _, bs in results for b in bs]
        _write_atomic_csv(out_dir / f"brier_{name}.csv", ["alpha", "censoring", "replicate", "kind", "t", "brier"],
                          [[_fmt(x) for x in b] for b in brier])
        _write_atomic_csv(raw_path, RAW_FIELDS, [[_fmt(r.get(f)) for f in RAW_FIELDS] for r in raw])
        if log:
            log(name)
        ran.append(name)
        all_rows += read_raw(raw_path)
    return write_summary(out_dir, all_rows), ran, skipped


def _run_replicate_star(args):
    return run_replicate(*args)


def cmd_experiment(args):
    spec = ExperimentSpec.from_dict(json.loads(Path(args.spec).read_text()))
    if args.output_dir:
        spec.output_dir = args.output_dir
    summary, ran, skipped = run_experiment(spec, args.jobs)
    _emit({"output_dir": spec.output_dir, "cells_run": ran, "cells_skipped": skipped, "rows": len(summary)})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_csv_args(p):
    p.add_argument("--cluster-col", default="cluster")
    p.add_argument("--time-col", default="time")
    p.add_argument("--status-col", default="status")
    p.add_argument("--split-col", default=SPLIT_COLUMN, help="optional column with train/validation/test labels")


def build_parser():
    parser = _Parser(prog="frailnet", description="Frailty neural survival models.")
    parser.add_argument("--version", action="version", version=f"frailnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a clustered dataset")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--censoring", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-clusters", type=int, default=1000)
    p.add_argument("--cluster-size", type=int, default=8)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--phi", type=float, default=2.0)
    p.add_argument("--pilot-size", type=int, default=100_000)
    p.add_argument("--debug", action="store_true", help="store latent T and C in the truth file")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", required=True)
    _add_csv_args(p)
    p.set_defaults(func=cmd_fit)

    for name, func, help_ in (("predict", cmd_predict, "predict survival probabilities"),
                              ("evaluate", cmd_evaluate, "Brier score, IBS and C-indices")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split", default="all", choices=("all", TRAIN, VALIDATION, TEST))
        p.add_argument("--strict", action="store_true", help="fail on clusters without a frailty estimate")
        p.add_argument("--out", required=True)
        if name == "predict":
            p.add_argument("--times", required=True, help="comma-separated times")
        _add_csv_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("experiment", help="replicated simulation experiment")
    p.add_argument("--spec", required=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit({"error": "usage", "message": str(exc)}, sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FrailnetError, OSError, ValueError, KeyError) as exc:
        kind = type(exc).__name__
        payload = {"error": kind, "message": str(exc)}
        for attr in ("row", "column"):
            if getattr(exc, attr, None) is not None:
                payload[attr] = getattr(exc, attr)
        _emit(payload, sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
