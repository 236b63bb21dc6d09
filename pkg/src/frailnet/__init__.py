"""Cox, gamma-frailty and neural frailty survival models fitted by profiled h-likelihood."""

__version__ = "0.1.0"

from .data import ClusteredDataset, CsvSchema, SplitSpec, load_csv, split, write_csv
from .likelihood import FrailtyState, LossBreakdown, breslow_loglik, full_hlik, profiled_hlik
from .metrics import EvalReport, brier_score, c_clustered, c_harrell, censoring_km, evaluate, ibs
from .model import BaselineHazard, FittedModel, estimate_baseline, fit_cox, frailty_bup, predict_survival
from .nn import Architecture, MlpParams, init_params
from .sim import SimConfig, generate
from .trainer import TrainConfig, TrainTrace, fit_dnn_cox, fit_dnn_fm, fit_fm, fit_model

__all__ = [
    "Architecture", "BaselineHazard", "ClusteredDataset", "CsvSchema", "EvalReport", "FittedModel",
    "FrailtyState", "LossBreakdown", "MlpParams", "SimConfig", "SplitSpec", "TrainConfig", "TrainTrace",
    "breslow_loglik", "brier_score", "c_clustered", "c_harrell", "censoring_km", "estimate_baseline",
    "evaluate", "fit_cox", "fit_dnn_cox", "fit_dnn_fm", "fit_fm", "fit_model", "frailty_bup", "full_hlik",
    "generate", "ibs", "init_params", "load_csv", "predict_survival", "profiled_hlik", "split", "write_csv",
]
