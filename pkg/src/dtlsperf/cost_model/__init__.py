"""Cycle cost model for the gateway: equations, prediction and refits."""
from .equations import (COMPONENTS, DEFAULT_WIRE_BYTES, SAWTOOTH_MIN_CONNECTIONS,
                        PredictionInput, Throughput, eval_component, eval_total,
                        insert_per_conn, predict_throughput, sawtooth_shape, smape, total_parts)
from .fit import (DegenerateFit, LinearCostEstimator, LinearFit, SawtoothCostEstimator,
                  SawtoothFit, fit_linear, fit_sawtooth)
from .params import CostModelParams, DomainError, load_params, save_params

__all__ = [
    "COMPONENTS", "DEFAULT_WIRE_BYTES", "SAWTOOTH_MIN_CONNECTIONS", "CostModelParams",
    "DegenerateFit", "DomainError", "LinearCostEstimator", "LinearFit", "PredictionInput",
    "SawtoothCostEstimator", "SawtoothFit", "Throughput", "eval_component", "eval_total",
    "fit_linear", "fit_sawtooth", "insert_per_conn", "load_params", "predict_throughput",
    "sawtooth_shape", "save_params", "smape", "total_parts",
]
