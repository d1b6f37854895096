"""Prediction intervals for stochastic simulation metamodels.

Stochastic kriging, split conformal and conformalized quantile regression,
quantile regression forests and interval networks selected by a
coverage-guaranteeing validator, plus the simulators and experiment
harness used to compare them.
"""
from .bench import ExperimentConfig, ExperimentReport, emit_report, run_experiment
from .conformal import split_conformal, split_cqr
from .data import (CoverageStats, IntervalModel, ReplicatedDataset, coverage_and_width,
                   empirical_quantile, split_disjoint, split_replicates)
from .forest import QRFConfig, QRFQuantileRegressor, fit_qrf, qrf_interval, qrf_interval_model, qrf_quantile
from .kriging import SKModel, fit_sk, sk_interval, sk_interval_model, sk_posterior
from .neural import MLPRegressor, TrainConfig, soft_loss, train_candidates, train_pi_network
from .simulators import MM1Config, NetworkConfig, generate_design, mm1_sample, network_sample
from .validation import SelectionConfig, SelectionResult, coverage_matrix, gaussian_sup_quantile, select

__version__ = "0.1.0"
