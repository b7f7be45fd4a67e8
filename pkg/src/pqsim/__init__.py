"""Simulation and analysis of planar quantum squeezing by stroboscopic QND probing.

A collective atomic spin precessing in the y-z plane is probed with
Faraday-rotation pulses.  Two successive measurement windows give estimates
F1, F2 of the planar spin at a common epoch; the conditional covariance of
F2 given F1 is scored with planar-squeezing, entanglement and
phase-sensitivity figures of merit.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .fid import ClassicalParams, ConditionalStats, SpinEstimate, conditional_covariance
from .harness import analytic_trials, run_calibration, run_trials, scan_coherence, scan_window
from .metrics import MetricsReport, PlanarMoments, metrics_report
from .probe import PulseTrainConfig, Trace, simulate_trace
from .spin import DecoherenceParams, GaussianSpinState, css_new, pcss_new

__all__ = [
    "ClassicalParams",
    "ConditionalStats",
    "DecoherenceParams",
    "ExperimentConfig",
    "GaussianSpinState",
    "MetricsReport",
    "PlanarMoments",
    "PulseTrainConfig",
    "SpinEstimate",
    "Trace",
    "analytic_trials",
    "conditional_covariance",
    "css_new",
    "load_config",
    "metrics_report",
    "pcss_new",
    "run_calibration",
    "run_trials",
    "scan_coherence",
    "scan_window",
    "simulate_trace",
]
