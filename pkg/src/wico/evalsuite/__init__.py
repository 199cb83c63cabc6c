from .bench import COLUMNS, BenchConfig, BenchRow, run_benchmark
from .cost import CostReport, cost_model
from .metrics import (DEFAULT_LAMBDA, ProbeReport, ProbeResult, SmoothnessReport, box_blur,
                      channel_mean_map, probe, ridge_fit, smoothness, total_variation,
                      window_variance)
from .synth import FeatureKind, synth_array, synth_batch, synth_features

__all__ = [
    "COLUMNS", "BenchConfig", "BenchRow", "run_benchmark", "CostReport", "cost_model",
    "DEFAULT_LAMBDA", "ProbeReport", "ProbeResult", "SmoothnessReport", "box_blur",
    "channel_mean_map", "probe", "ridge_fit", "smoothness", "total_variation", "window_variance",
    "FeatureKind", "synth_array", "synth_batch", "synth_features",
]
