"""Cross-platform spatio-temporal graph embedding fusion for zone-level flow forecasting."""
from .autodiff import Tape, Tensor, grad_check
from .graphbuild import (FeatureTransform, FlowGraph, FlowSeries, NodeFeatureMatrix, Sample,
                         build_flow_graph, fit_feature_transform, make_samples, node_features,
                         normalize_adjacency)
from .ingest import IntervalIndex, Platform, TripRecord, ZoneRegistry, discretize, parse_trips
from .models import Forecaster, ModelConfig
from .synth import SynthConfig, generate, simulate
from .training import MetricsReport, TrainConfig, evaluate, mean_predictor_baseline, prepare, train

__version__ = "0.1.0"
