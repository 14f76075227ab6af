"""ECG arrhythmia detection with fixed-point neural inference.

Subpackages cover signal ingestion, wavelet-domain QRS detection,
feature extraction, a small trainable classifier with a quantized
deployment path, an RR-interval self-learning monitor, and evaluation
tooling.  Everything is importable from the submodules; this top level
re-exports only the handful of names used most.
"""

from .fixedpoint import FixedPoint, QFormat, from_fixed, to_fixed
from .activation import ntanh, platanh, platanh_fixed, softmax, tanh_exact
from .dsp import PeakTrain, detect_r_peaks, dwt_decompose, dwt_reconstruct
from .features import PCAModel, build_feature_vector, fit_pca, project, window_beat
from .mlp import (
    MlpModel,
    init_model,
    load_model,
    predict,
    predict_batch,
    quantize_model,
    save_model,
    train,
)
from .selflearn import AnomalyEvent, run_self_learner
from .metrics import ConfusionCounts, MetricsReport, compute_metrics, match_beats
from .experiment import PipelineConfig, run_experiment, sweep_fraction_bits
from .wfdb_io import EcgRecord, ingest_record

__all__ = [
    "AnomalyEvent",
    "ConfusionCounts",
    "EcgRecord",
    "FixedPoint",
    "MetricsReport",
    "MlpModel",
    "PCAModel",
    "PeakTrain",
    "PipelineConfig",
    "QFormat",
    "build_feature_vector",
    "compute_metrics",
    "detect_r_peaks",
    "dwt_decompose",
    "dwt_reconstruct",
    "fit_pca",
    "from_fixed",
    "ingest_record",
    "init_model",
    "load_model",
    "match_beats",
    "ntanh",
    "platanh",
    "platanh_fixed",
    "predict",
    "predict_batch",
    "project",
    "quantize_model",
    "run_experiment",
    "run_self_learner",
    "save_model",
    "softmax",
    "sweep_fraction_bits",
    "tanh_exact",
    "to_fixed",
    "train",
    "window_beat",
]

__version__ = "0.1.0"
