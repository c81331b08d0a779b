"""CSI-based copresence detection toolkit.

Synthetic multipath CSI generation, magnitude/phase feature extraction,
a from-scratch dense network with input-gradient training penalties,
stratified cross-validated AUC/EER evaluation, transfer learning, and
windowed real-time decisions.
"""

from .channel import ChannelConfig, PRESETS, get_preset
from .features import (
    FeatureMatrix,
    NormStats,
    apply_scaling,
    build_feature_matrix,
    fit_variance_scaling,
    magnitude_phase,
    sanitize_phase,
    strip_nulls,
)
from .measurement import CsiMeasurement, read_measurements, write_measurements
from .network import AnnotationPenalty, MlpModel, TrainConfig, build_model
from .simulate import (
    PathTap,
    SampledCir,
    ScenarioSpec,
    cir_to_csi,
    csi_to_cir,
    generate_dataset,
    ideal_cir,
    load_scenario,
    sample_cir,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationPenalty",
    "ChannelConfig",
    "CsiMeasurement",
    "FeatureMatrix",
    "MlpModel",
    "NormStats",
    "PRESETS",
    "PathTap",
    "SampledCir",
    "ScenarioSpec",
    "TrainConfig",
    "apply_scaling",
    "build_feature_matrix",
    "build_model",
    "cir_to_csi",
    "csi_to_cir",
    "fit_variance_scaling",
    "generate_dataset",
    "get_preset",
    "ideal_cir",
    "load_scenario",
    "magnitude_phase",
    "read_measurements",
    "sanitize_phase",
    "sample_cir",
    "strip_nulls",
    "write_measurements",
]
