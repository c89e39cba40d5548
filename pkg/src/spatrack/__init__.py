"""spatrack: a visual tracker built from two spatial-aware regressors.

A cross-patch kernel ridge regressor evaluated through its exact network
reformulation captures the holistic target, and a small CNN with spatially
masked kernels plus distance-transform pooling captures localized regions;
their heat maps are fused for localization.  Includes a synthetic-sequence
benchmark harness and a command-line interface.
"""

from .boxes import BoundingBox, center_error, iou
from .config import RunConfig, desk_config, load_config
from .benchmark import (SequenceBundle, SynthSpec, evaluate_ope, load_sequence,
                        save_results, save_sequence, synthesize_sequence)
from .features import FeatureConfig, extract_features
from .tracker import (ScaleModel, TrackerState, ablation_variant, fuse,
                      init_tracker, locate, scale_scores, scale_train_step,
                      track_frame, track_sequence)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "center_error", "iou",
    "RunConfig", "desk_config", "load_config",
    "SequenceBundle", "SynthSpec", "evaluate_ope", "load_sequence",
    "save_results", "save_sequence", "synthesize_sequence",
    "FeatureConfig", "extract_features",
    "ScaleModel", "TrackerState", "ablation_variant", "fuse", "init_tracker",
    "locate", "scale_scores", "scale_train_step", "track_frame", "track_sequence",
]
