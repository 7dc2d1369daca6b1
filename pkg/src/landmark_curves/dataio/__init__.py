from .annotations import (
    AnnotationError,
    LandmarkAnnotation,
    Sample,
    load_annotations,
    load_image,
    save_annotations,
)
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    ChecksumError,
    IncompatibleCheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .synthetic import generate_synthetic
from .targets import Targets, polyline_to_curve, prepare_targets, sample_targets

__all__ = [
    "AnnotationError", "Checkpoint", "CheckpointError", "ChecksumError",
    "IncompatibleCheckpointError", "LandmarkAnnotation", "Sample", "Targets",
    "generate_synthetic", "load_annotations", "load_image", "load_checkpoint", "polyline_to_curve",
    "prepare_targets", "sample_targets", "save_annotations", "save_checkpoint",
]
