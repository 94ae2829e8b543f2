"""Blob loss: instance-aware segmentation losses, metrics, and a desk-scale harness."""

__version__ = "0.1.0"

from .components import Connectivity, component_sizes, extract_instance_mask, label_components
from .losses import (BaseLoss, BlobLossConfig, LossResult, OneHotSegmentation, base_loss,
                     blob_loss, blob_term, instance_domain_mask, multiclass_blob_loss)
from .metrics import (MatchingResult, MetricsReport, full_report, match_instances,
                      surface_dice, volumetric_metrics)
from .synth import ShapeFeatures, SynthSpec, generate, shape_features
from .volume import Dims, InstanceLabeling, hadamard, read_volume, write_volume

__all__ = [
    "BaseLoss", "BlobLossConfig", "Connectivity", "Dims", "InstanceLabeling", "LossResult",
    "MatchingResult", "MetricsReport", "OneHotSegmentation", "ShapeFeatures", "SynthSpec",
    "base_loss", "blob_loss", "blob_term", "component_sizes", "extract_instance_mask",
    "full_report", "generate", "hadamard", "instance_domain_mask", "label_components",
    "match_instances", "multiclass_blob_loss", "read_volume", "shape_features",
    "surface_dice", "volumetric_metrics", "write_volume",
]
