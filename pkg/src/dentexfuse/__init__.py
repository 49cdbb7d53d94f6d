"""Post-model pipeline for tooth enumeration and disease detection on dental panoramic x-rays."""

from .annotations import (
    IndexBase,
    ToothId,
    from_global,
    parse_annotations,
    parse_fdi,
    serialize_annotations,
    to_coco,
    to_fdi,
    to_global,
)
from .evaluate import EvalConfig, evaluate
from .fusion import DiseaseDetection, ToothDictionary, build_dictionary, fuse_image, vote_tooth
from .geometry import BBox, CropFrame, iou, rescale_box, restore_to_image
from .postprocess import FusedFinding, apply_priors, dedupe, postprocess, threshold
from .rasterize import LabelMask, connected_components, largest_component_boxes, rasterize_objects

__version__ = "0.1.0"

__all__ = [
    "IndexBase",
    "ToothId",
    "from_global",
    "parse_annotations",
    "parse_fdi",
    "serialize_annotations",
    "to_coco",
    "to_fdi",
    "to_global",
    "EvalConfig",
    "evaluate",
    "DiseaseDetection",
    "ToothDictionary",
    "build_dictionary",
    "fuse_image",
    "vote_tooth",
    "BBox",
    "CropFrame",
    "iou",
    "rescale_box",
    "restore_to_image",
    "FusedFinding",
    "apply_priors",
    "dedupe",
    "postprocess",
    "threshold",
    "LabelMask",
    "connected_components",
    "largest_component_boxes",
    "rasterize_objects",
]
