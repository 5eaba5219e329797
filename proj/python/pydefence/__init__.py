"""Fence segmentation, occlusion-aware optical flow, and multi-frame de-fencing."""

try:
    from ._core import (
        Classifier,
        default_config_json,
        defence_pipeline,
        detection_fmeasure,
        endpoint_error,
        estimate_flow,
        extract_descriptor,
        f_from_pr,
        mask_fmeasure,
        psnr,
        render_scene,
        segment_fence,
        train_classifier,
    )
except ImportError:  # development builds keep the extension on sys.path
    from _core import (
        Classifier,
        default_config_json,
        defence_pipeline,
        detection_fmeasure,
        endpoint_error,
        estimate_flow,
        extract_descriptor,
        f_from_pr,
        mask_fmeasure,
        psnr,
        render_scene,
        segment_fence,
        train_classifier,
    )

__all__ = [
    "Classifier",
    "default_config_json",
    "defence_pipeline",
    "detection_fmeasure",
    "endpoint_error",
    "estimate_flow",
    "extract_descriptor",
    "f_from_pr",
    "mask_fmeasure",
    "psnr",
    "render_scene",
    "segment_fence",
    "train_classifier",
]
