"""Temporal action localization toolkit for inertial sensor streams.

Segment-based activity localization at desk scale: sliding-window
vectorization, an anchor-free single-stage localizer, timeline
postprocessing, and the segment evaluation battery (mAP over tIoU
thresholds, misalignment ratios, per-sample classification metrics).
"""

from taldesk._core import (
    InputError,
    Localizer,
    Segment,
    average_precision,
    devectorize,
    focal_loss,
    giou_loss_1d,
    gradcheck_max_error,
    labels_to_segments,
    length_bins,
    majority_filter,
    map_suite,
    rasterize_segments,
    rasterize_windows,
    sample_metrics,
    sliding_windows,
    threshold_segments,
    timeline_to_segments,
    tiou,
    vectorize,
    ward_errors,
    write_synthetic_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "InputError",
    "Localizer",
    "Segment",
    "average_precision",
    "devectorize",
    "focal_loss",
    "giou_loss_1d",
    "gradcheck_max_error",
    "labels_to_segments",
    "length_bins",
    "majority_filter",
    "map_suite",
    "rasterize_segments",
    "rasterize_windows",
    "sample_metrics",
    "sliding_windows",
    "threshold_segments",
    "timeline_to_segments",
    "tiou",
    "vectorize",
    "ward_errors",
    "write_synthetic_dataset",
]
