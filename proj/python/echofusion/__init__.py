"""Volumetric fusion and tracking of 3D ultrasound segmentations."""

from ._echofusion import (
    ConfigError,
    IoError,
    PipelineError,
    SectorError,
    __version__,
    dice_score,
    estimate_camera_placement,
    evaluate,
    focal_length_px,
    fuse,
    read_trajectory,
    read_volume,
    render_depth,
    robustness_metrics,
    simulate,
    track,
    write_volume,
)

__all__ = [
    "ConfigError",
    "IoError",
    "PipelineError",
    "SectorError",
    "__version__",
    "dice_score",
    "estimate_camera_placement",
    "evaluate",
    "focal_length_px",
    "fuse",
    "read_trajectory",
    "read_volume",
    "render_depth",
    "robustness_metrics",
    "simulate",
    "track",
    "write_volume",
]
