# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the temporal frustum detector core."""

from ._tfn import (
    Box3D,
    Error,
    average_precision,
    cosine_distance,
    gradcheck,
    iou3d,
    parse_labels,
    run_cli,
    synth_drive_summary,
    wrap_angle,
)

__all__ = [
    "Box3D",
    "Error",
    "average_precision",
    "cosine_distance",
    "gradcheck",
    "iou3d",
    "parse_labels",
    "run_cli",
    "synth_drive_summary",
    "wrap_angle",
]
