"""Input validation helpers used across modules.

All helpers return a float64 ndarray copy-or-view of the input after checking,
so callers can rely on dtype and layout afterwards.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionError


def check_image(image, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) image with finite values in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be non-empty, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range "
                         f"[{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_image_like(image, name: str = "image") -> np.ndarray:
    """Like check_image but without the [0, 1] range demand.

    Generated images may leave [0, 1]; losses and reconstruction accept them.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be non-empty, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_grid(grid, name: str = "grid") -> np.ndarray:
    """Validate a 2-D float grid with finite values."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be non-empty, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_mask(mask, name: str = "mask") -> np.ndarray:
    """Validate a 2-D mask grid with values in [0, 1]."""
    arr = check_grid(mask, name)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range "
                         f"[{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_same_hw(a: np.ndarray, b: np.ndarray, a_name: str, b_name: str) -> None:
    """Require matching leading (H, W) dims between two arrays."""
    if a.shape[:2] != b.shape[:2]:
        raise DimensionError(f"{a_name} {a.shape[:2]} and {b_name} {b.shape[:2]} "
                             "must share height and width")


def round_half_up(x: float) -> int:
    """Round with halves going up: 2.5 -> 3. Python's round() would give 2."""
    return int(np.floor(x + 0.5))
