"""Grid primitives: seeded RNG, bilinear resizing, masking, smoothness, sampling.

Everything here is deterministic given the same inputs and the same generator
state; nothing touches global RNG state.
"""

from __future__ import annotations

import numpy as np

from ._validation import check_grid, check_image_like, check_same_hw
from .exceptions import DimensionError


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator.

    PCG64 streams are documented and stable across platforms for a given
    numpy version line, so the same seed replays the same draws everywhere.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_rng(seed_or_rng) -> np.random.Generator:
    """Pass through a Generator, or build one from an integer seed."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(seed_or_rng)


def _axis_plan(src: int, dst: int):
    """Source coordinates for one axis under the half-pixel-center convention.

    src_x = (dst_x + 0.5) * (src / dst) - 0.5, clamped to [0, src - 1].
    Returns (lower index, upper index, fractional weight toward upper).
    """
    scale = src / dst
    x = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    x = np.clip(x, 0.0, float(src - 1))
    lo = np.floor(x).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, x - lo


def bilinear_resize(grid, target_height: int, target_width: int,
                    allow_downscale: bool = False) -> np.ndarray:
    """Bilinearly resample a 2-D grid or (H, W, C) image to a new size.

    Uses half-pixel centers, so constants are preserved exactly and every
    output value is a convex combination of the four surrounding inputs.
    By default the target must be at least as large as the source in both
    dims; pass allow_downscale=True where shrinking is intended.
    """
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise DimensionError(f"expected a 2-D grid or (H, W, C) image, got shape {arr.shape}")
    height, width = arr.shape[:2]
    if height < 1 or width < 1:
        raise DimensionError(f"source must be non-empty, got {arr.shape}")
    target_height = int(target_height)
    target_width = int(target_width)
    if target_height < 1 or target_width < 1:
        raise DimensionError(f"target {target_height}x{target_width} must be positive")
    if not allow_downscale and (target_height < height or target_width < width):
        raise DimensionError(
            f"target {target_height}x{target_width} is smaller than source "
            f"{height}x{width}; pass allow_downscale=True to shrink")

    r_lo, r_hi, r_frac = _axis_plan(height, target_height)
    c_lo, c_hi, c_frac = _axis_plan(width, target_width)
    if arr.ndim == 3:
        r_frac = r_frac[:, None, None]
        c_frac = c_frac[None, :, None]
    else:
        r_frac = r_frac[:, None]
        c_frac = c_frac[None, :]

    top = arr[r_lo][:, c_lo] * (1.0 - c_frac) + arr[r_lo][:, c_hi] * c_frac
    bottom = arr[r_hi][:, c_lo] * (1.0 - c_frac) + arr[r_hi][:, c_hi] * c_frac
    return top * (1.0 - r_frac) + bottom * r_frac


def apply_mask(image, mask) -> np.ndarray:
    """Elementwise product of an (H, W, 3) image with an (H, W) mask."""
    img = check_image_like(image)
    m = check_grid(mask, "mask")
    check_same_hw(img, m, "image", "mask")
    return img * m[:, :, None]


def total_variation(mask) -> float:
    """Sum of squared horizontal and vertical neighbor differences."""
    m = check_grid(mask, "mask")
    horiz = np.sum((m[:, 1:] - m[:, :-1]) ** 2)
    vert = np.sum((m[1:, :] - m[:-1, :]) ** 2)
    return float(horiz + vert)


def sample_subset(items, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of `count` rows of `items`, without replacement.

    The selection preserves the input order of the surviving rows, so a
    sorted index array stays sorted. Consumes exactly one choice() call.
    """
    arr = np.asarray(items)
    if arr.ndim < 1:
        raise DimensionError("items must be at least 1-D")
    n = arr.shape[0]
    count = int(count)
    if count < 0 or count > n:
        raise ValueError(f"count {count} outside [0, {n}]")
    if count == 0:
        return arr[:0].copy()
    picked = rng.choice(n, size=count, replace=False)
    picked.sort()
    return arr[picked]
