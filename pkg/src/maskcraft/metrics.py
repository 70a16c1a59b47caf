"""Faithfulness metrics: deletion/insertion curves, AUC, pointing IOU,
and per-checkpoint convergence tracking.

Curves follow the causal recipe: rank pixels by saliency (descending,
row-major on ties), then progressively remove them from the image
(deletion) or restore them over a baseline (insertion), scoring after each
chunk. A faithful map makes deletion fall fast and insertion rise fast.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ._validation import check_grid, check_image, check_same_hw
from .explainer import OptimizerConfig, iterate_states, normalize_saliency
from .grids import bilinear_resize

BLUR_SIGMA = 5.0
BLUR_RADIUS = 5  # 11x11 kernel


class DegenerateMetricWarning(UserWarning):
    """A metric was computed on inputs with no usable structure."""


@dataclass
class MetricCurve:
    """Score trajectory over the fraction of pixels processed.

    xs runs strictly increasing from 0 to 1; ys holds one model score per
    point, starting at the untouched input and ending with every pixel
    processed.
    """

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if self.xs.ndim != 1 or self.xs.size < 2 or self.xs.shape != self.ys.shape:
            raise ValueError(f"curve needs matching 1-D xs/ys of length >= 2, "
                             f"got {self.xs.shape} and {self.ys.shape}")
        if self.xs[0] != 0.0 or self.xs[-1] != 1.0:
            raise ValueError("curve xs must start at 0 and end at 1")
        if not np.all(np.diff(self.xs) > 0):
            raise ValueError("curve xs must be strictly increasing")
        if not np.all(np.isfinite(self.ys)):
            raise ValueError("curve ys must be finite")


@dataclass
class AnnotationBox:
    """Ground-truth rectangle: x/y is the left/top corner, in pixels."""

    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        self.x, self.y = int(self.x), int(self.y)
        self.width, self.height = int(self.width), int(self.height)
        if self.width < 1 or self.height < 1:
            raise ValueError(f"annotation box {self.width}x{self.height} must have "
                             "positive size")
        if self.x < 0 or self.y < 0:
            raise ValueError("annotation box origin must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "AnnotationBox":
        try:
            return cls(x=data["x"], y=data["y"], width=data["width"],
                       height=data["height"])
        except KeyError as exc:
            raise ValueError(f"annotation JSON lacks key {exc.args[0]!r}") from exc

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "width": self.width, "height": self.height}


@dataclass
class ConvergencePoint:
    iteration: int
    insertion_auc: float
    deletion_auc: float


@dataclass
class ConvergenceTrace:
    points: list[ConvergencePoint] = field(default_factory=list)


def saliency_order(saliency) -> np.ndarray:
    """Flat pixel indices by descending saliency; ties break row-major."""
    grid = check_grid(saliency, "saliency")
    return np.argsort(-grid.ravel(), kind="stable")


def blurred_baseline(image) -> np.ndarray:
    """Gaussian blur (sigma 5, 11x11 kernel) per channel, reflect borders."""
    img = check_image(image)
    out = np.empty_like(img)
    for channel in range(3):
        out[:, :, channel] = gaussian_filter(img[:, :, channel], sigma=BLUR_SIGMA,
                                             radius=BLUR_RADIUS)
    return out


def _step_chunks(pixel_count: int, steps: int) -> int:
    if steps < 1:
        raise ValueError(f"steps {steps} must be >= 1")
    return math.ceil(pixel_count / steps)


def _scored_curve(start: np.ndarray, replacement: np.ndarray, order: np.ndarray,
                  backend, target: int, steps: int) -> MetricCurve:
    """Walk the pixel order in chunks, swapping in replacement pixels.

    One score call per point; chunk count is ceil(HW / chunk) so the last
    chunk may be short but xs still ends exactly at 1.
    """
    height, width = start.shape[:2]
    pixel_count = height * width
    chunk = _step_chunks(pixel_count, steps)
    chunk_count = math.ceil(pixel_count / chunk)

    work = start.reshape(pixel_count, 3).copy()
    source = replacement.reshape(pixel_count, 3)
    xs = [0.0]
    ys = [float(backend.score(start)[target])]
    for k in range(1, chunk_count + 1):
        picked = order[(k - 1) * chunk:k * chunk]
        work[picked] = source[picked]
        xs.append(min(k * chunk, pixel_count) / pixel_count)
        ys.append(float(backend.score(work.reshape(height, width, 3))[target]))
    return MetricCurve(xs=np.asarray(xs), ys=np.asarray(ys))


def deletion_curve(image, saliency, backend, target: int, steps: int = 100) -> MetricCurve:
    """Remove pixels most-salient-first (set to zero) and score each stage."""
    img = check_image(image)
    sal = check_grid(saliency, "saliency")
    check_same_hw(img, sal, "image", "saliency")
    order = saliency_order(sal)
    return _scored_curve(img, np.zeros_like(img), order, backend, int(target), steps)


def insertion_curve(image, saliency, backend, target: int, steps: int = 100,
                    baseline: str = "zeros") -> MetricCurve:
    """Restore pixels most-salient-first over a zeros or blurred baseline."""
    img = check_image(image)
    sal = check_grid(saliency, "saliency")
    check_same_hw(img, sal, "image", "saliency")
    if baseline == "zeros":
        start = np.zeros_like(img)
    elif baseline == "blur":
        start = blurred_baseline(img)
    else:
        raise ValueError(f"unknown baseline {baseline!r}; expected 'zeros' or 'blur'")
    order = saliency_order(sal)
    return _scored_curve(start, img, order, backend, int(target), steps)


def auc(curve: MetricCurve) -> float:
    """Trapezoidal area under the curve over the [0, 1] fraction axis."""
    return float(np.trapezoid(curve.ys, curve.xs))


def pointing_iou(saliency, box: AnnotationBox, threshold: float = 0.5) -> float:
    """Percent IOU between thresholded saliency and an annotation box.

    The salient set keeps pixels at or above threshold times the map's
    maximum, so the result is invariant to uniform positive scaling.
    """
    sal = check_grid(saliency, "saliency")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} must lie in [0, 1]")
    if box.y + box.height > sal.shape[0] or box.x + box.width > sal.shape[1]:
        raise ValueError(f"annotation box {box.to_dict()} falls outside saliency "
                         f"{sal.shape[0]}x{sal.shape[1]}")
    salient = sal >= threshold * sal.max()
    truth = np.zeros_like(salient)
    truth[box.y:box.y + box.height, box.x:box.x + box.width] = True
    union = np.logical_or(salient, truth).sum()
    if union == 0:
        warnings.warn("both the salient set and the annotation are empty",
                      DegenerateMetricWarning, stacklevel=2)
        return 0.0
    intersection = np.logical_and(salient, truth).sum()
    return 100.0 * float(intersection) / float(union)


def convergence_track(image, target: int, backend, config: OptimizerConfig,
                      checkpoints, steps: int = 100,
                      baseline: str = "zeros") -> ConvergenceTrace:
    """Insertion/deletion AUC of the evolving mask at chosen iterations.

    Runs the same seeded search as explain() and snapshots the upsampled,
    normalized mask whenever the iteration counter hits a checkpoint.
    Deterministic for a fixed seed.
    """
    marks = [int(c) for c in checkpoints]
    if not marks:
        raise ValueError("need at least one checkpoint")
    if any(b <= a for a, b in zip(marks, marks[1:])):
        raise ValueError(f"checkpoints {marks} must be strictly increasing")
    if marks[0] < 1 or marks[-1] > config.iterations:
        raise ValueError(f"checkpoints {marks} must lie in [1, {config.iterations}]")

    img = check_image(image)
    height, width = img.shape[:2]
    wanted = set(marks)
    points = []
    for state in iterate_states(img, target, backend, config):
        if state.iteration in wanted:
            snapshot = normalize_saliency(bilinear_resize(state.mask, height, width))
            points.append(ConvergencePoint(
                iteration=state.iteration,
                insertion_auc=auc(insertion_curve(img, snapshot, backend, target,
                                                  steps, baseline)),
                deletion_auc=auc(deletion_curve(img, snapshot, backend, target,
                                                steps)),
            ))
    return ConvergenceTrace(points=points)
