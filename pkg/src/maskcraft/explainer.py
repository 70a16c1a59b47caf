"""Randomized mask search over a coarse grid, driven only by model scores.

The search never looks inside the model. Each step upsamples the current
low-resolution mask to image size, scores the masked image, and uses that
single scalar to rework the mask: a score-sized share of the active cells
survives (scaled by the score), a complementary share of the inactive cells
re-enters at the score's value, everything else drops to zero, and a
smoothness-coupled correction nudges the active cells. High-scoring masks
therefore churn little and lock in; low-scoring masks get largely rebuilt.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_image, round_half_up
from .exceptions import DimensionError
from .grids import apply_mask, bilinear_resize, make_rng, sample_subset, total_variation

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    """Knobs for the mask search.

    iterations: number of scoring steps (one model call each).
    grid: (rows, cols) of the low-resolution mask.
    initial_on_fraction: share of cells switched on at start.
    learning_rate: weight of the smoothness correction term.
    checkpoint_every: trace recording stride, in iterations.
    """

    iterations: int = 1000
    grid: tuple[int, int] = (7, 7)
    initial_on_fraction: float = 0.5
    learning_rate: float = 1.0
    seed: int = 0
    checkpoint_every: int = 100

    def validate(self) -> None:
        rows, cols = self.grid
        if int(rows) < 1 or int(cols) < 1:
            raise ValueError(f"grid {self.grid} must be at least 1x1")
        if self.iterations < 0:
            raise ValueError(f"iterations {self.iterations} must be >= 0")
        if not 0.0 <= self.initial_on_fraction <= 1.0:
            raise ValueError(f"initial_on_fraction {self.initial_on_fraction} "
                             "must lie in [0, 1]")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every {self.checkpoint_every} must be >= 1")
        if not np.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite")


@dataclass
class OptimizerState:
    """Search state after `iteration` steps.

    on_set and off_set are sorted flat cell indices partitioning the grid;
    every off cell holds exactly 0 in the mask. prev_score is None before
    the first step has measured anything.
    """

    mask: np.ndarray
    on_set: np.ndarray
    off_set: np.ndarray
    prev_score: float | None
    prev_variation: float
    iteration: int


@dataclass
class TraceRecord:
    iteration: int
    score: float
    variation: float


@dataclass
class SaliencyResult:
    """Final saliency at image resolution plus the raw grid and trace."""

    saliency: np.ndarray
    raw_mask: np.ndarray
    trace: list[TraceRecord] = field(default_factory=list)


def normalize_saliency(grid) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant grid maps to all zeros."""
    arr = np.asarray(grid, dtype=np.float64)
    span = arr.max() - arr.min()
    if span > 0.0:
        return (arr - arr.min()) / span
    return np.zeros_like(arr)


def init_state(config: OptimizerConfig, rng: np.random.Generator) -> OptimizerState:
    """Random initial mask: the chosen on-cells at 1, everything else 0."""
    config.validate()
    rows, cols = int(config.grid[0]), int(config.grid[1])
    cells = rows * cols
    want_on = min(max(round_half_up(config.initial_on_fraction * cells), 0), cells)
    on_set = sample_subset(np.arange(cells), want_on, rng)
    flat = np.zeros(cells, dtype=np.float64)
    flat[on_set] = 1.0
    is_on = np.zeros(cells, dtype=bool)
    is_on[on_set] = True
    off_set = np.flatnonzero(~is_on)
    mask = flat.reshape(rows, cols)
    return OptimizerState(
        mask=mask,
        on_set=on_set.astype(np.intp),
        off_set=off_set.astype(np.intp),
        prev_score=None,
        prev_variation=total_variation(mask),
        iteration=0,
    )


def _check_target(backend, target: int) -> None:
    count = getattr(backend, "class_count", None)
    if count is not None and not 0 <= int(target) < int(count):
        raise ValueError(f"target class {target} outside backend's {count} classes")


def step(state: OptimizerState, image: np.ndarray, target: int, backend,
         config: OptimizerConfig, rng: np.random.Generator) -> OptimizerState:
    """One search step; returns a fresh state, never mutating the input.

    Exactly one backend score call. Random draws: one subset draw from the
    on-set and one from the off-set, skipped when the respective count is 0.
    """
    _check_target(backend, target)
    rows, cols = state.mask.shape
    height, width = image.shape[:2]
    upsampled = bilinear_resize(state.mask, height, width)
    scores = backend.score(apply_mask(image, upsampled))
    raw = float(scores[int(target)])
    p = min(max(raw, 0.0), 1.0)
    if p != raw:
        log.info("iteration %d: target score %.6g clamped to [0, 1]",
                 state.iteration + 1, raw)

    n_on = int(state.on_set.size)
    n_off = int(state.off_set.size)
    keep_count = min(max(round_half_up(n_on * p), 0), n_on)
    wake_count = min(max(round_half_up(n_off * (1.0 - p)), 0), n_off)
    kept = sample_subset(state.on_set, keep_count, rng)
    woken = sample_subset(state.off_set, wake_count, rng)

    flat = np.zeros(rows * cols, dtype=np.float64)
    flat[kept] = state.mask.ravel()[kept] * p
    flat[woken] = p
    on_set = np.concatenate([kept, woken])
    on_set.sort()
    is_on = np.zeros(rows * cols, dtype=bool)
    is_on[on_set] = True
    off_set = np.flatnonzero(~is_on)

    variation = total_variation(flat.reshape(rows, cols))
    delta_v = variation - state.prev_variation
    delta_p = 0.0 if state.prev_score is None else p - state.prev_score
    flat[on_set] += config.learning_rate * delta_v * delta_p
    np.clip(flat, 0.0, 1.0, out=flat)

    return OptimizerState(
        mask=flat.reshape(rows, cols),
        on_set=on_set,
        off_set=off_set,
        prev_score=p,
        prev_variation=variation,
        iteration=state.iteration + 1,
    )


def iterate_states(image, target: int, backend, config: OptimizerConfig):
    """Yield the state after each of the config's iterations, in order."""
    config.validate()
    img = check_image(image)
    shape = getattr(backend, "input_shape", None)
    if shape is not None and tuple(img.shape[:2]) != tuple(shape):
        raise DimensionError(f"backend expects {shape[0]}x{shape[1]} input, "
                             f"got {img.shape[0]}x{img.shape[1]}")
    _check_target(backend, target)
    grid_rows, grid_cols = config.grid
    if grid_rows > img.shape[0] or grid_cols > img.shape[1]:
        raise DimensionError(f"grid {config.grid} exceeds image "
                             f"{img.shape[0]}x{img.shape[1]}")
    rng = make_rng(config.seed)
    state = init_state(config, rng)
    for _ in range(config.iterations):
        state = step(state, img, target, backend, config, rng)
        yield state


def explain(image, target: int, backend, config: OptimizerConfig | None = None) -> SaliencyResult:
    """Run the full mask search and return the normalized saliency map.

    Issues exactly config.iterations backend score calls and nothing else.
    Deterministic: the same image, target, backend, and config reproduce the
    result bit for bit.
    """
    cfg = config if config is not None else OptimizerConfig()
    img = check_image(image)
    trace: list[TraceRecord] = []
    state = None
    for state in iterate_states(img, target, backend, cfg):
        at_stride = state.iteration % cfg.checkpoint_every == 0
        if at_stride or state.iteration == cfg.iterations:
            trace.append(TraceRecord(iteration=state.iteration,
                                     score=state.prev_score,
                                     variation=state.prev_variation))
    if state is None:
        rng = make_rng(cfg.seed)
        state = init_state(cfg, rng)
    upsampled = bilinear_resize(state.mask, img.shape[0], img.shape[1])
    return SaliencyResult(
        saliency=normalize_saliency(upsampled),
        raw_mask=state.mask.copy(),
        trace=trace,
    )


class SaliencyExplainer(BaseEstimator):
    """Estimator wrapper around explain() with sklearn parameter plumbing.

    fit(X) treats X as one (H, W, 3) image and stores the result in
    saliency_, raw_mask_, and trace_. transform(X) applies the fitted
    saliency map to an image of the same size as a soft mask.
    """

    def __init__(self, backend=None, target: int = 0, iterations: int = 1000,
                 grid: tuple[int, int] = (7, 7), initial_on_fraction: float = 0.5,
                 learning_rate: float = 1.0, checkpoint_every: int = 100,
                 random_state: int = 0):
        self.backend = backend
        self.target = target
        self.iterations = iterations
        self.grid = grid
        self.initial_on_fraction = initial_on_fraction
        self.learning_rate = learning_rate
        self.checkpoint_every = checkpoint_every
        self.random_state = random_state

    def _config(self) -> OptimizerConfig:
        return OptimizerConfig(
            iterations=self.iterations,
            grid=tuple(self.grid),
            initial_on_fraction=self.initial_on_fraction,
            learning_rate=self.learning_rate,
            seed=self.random_state,
            checkpoint_every=self.checkpoint_every,
        )

    def fit(self, X, y=None):
        if self.backend is None:
            raise ValueError("SaliencyExplainer needs a backend to score against")
        result = explain(X, self.target, self.backend, self._config())
        self.result_ = result
        self.saliency_ = result.saliency
        self.raw_mask_ = result.raw_mask
        self.trace_ = result.trace
        return self

    def transform(self, X):
        if not hasattr(self, "saliency_"):
            raise ValueError("this SaliencyExplainer is not fitted yet; call fit first")
        return apply_mask(check_image(X), self.saliency_)

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)
