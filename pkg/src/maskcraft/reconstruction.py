"""Generative reconstruction of the salient region.

Workflow: threshold the saliency map into a bounding box, weight the pixels
just outside the box by how much box they see, then search the generator's
latent space for the code whose output matches the image on that weighted
band. Blending the generator output into the box yields a reconstruction
whose classification tells how much of the model's decision the box carries.
The latent search is gradient-free, so any black-box generator works.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import uniform_filter
from sklearn.base import BaseEstimator

from ._validation import check_grid, check_image_like, check_same_hw, round_half_up
from .exceptions import (BackendError, DegenerateSaliencyError, DimensionError,
                         LatentSearchError, UndefinedStatisticError)
from .grids import as_rng, bilinear_resize, make_rng

log = logging.getLogger(__name__)


@dataclass
class BoundingBoxGrid:
    """A rectangle plus the image dimensions it lives in.

    grid() materializes the binary mask B: 1 inside the box, 0 outside.
    """

    top: int
    left: int
    height: int
    width: int
    image_height: int
    image_width: int

    def __post_init__(self):
        for name in ("top", "left", "height", "width", "image_height", "image_width"):
            setattr(self, name, int(getattr(self, name)))
        if self.height < 1 or self.width < 1:
            raise ValueError(f"box {self.height}x{self.width} must have positive size")
        if self.top < 0 or self.left < 0:
            raise ValueError("box origin must be non-negative")
        if (self.top + self.height > self.image_height
                or self.left + self.width > self.image_width):
            raise DimensionError(f"box {self.box} falls outside image "
                                 f"{self.image_height}x{self.image_width}")

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.top, self.left, self.height, self.width)

    def grid(self) -> np.ndarray:
        mask = np.zeros((self.image_height, self.image_width), dtype=np.float64)
        mask[self.top:self.top + self.height, self.left:self.left + self.width] = 1.0
        return mask


def bounding_box(saliency, threshold: float = 0.5) -> BoundingBoxGrid:
    """Tightest rectangle around pixels at or above threshold * max."""
    sal = check_grid(saliency, "saliency")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} must lie in [0, 1]")
    if sal.max() == sal.min():
        raise DegenerateSaliencyError("saliency map is constant; no region to box")
    rows, cols = np.nonzero(sal >= threshold * sal.max())
    top, bottom = int(rows.min()), int(rows.max())
    left, right = int(cols.min()), int(cols.max())
    return BoundingBoxGrid(top=top, left=left, height=bottom - top + 1,
                           width=right - left + 1,
                           image_height=sal.shape[0], image_width=sal.shape[1])


def scale_box(box: BoundingBoxGrid, factor: float) -> BoundingBoxGrid:
    """Shrink or grow a box about its center; sides round but stay >= 1."""
    if factor <= 0.0 or not np.isfinite(factor):
        raise ValueError(f"factor {factor} must be positive and finite")
    new_height = max(1, round_half_up(box.height * factor))
    new_width = max(1, round_half_up(box.width * factor))
    if new_height > box.image_height or new_width > box.image_width:
        raise DimensionError(f"scaled box {new_height}x{new_width} exceeds image "
                             f"{box.image_height}x{box.image_width}")
    top = box.top + (box.height - new_height) // 2
    left = box.left + (box.width - new_width) // 2
    top = min(max(top, 0), box.image_height - new_height)
    left = min(max(left, 0), box.image_width - new_width)
    return BoundingBoxGrid(top=top, left=left, height=new_height, width=new_width,
                           image_height=box.image_height,
                           image_width=box.image_width)


def _resize_box(box: BoundingBoxGrid, height: int, width: int) -> BoundingBoxGrid:
    """Map box coordinates onto a grid of different resolution."""
    if (height, width) == (box.image_height, box.image_width):
        return box
    row_scale = height / box.image_height
    col_scale = width / box.image_width
    top = int(np.floor(box.top * row_scale))
    left = int(np.floor(box.left * col_scale))
    bottom = int(np.ceil((box.top + box.height) * row_scale))
    right = int(np.ceil((box.left + box.width) * col_scale))
    return BoundingBoxGrid(top=top, left=left,
                           height=max(1, min(bottom, height) - top),
                           width=max(1, min(right, width) - left),
                           image_height=height, image_width=width)


def weight_mask(box: BoundingBoxGrid, kernel_size: int = 15) -> np.ndarray:
    """Context weights: box visibility through a uniform kernel, zero inside.

    W = (1 - B) * conv(B, K) with K a kernel_size^2 box kernel of weight
    1/kernel_size^2 and zero padding, so a pixel's weight is the fraction of
    its window covered by the box. Support hugs the box boundary within
    kernel_size // 2 pixels.
    """
    kernel_size = int(kernel_size)
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size {kernel_size} must be odd and positive")
    box_grid = box.grid()
    seen = uniform_filter(box_grid, size=kernel_size, mode="constant", cval=0.0)
    weights = (1.0 - box_grid) * seen
    return np.clip(weights, 0.0, 1.0)


def context_loss(z, image, weights, generator) -> float:
    """Weighted squared error between G(z) and the image, all channels."""
    img = check_image_like(image)
    w = check_grid(weights, "weights")
    check_same_hw(img, w, "image", "weights")
    generated = generator.generate(z)
    if generated.shape != img.shape:
        raise DimensionError(f"generator output {generated.shape} does not match "
                             f"image {img.shape}")
    diff = generated - img
    return float(np.sum(w[:, :, None] * diff * diff))


def discriminative_loss(z, discriminator, generator) -> float:
    """Negated discriminator score of G(z); lower means more real."""
    return -float(discriminator.discriminate(generator.generate(z)))


def total_loss(z, image, weights, generator, discriminator=None,
               lambda_dis: float = 0.003) -> float:
    """context_loss + lambda_dis * discriminative_loss.

    With lambda_dis = 0 the discriminator is never invoked.
    """
    loss = context_loss(z, image, weights, generator)
    if lambda_dis != 0.0:
        if discriminator is None:
            raise ValueError("lambda_dis != 0 needs a discriminator")
        loss += lambda_dis * discriminative_loss(z, discriminator, generator)
    return loss


@dataclass
class LatentOptions:
    """Latent search settings.

    step_size is the desired length of the first parameter update; later
    steps decay from it. perturbation_scale sets the two-sided probe width.
    """

    iterations: int = 300
    lambda_dis: float = 0.003
    step_size: float = 0.5
    perturbation_scale: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.iterations < 0:
            raise ValueError(f"iterations {self.iterations} must be >= 0")
        if self.step_size <= 0 or self.perturbation_scale <= 0:
            raise ValueError("step_size and perturbation_scale must be positive")


def optimize_latent(image, weights, generator, discriminator=None,
                    options: LatentOptions | None = None):
    """Simultaneous-perturbation search for the best latent code.

    Starts from z0 ~ N(0, 1), probes the loss at z +/- c_t * delta with a
    Rademacher delta each iteration (two loss evaluations), and follows the
    resulting gradient estimate with a decaying gain calibrated on the first
    estimate's magnitude. Returns (best z seen, best-so-far loss trace);
    the trace has iterations + 1 entries and never increases. Deterministic
    for a fixed seed. Backend failures abort with the partial trace attached.
    """
    opts = options if options is not None else LatentOptions()
    opts.validate()
    rng = make_rng(opts.seed)
    dim = int(generator.latent_dim)
    z = rng.standard_normal(dim)

    def loss(vec: np.ndarray) -> float:
        return total_loss(vec, image, weights, generator, discriminator,
                          opts.lambda_dis)

    try:
        best_loss = loss(z)
    except BackendError as exc:
        raise LatentSearchError(str(exc), partial_trace=[]) from exc
    best_z = z.copy()
    trace = [best_loss]

    stability = max(1.0, 0.1 * opts.iterations)
    gain = None
    for t in range(1, opts.iterations + 1):
        c = opts.perturbation_scale / t ** 0.101
        delta = rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
        try:
            loss_plus = loss(z + c * delta)
            loss_minus = loss(z - c * delta)
        except BackendError as exc:
            raise LatentSearchError(str(exc), partial_trace=trace) from exc
        if loss_plus < best_loss:
            best_loss, best_z = loss_plus, z + c * delta
        if loss_minus < best_loss:
            best_loss, best_z = loss_minus, z - c * delta
        grad = (loss_plus - loss_minus) / (2.0 * c) * delta
        if gain is None:
            norm = float(np.linalg.norm(grad))
            gain = opts.step_size * (1.0 + stability) ** 0.602 / max(norm, 1e-12)
        z = z - gain / (t + stability) ** 0.602 * grad
        trace.append(best_loss)
    return best_z, trace


def reconstruct(image, box: BoundingBoxGrid, generator, z) -> np.ndarray:
    """Blend G(z) into the box; pixels outside the box stay bit-identical."""
    img = check_image_like(image)
    if (box.image_height, box.image_width) != img.shape[:2]:
        raise DimensionError(f"box lives in {box.image_height}x{box.image_width}, "
                             f"image is {img.shape[0]}x{img.shape[1]}")
    generated = generator.generate(z)
    if generated.shape != img.shape:
        raise DimensionError(f"generator output {generated.shape} does not match "
                             f"image {img.shape}")
    inside = box.grid().astype(bool)[:, :, None]
    return np.where(inside, generated, img)


def t_score(a, b) -> float:
    """Welch's t statistic between two samples (unequal variances).

    Positive when a's mean exceeds b's. Undefined (raises) when both
    samples have zero variance.
    """
    sample_a = np.asarray(a, dtype=np.float64).ravel()
    sample_b = np.asarray(b, dtype=np.float64).ravel()
    if sample_a.size < 2 or sample_b.size < 2:
        raise UndefinedStatisticError("t_score needs at least two values per sample")
    if not (np.all(np.isfinite(sample_a)) and np.all(np.isfinite(sample_b))):
        raise ValueError("t_score samples must be finite")
    spread = (sample_a.var(ddof=1) / sample_a.size
              + sample_b.var(ddof=1) / sample_b.size)
    if spread == 0.0:
        raise UndefinedStatisticError("zero variance in both samples; t is undefined")
    return float((sample_a.mean() - sample_b.mean()) / np.sqrt(spread))


@dataclass
class SampleRecord:
    """Outcome of one latent search sample."""

    index: int
    z: np.ndarray | None = None
    loss: float | None = None
    target_score: float | None = None
    accepted: bool = False
    t: float | None = None
    error: str | None = None
    reconstruction: np.ndarray | None = None


@dataclass
class ReconstructionReport:
    samples: list[SampleRecord] = field(default_factory=list)
    accepted_count: int = 0
    mean_accuracy: float = 0.0

    @property
    def mean_loss(self) -> float:
        losses = [s.loss for s in self.samples if s.loss is not None]
        return float(np.mean(losses)) if losses else float("nan")


def _to_classifier_dims(image: np.ndarray, classifier,
                        fallback_hw: tuple[int, int]) -> np.ndarray:
    want = getattr(classifier, "input_shape", None) or fallback_hw
    if tuple(image.shape[:2]) == tuple(want):
        return image
    return bilinear_resize(image, want[0], want[1], allow_downscale=True)


def batch_reconstruct(image, box: BoundingBoxGrid, weights, generator,
                      discriminator, classifier, target: int, samples: int = 64,
                      options: LatentOptions | None = None,
                      rng=None) -> ReconstructionReport:
    """Run `samples` independent latent searches and score the blends.

    Each sample draws its own seed from the run RNG, so the accepted set and
    every z are reproducible for a fixed seed. Backend failures are recorded
    per sample and the batch continues. A sample is accepted when the
    classifier's argmax over the reconstruction equals the target class.
    """
    if samples < 1:
        raise ValueError(f"samples {samples} must be >= 1")
    opts = options if options is not None else LatentOptions()
    rng = as_rng(rng if rng is not None else opts.seed)
    img = check_image_like(image)
    w = check_grid(weights, "weights")
    check_same_hw(img, w, "image", "weights")
    if (box.image_height, box.image_width) != img.shape[:2]:
        raise DimensionError(f"box lives in {box.image_height}x{box.image_width}, "
                             f"image is {img.shape[0]}x{img.shape[1]}")

    # the latent search runs at the generator's native resolution
    gen_hw = (int(generator.height), int(generator.width))
    if tuple(img.shape[:2]) == gen_hw:
        img_g, weights_g, box_g = img, w, box
    else:
        img_g = bilinear_resize(img, gen_hw[0], gen_hw[1], allow_downscale=True)
        weights_g = bilinear_resize(w, gen_hw[0], gen_hw[1], allow_downscale=True)
        box_g = _resize_box(box, gen_hw[0], gen_hw[1])
    inside = box_g.grid().astype(bool)

    report = ReconstructionReport()
    accepted_scores = []
    for index in range(int(samples)):
        seed = int(rng.integers(0, 2 ** 63 - 1))
        sample_opts = replace(opts, seed=seed)
        record = SampleRecord(index=index)
        try:
            z, trace = optimize_latent(img_g, weights_g, generator, discriminator,
                                       sample_opts)
            blended = reconstruct(img_g, box_g, generator, z)
            scored = classifier.score(_to_classifier_dims(blended, classifier,
                                                          tuple(img.shape[:2])))
            record.z = z
            record.loss = trace[-1]
            record.target_score = float(scored[int(target)])
            record.accepted = bool(int(np.argmax(scored)) == int(target))
            record.reconstruction = blended
            try:
                record.t = t_score(blended[inside], img_g[inside])
            except UndefinedStatisticError:
                record.t = None
            if record.accepted:
                accepted_scores.append(record.target_score)
        except BackendError as exc:
            log.warning("sample %d failed: %s", index, exc)
            record.error = str(exc)
        report.samples.append(record)
    report.accepted_count = len(accepted_scores)
    report.mean_accuracy = float(np.mean(accepted_scores)) if accepted_scores else 0.0
    return report


@dataclass
class FactorRecord:
    factor: float
    accepted_count: int
    mean_accuracy: float
    mean_loss: float


DEFAULT_FACTORS = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)


def box_sweep(image, saliency, generator, discriminator, classifier, target: int,
              factors=DEFAULT_FACTORS, samples: int = 64,
              options: LatentOptions | None = None, rng=None,
              threshold: float = 0.5, kernel_size: int = 15) -> list[FactorRecord]:
    """Shrink the saliency box through `factors` and reconstruct at each size.

    Smaller boxes leave more context evidence, so the mean optimal loss
    should not grow as the factor drops.
    """
    factor_list = [float(f) for f in factors]
    if not factor_list:
        raise ValueError("need at least one factor")
    opts = options if options is not None else LatentOptions()
    rng = as_rng(rng if rng is not None else opts.seed)
    base_box = bounding_box(saliency, threshold)
    records = []
    for factor in factor_list:
        box = scale_box(base_box, factor)
        weights = weight_mask(box, kernel_size)
        batch_seed = int(rng.integers(0, 2 ** 63 - 1))
        report = batch_reconstruct(image, box, weights, generator, discriminator,
                                   classifier, target, samples=samples,
                                   options=opts, rng=make_rng(batch_seed))
        records.append(FactorRecord(factor=factor,
                                    accepted_count=report.accepted_count,
                                    mean_accuracy=report.mean_accuracy,
                                    mean_loss=report.mean_loss))
    return records


class LatentReconstructor(BaseEstimator):
    """Estimator wrapper around the box/weights/search/blend pipeline.

    fit(X, saliency=...) boxes the saliency map, builds the context weights,
    and runs batch_reconstruct against X. Results land in box_, weights_,
    and report_.
    """

    def __init__(self, generator=None, discriminator=None, classifier=None,
                 target: int = 0, samples: int = 64, iterations: int = 300,
                 lambda_dis: float = 0.003, step_size: float = 0.5,
                 perturbation_scale: float = 0.1, box_threshold: float = 0.5,
                 kernel_size: int = 15, random_state: int = 0):
        self.generator = generator
        self.discriminator = discriminator
        self.classifier = classifier
        self.target = target
        self.samples = samples
        self.iterations = iterations
        self.lambda_dis = lambda_dis
        self.step_size = step_size
        self.perturbation_scale = perturbation_scale
        self.box_threshold = box_threshold
        self.kernel_size = kernel_size
        self.random_state = random_state

    def _options(self) -> LatentOptions:
        return LatentOptions(iterations=self.iterations, lambda_dis=self.lambda_dis,
                             step_size=self.step_size,
                             perturbation_scale=self.perturbation_scale,
                             seed=self.random_state)

    def fit(self, X, y=None, saliency=None):
        if saliency is None:
            raise ValueError("LatentReconstructor.fit needs saliency=<map>")
        if self.generator is None or self.classifier is None:
            raise ValueError("LatentReconstructor needs a generator and a classifier")
        self.box_ = bounding_box(saliency, self.box_threshold)
        self.weights_ = weight_mask(self.box_, self.kernel_size)
        self.report_ = batch_reconstruct(
            X, self.box_, self.weights_, self.generator, self.discriminator,
            self.classifier, self.target, samples=self.samples,
            options=self._options(), rng=make_rng(self.random_state))
        return self
