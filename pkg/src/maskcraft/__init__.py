"""Saliency maps for black-box image classifiers.

maskcraft searches for a low-resolution occlusion mask whose surviving
pixels keep the classifier committed to a chosen class, upsamples it into
a per-pixel saliency map, scores maps with deletion and insertion curves,
and can regrow the salient region from a generative backend to test how
much of the outcome it carries.
"""

__version__ = "0.1.0"

from .backends import (ConstantClassifier, ExternalClassifier,
                       PlantedClassifier, parse_backend, score_batch,
                       spawn_external)
from .exceptions import (BackendError, ConfigError, DegenerateSaliencyError,
                         DimensionError, LatentSearchError, MaskcraftError,
                         ProtocolError, UndefinedStatisticError)
from .explainer import (OptimizerConfig, OptimizerState, SaliencyExplainer,
                        SaliencyResult, TraceRecord, explain, init_state,
                        iterate_states, normalize_saliency, step)
from .generative import (ConstantDiscriminator, ExemplarGenerator,
                         ExternalGenerative, LinearGenerator, parse_generative)
from .grids import (apply_mask, as_rng, bilinear_resize, make_rng,
                    sample_subset, total_variation)
from .image_io import (load_float_grid, load_image, save_float_grid,
                       save_heatmap_png, save_image_png)
from .metrics import (AnnotationBox, ConvergencePoint, ConvergenceTrace,
                      DegenerateMetricWarning, MetricCurve, auc,
                      blurred_baseline, convergence_track, deletion_curve,
                      insertion_curve, pointing_iou, saliency_order)
from .reconstruction import (DEFAULT_FACTORS, BoundingBoxGrid, FactorRecord,
                             LatentOptions, LatentReconstructor,
                             ReconstructionReport, SampleRecord,
                             batch_reconstruct, bounding_box, box_sweep,
                             context_loss, discriminative_loss, optimize_latent,
                             reconstruct, scale_box, t_score, total_loss,
                             weight_mask)
from .wire import WireClient, decode_image_payload, encode_image_payload

__all__ = [
    "AnnotationBox",
    "BackendError",
    "BoundingBoxGrid",
    "ConfigError",
    "ConstantClassifier",
    "ConstantDiscriminator",
    "ConvergencePoint",
    "ConvergenceTrace",
    "DEFAULT_FACTORS",
    "DegenerateMetricWarning",
    "DegenerateSaliencyError",
    "DimensionError",
    "ExemplarGenerator",
    "ExternalClassifier",
    "ExternalGenerative",
    "FactorRecord",
    "LatentOptions",
    "LatentReconstructor",
    "LatentSearchError",
    "LinearGenerator",
    "MaskcraftError",
    "MetricCurve",
    "OptimizerConfig",
    "OptimizerState",
    "PlantedClassifier",
    "ProtocolError",
    "ReconstructionReport",
    "SaliencyExplainer",
    "SaliencyResult",
    "SampleRecord",
    "TraceRecord",
    "UndefinedStatisticError",
    "WireClient",
    "apply_mask",
    "as_rng",
    "auc",
    "batch_reconstruct",
    "bilinear_resize",
    "blurred_baseline",
    "bounding_box",
    "box_sweep",
    "context_loss",
    "convergence_track",
    "decode_image_payload",
    "deletion_curve",
    "discriminative_loss",
    "encode_image_payload",
    "explain",
    "init_state",
    "insertion_curve",
    "iterate_states",
    "load_float_grid",
    "load_image",
    "make_rng",
    "normalize_saliency",
    "optimize_latent",
    "parse_backend",
    "parse_generative",
    "pointing_iou",
    "reconstruct",
    "saliency_order",
    "sample_subset",
    "save_float_grid",
    "save_heatmap_png",
    "save_image_png",
    "scale_box",
    "score_batch",
    "spawn_external",
    "step",
    "t_score",
    "total_loss",
    "total_variation",
    "weight_mask",
]
