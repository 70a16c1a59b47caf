"""Command-line front end.

Subcommands: explain, eval, reconstruct, sweep, convergence. Every run
resolves its configuration as CLI flags over config file over defaults
(unknown config keys are rejected), writes its outputs under --out, and
drops a manifest.json recording the command, the resolved config, input
hashes, the tool version, the output list, and the wall-clock duration.

Exit codes: 0 success, 1 usage or config error, 2 backend or protocol
error, 3 degenerate input. MASKCRAFT_LOG={error|info|debug} controls
logging verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backends import parse_backend
from .exceptions import (BackendError, ConfigError, DegenerateSaliencyError,
                         DimensionError, MaskcraftError, UndefinedStatisticError)
from .explainer import OptimizerConfig, explain
from .generative import parse_generative
from .grids import make_rng
from .image_io import (load_float_grid, load_image, save_float_grid,
                       save_heatmap_png, save_image_png)
from .metrics import (AnnotationBox, auc, convergence_track, deletion_curve,
                      insertion_curve, pointing_iou)
from .reconstruction import (LatentOptions, batch_reconstruct, bounding_box,
                             box_sweep, weight_mask)

log = logging.getLogger(__name__)


class UsageError(MaskcraftError):
    """Bad command line; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


DEFAULTS = {
    "iterations": 1000,
    "grid": [7, 7],
    "initial_on_fraction": 0.5,
    "learning_rate": 1.0,
    "seed": 0,
    "checkpoint_every": 100,
    "steps": 100,
    "baseline": "zeros",
    "threshold": 0.5,
    "kernel": 15,
    "samples": 64,
    "latent_dim": 64,
    "lambda_dis": 0.003,
    "latent_iterations": 300,
    "step_size": 0.5,
    "perturbation_scale": 0.1,
    "factors": [1.0, 0.9, 0.8, 0.7, 0.6, 0.5],
}


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return _is_int(value) or isinstance(value, float)


def _validate_config_value(key: str, value) -> None:
    int_keys = {"iterations", "seed", "checkpoint_every", "steps", "kernel",
                "samples", "latent_dim", "latent_iterations"}
    float_keys = {"initial_on_fraction", "learning_rate", "threshold",
                  "lambda_dis", "step_size", "perturbation_scale"}
    if key in int_keys:
        if not _is_int(value):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
    elif key in float_keys:
        if not _is_number(value):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
    elif key == "grid":
        if (not isinstance(value, (list, tuple)) or len(value) != 2
                or not all(_is_int(v) and v > 0 for v in value)):
            raise ConfigError(f"config key 'grid' must be two positive integers, "
                              f"got {value!r}")
    elif key == "baseline":
        if value not in ("zeros", "blur"):
            raise ConfigError(f"config key 'baseline' must be 'zeros' or 'blur', "
                              f"got {value!r}")
    elif key == "factors":
        if (not isinstance(value, (list, tuple)) or not value
                or not all(_is_number(v) for v in value)):
            raise ConfigError(f"config key 'factors' must be a non-empty list of "
                              f"numbers, got {value!r}")
    else:
        raise ConfigError(f"unknown config key {key!r}")


def load_config(path) -> dict:
    """Parse and validate a JSON config file; fail closed on unknown keys."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    for key, value in data.items():
        _validate_config_value(key, value)
    return data


def resolve_config(args, flag_map: dict) -> dict:
    """Defaults, then config file, then explicitly set CLI flags."""
    config = {key: (list(v) if isinstance(v, list) else v)
              for key, v in DEFAULTS.items()}
    if getattr(args, "config", None):
        config.update(load_config(args.config))
    for flag_attr, key in flag_map.items():
        value = getattr(args, flag_attr, None)
        if value is not None:
            _validate_config_value(key, value)
            config[key] = value
    return config


def _parse_grid(text: str) -> list[int]:
    for sep in ("x", ","):
        if sep in text:
            parts = text.split(sep)
            if len(parts) == 2:
                try:
                    return [int(parts[0]), int(parts[1])]
                except ValueError:
                    break
    raise argparse.ArgumentTypeError(f"grid {text!r} must look like ROWSxCOLS")


def _parse_factors(text: str) -> list[float]:
    try:
        values = [float(p) for p in text.split(",") if p != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"factors {text!r} must be comma-separated "
                                         "numbers") from exc
    if not values:
        raise argparse.ArgumentTypeError("factors list is empty")
    return values


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _jsonify(value):
    """JSON-safe copies: arrays to lists, numpy scalars to Python, NaN to null."""
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _write_json(data: dict, path: Path) -> Path:
    path.write_text(json.dumps(_jsonify(data), indent=2) + "\n")
    return path


class _RunWriter:
    """Collects outputs and input hashes, then writes the manifest."""

    def __init__(self, command: str, out_dir, config: dict):
        self.command = command
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.inputs: dict = {}
        self.outputs: list[str] = []
        self.started = time.monotonic()

    def note_input(self, name: str, path) -> None:
        if path:
            self.inputs[name] = {"path": str(path), "sha256": _sha256(path)}

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.config.get("seed"),
            "inputs": self.inputs,
            "tool_version": __version__,
            "outputs": self.outputs + ["manifest.json"],
            "duration_seconds": round(time.monotonic() - self.started, 6),
        }
        _write_json(manifest, self.out_dir / "manifest.json")


def _explainer_config(cfg: dict) -> OptimizerConfig:
    return OptimizerConfig(
        iterations=cfg["iterations"],
        grid=tuple(cfg["grid"]),
        initial_on_fraction=float(cfg["initial_on_fraction"]),
        learning_rate=float(cfg["learning_rate"]),
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
    )


def _latent_options(cfg: dict) -> LatentOptions:
    return LatentOptions(
        iterations=cfg["latent_iterations"],
        lambda_dis=float(cfg["lambda_dis"]),
        step_size=float(cfg["step_size"]),
        perturbation_scale=float(cfg["perturbation_scale"]),
        seed=cfg["seed"],
    )


def _load_saliency(args, image: np.ndarray) -> np.ndarray:
    saliency = load_float_grid(args.saliency)
    if saliency.shape != image.shape[:2]:
        raise DimensionError(f"saliency {saliency.shape} does not match image "
                             f"{image.shape[:2]}")
    return saliency


def _gen_backend(args, cfg: dict, image: np.ndarray):
    descriptor = args.gen_backend
    if descriptor == "builtin-linear":
        # bare form: latent dim from config, output at image resolution
        descriptor = (f"builtin-linear:{cfg['latent_dim']},"
                      f"{image.shape[0]},{image.shape[1]}")
    return parse_generative(descriptor)


def cmd_explain(args) -> int:
    cfg = resolve_config(args, {"iterations": "iterations", "grid": "grid",
                                "seed": "seed",
                                "checkpoint_every": "checkpoint_every"})
    image = load_image(args.image)
    backend = parse_backend(args.backend)
    try:
        result = explain(image, args.target, backend, _explainer_config(cfg))
    finally:
        _close(backend)
    run = _RunWriter("explain", args.out, cfg)
    run.note_input("image", args.image)
    if args.config:
        run.note_input("config", args.config)
    save_heatmap_png(result.saliency, run.path("saliency.png"))
    save_float_grid(result.saliency, run.path("saliency.f32"))
    run.outputs.append("saliency.json")  # sidecar written by save_float_grid
    run.finish()
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args, {"steps": "steps", "baseline": "baseline",
                                "threshold": "threshold", "seed": "seed"})
    image = load_image(args.image)
    saliency = _load_saliency(args, image)
    backend = parse_backend(args.backend)
    try:
        insertion = insertion_curve(image, saliency, backend, args.target,
                                    cfg["steps"], cfg["baseline"])
        deletion = deletion_curve(image, saliency, backend, args.target,
                                  cfg["steps"])
    finally:
        _close(backend)
    iou = None
    if args.annotation:
        box = AnnotationBox.from_dict(json.loads(Path(args.annotation).read_text()))
        iou = pointing_iou(saliency, box, float(cfg["threshold"]))
    insertion_auc = auc(insertion)
    deletion_auc = auc(deletion)
    run = _RunWriter("eval", args.out, cfg)
    run.note_input("image", args.image)
    run.note_input("saliency", args.saliency)
    if args.annotation:
        run.note_input("annotation", args.annotation)
    if args.config:
        run.note_input("config", args.config)
    _write_json({
        "insertion_auc": insertion_auc,
        "deletion_auc": deletion_auc,
        "iou_percent": iou,
        "steps": cfg["steps"],
        "threshold": cfg["threshold"],
        "baseline": cfg["baseline"],
        "curve": {"xs": insertion.xs, "ys": insertion.ys},
        "insertion_auc_percent": 100.0 * insertion_auc,
        "deletion_auc_percent": 100.0 * deletion_auc,
        "deletion_curve": {"xs": deletion.xs, "ys": deletion.ys},
    }, run.path("metrics.json"))
    run.finish()
    return 0


def cmd_reconstruct(args) -> int:
    cfg = resolve_config(args, {"samples": "samples", "seed": "seed",
                                "kernel": "kernel", "threshold": "threshold",
                                "lambda_dis": "lambda_dis",
                                "latent_dim": "latent_dim",
                                "iterations": "latent_iterations"})
    image = load_image(args.image)
    saliency = _load_saliency(args, image)
    classifier = parse_backend(args.backend)
    generator, discriminator = _gen_backend(args, cfg, image)
    try:
        box = bounding_box(saliency, float(cfg["threshold"]))
        weights = weight_mask(box, cfg["kernel"])
        report = batch_reconstruct(image, box, weights, generator, discriminator,
                                   classifier, args.target,
                                   samples=cfg["samples"],
                                   options=_latent_options(cfg),
                                   rng=make_rng(cfg["seed"]))
    finally:
        _close(classifier)
        _close(generator)
    run = _RunWriter("reconstruct", args.out, cfg)
    run.note_input("image", args.image)
    run.note_input("saliency", args.saliency)
    if args.config:
        run.note_input("config", args.config)
    for record in report.samples:
        if record.reconstruction is not None:
            save_image_png(record.reconstruction,
                           run.path(f"recon_{record.index:03d}.png"))
    _write_json({
        "target": args.target,
        "box": {"top": box.top, "left": box.left, "height": box.height,
                "width": box.width},
        "accepted_count": report.accepted_count,
        "mean_accuracy": report.mean_accuracy,
        "mean_loss": report.mean_loss,
        "samples": [{
            "index": s.index,
            "z": s.z,
            "loss": s.loss,
            "target_score": s.target_score,
            "accepted": s.accepted,
            "t": s.t,
            "error": s.error,
        } for s in report.samples],
    }, run.path("report.json"))
    run.finish()
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args, {"samples": "samples", "seed": "seed",
                                "kernel": "kernel", "threshold": "threshold",
                                "lambda_dis": "lambda_dis",
                                "latent_dim": "latent_dim",
                                "factors": "factors",
                                "iterations": "latent_iterations"})
    image = load_image(args.image)
    saliency = _load_saliency(args, image)
    classifier = parse_backend(args.backend)
    generator, discriminator = _gen_backend(args, cfg, image)
    try:
        records = box_sweep(image, saliency, generator, discriminator, classifier,
                            args.target, factors=cfg["factors"],
                            samples=cfg["samples"], options=_latent_options(cfg),
                            rng=make_rng(cfg["seed"]),
                            threshold=float(cfg["threshold"]),
                            kernel_size=cfg["kernel"])
    finally:
        _close(classifier)
        _close(generator)
    run = _RunWriter("sweep", args.out, cfg)
    run.note_input("image", args.image)
    run.note_input("saliency", args.saliency)
    if args.config:
        run.note_input("config", args.config)
    _write_json({
        "target": args.target,
        "factors": [{
            "factor": r.factor,
            "accepted_count": r.accepted_count,
            "mean_accuracy": r.mean_accuracy,
            "mean_loss": r.mean_loss,
        } for r in records],
    }, run.path("sweep.json"))
    run.finish()
    return 0


def cmd_convergence(args) -> int:
    cfg = resolve_config(args, {"iterations": "iterations", "grid": "grid",
                                "seed": "seed", "steps": "steps",
                                "baseline": "baseline",
                                "checkpoint_every": "checkpoint_every"})
    if cfg["iterations"] < 1:
        raise ConfigError("convergence needs iterations >= 1")
    image = load_image(args.image)
    backend = parse_backend(args.backend)
    stride = cfg["checkpoint_every"]
    marks = list(range(stride, cfg["iterations"] + 1, stride))
    if not marks or marks[-1] != cfg["iterations"]:
        marks.append(cfg["iterations"])
    try:
        trace = convergence_track(image, args.target, backend,
                                  _explainer_config(cfg), marks,
                                  steps=cfg["steps"], baseline=cfg["baseline"])
    finally:
        _close(backend)
    run = _RunWriter("convergence", args.out, cfg)
    run.note_input("image", args.image)
    if args.config:
        run.note_input("config", args.config)
    _write_json({
        "checkpoints": [{
            "iteration": p.iteration,
            "insertion_auc": p.insertion_auc,
            "deletion_auc": p.deletion_auc,
        } for p in trace.points],
    }, run.path("convergence.json"))
    run.finish()
    return 0


def _close(backend) -> None:
    closer = getattr(backend, "close", None)
    if callable(closer):
        closer()


def build_parser() -> _Parser:
    parser = _Parser(prog="maskcraft",
                     description="Saliency maps for black-box image classifiers")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, image=True, backend=True):
        if image:
            p.add_argument("--image", required=True, help="input PNG or PPM")
        p.add_argument("--target", required=True, type=int,
                       help="class index to explain")
        if backend:
            p.add_argument("--backend", required=True,
                           help="builtin-planted:T,L,H,W | builtin-constant:v,... "
                                "| exec:\"cmd ...\"")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory")

    p_explain = sub.add_parser("explain", help="build a saliency map")
    common(p_explain)
    p_explain.add_argument("--iterations", type=int)
    p_explain.add_argument("--grid", type=_parse_grid)
    p_explain.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p_explain.set_defaults(func=cmd_explain)

    p_eval = sub.add_parser("eval", help="score a saliency map")
    common(p_eval)
    p_eval.add_argument("--saliency", required=True, help="raw .f32 saliency grid")
    p_eval.add_argument("--annotation", help="ground-truth box JSON")
    p_eval.add_argument("--steps", type=int)
    p_eval.add_argument("--baseline", choices=("zeros", "blur"))
    p_eval.add_argument("--threshold", type=float)
    p_eval.set_defaults(func=cmd_eval)

    p_rec = sub.add_parser("reconstruct", help="reconstruct the salient region")
    common(p_rec)
    p_rec.add_argument("--saliency", required=True, help="raw .f32 saliency grid")
    p_rec.add_argument("--gen-backend", dest="gen_backend", required=True,
                       help="builtin-linear[:d,h,w[,seed]] | builtin-exemplar:DIR "
                            "| exec:\"cmd ...\"")
    p_rec.add_argument("--samples", type=int)
    p_rec.add_argument("--iterations", type=int,
                       help="latent search iterations")
    p_rec.add_argument("--latent-dim", dest="latent_dim", type=int)
    p_rec.add_argument("--lambda-dis", dest="lambda_dis", type=float)
    p_rec.add_argument("--kernel", type=int)
    p_rec.add_argument("--threshold", type=float)
    p_rec.set_defaults(func=cmd_reconstruct)

    p_sweep = sub.add_parser("sweep", help="shrink the box and reconstruct")
    common(p_sweep)
    p_sweep.add_argument("--saliency", required=True)
    p_sweep.add_argument("--gen-backend", dest="gen_backend", required=True)
    p_sweep.add_argument("--samples", type=int)
    p_sweep.add_argument("--iterations", type=int)
    p_sweep.add_argument("--latent-dim", dest="latent_dim", type=int)
    p_sweep.add_argument("--lambda-dis", dest="lambda_dis", type=float)
    p_sweep.add_argument("--kernel", type=int)
    p_sweep.add_argument("--threshold", type=float)
    p_sweep.add_argument("--factors", type=_parse_factors)
    p_sweep.set_defaults(func=cmd_sweep)

    p_conv = sub.add_parser("convergence", help="track metric AUCs over iterations")
    common(p_conv)
    p_conv.add_argument("--iterations", type=int)
    p_conv.add_argument("--grid", type=_parse_grid)
    p_conv.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p_conv.add_argument("--steps", type=int)
    p_conv.add_argument("--baseline", choices=("zeros", "blur"))
    p_conv.set_defaults(func=cmd_convergence)
    return parser


def _setup_logging() -> None:
    name = os.environ.get("MASKCRAFT_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(name, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"maskcraft: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"maskcraft: {exc}", file=sys.stderr)
        return 1
    except BackendError as exc:
        print(f"maskcraft: {exc}", file=sys.stderr)
        return 2
    except (DegenerateSaliencyError, UndefinedStatisticError) as exc:
        print(f"maskcraft: {exc}", file=sys.stderr)
        return 3
    except (DimensionError, ValueError, OSError) as exc:
        print(f"maskcraft: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
