"""Command line entry: adapter --role classifier --model m.npz --height 224 --width 224.

Exit codes: 0 after a clean EOF on stdin, 1 when the model or configuration
cannot be loaded (nothing is written to stdout in that case), 2 for usage
errors from argument parsing.
"""

from __future__ import annotations

import argparse
import sys

from .models import ROLES, load_model
from .protocol import AdapterError
from .serve import AdapterConfig, serve


def _channel_triple(text: str):
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated "
                                         f"list of numbers")
    if len(parts) == 1:
        return parts * 3
    if len(parts) == 3:
        return parts
    raise argparse.ArgumentTypeError("give one value or one per channel")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adapter",
        description="Serve a saved model over the maskcraft wire protocol "
                    "(JSON lines on stdin/stdout).")
    parser.add_argument("--role", required=True, choices=ROLES)
    parser.add_argument("--model", required=True,
                        help="path to a .npz model, or 'echo' for the "
                             "builtin test model")
    parser.add_argument("--height", required=True, type=int,
                        help="input image height")
    parser.add_argument("--width", required=True, type=int,
                        help="input image width")
    parser.add_argument("--classes", type=int, default=None,
                        help="declared class count, checked against the model")
    parser.add_argument("--latent-dim", type=int, default=None,
                        help="declared latent size, checked against the model")
    parser.add_argument("--scale", type=float, default=1.0,
                        help="multiply inputs before mean/std normalization")
    parser.add_argument("--mean", type=_channel_triple, default=(0.0, 0.0, 0.0),
                        metavar="M[,M,M]", help="per-channel mean to subtract")
    parser.add_argument("--std", type=_channel_triple, default=(1.0, 1.0, 1.0),
                        metavar="S[,S,S]", help="per-channel std to divide by")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = AdapterConfig(role=args.role, model=args.model,
                               height=args.height, width=args.width,
                               class_count=args.classes,
                               latent_dim=args.latent_dim,
                               scale=args.scale, mean=args.mean, std=args.std)
        model, config = load_model(config)
    except AdapterError as err:
        print(f"adapter: {err}", file=sys.stderr)
        return 1
    return serve(model, config)
