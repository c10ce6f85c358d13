"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration problems, 2 bad input
data or files, 3 numeric failure during computation.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, InputError, NumericError
from .features import FEATURE_DIM, extract_to_file


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract-features",
        description="embed the listed images with a pooled ResNet50 trunk "
                    "and write one VAGF feature file")
    parser.add_argument("--images", required=True, metavar="LIST",
                        help="text file with one image path per line")
    parser.add_argument("--out", required=True, metavar="FILE",
                        help="output feature file (VAGF)")
    parser.add_argument("--batch", type=int, default=16, metavar="N",
                        help="images per forward pass (default 16)")
    parser.add_argument("--weights", default="imagenet",
                        help="'imagenet', 'random', or a resnet50 "
                             "state-dict path (default imagenet)")
    parser.add_argument("--seed", type=int, default=0,
                        help="initialization seed for --weights random")
    parser.add_argument("--device", default="cpu",
                        help="torch device for the trunk (default cpu)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        count = extract_to_file(args.images, args.out, weights=args.weights,
                                seed=args.seed, batch_size=args.batch,
                                device=args.device)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"{count} images -> {args.out} ({FEATURE_DIM}-d)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
