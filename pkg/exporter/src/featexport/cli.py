"""featexport command line: run image encoders offline and write CTNS
tensors plus a manifest consumable by voxstyle bundles."""

from __future__ import annotations

import argparse
import sys

from .export import run_export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featexport",
        description="Export image encoder features as CTNS tensors")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export features for a directory of images")
    p.add_argument("--images", required=True, help="directory of input images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--texture", action="store_true",
                   help="export conv3-block texture features")
    p.add_argument("--semantic", action="store_true",
                   help="export per-pixel semantic embeddings")
    p.add_argument("--labels", default=None,
                   help="comma-separated label words to embed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vgg-weights", default=None,
                   help="optional VGG-16 features state-dict (.pth)")
    p.add_argument("--semantic-weights", default=None,
                   help="optional semantic encoder state-dict (.pth)")
    p.set_defaults(func=cmd_export)
    return parser


def cmd_export(args) -> int:
    labels = [w for w in (args.labels or "").split(",") if w.strip()]
    if not (args.texture or args.semantic or labels):
        print("nothing to export: pass --texture, --semantic, and/or --labels",
              file=sys.stderr)
        return 2
    return run_export(args.images, args.out, texture=args.texture,
                      semantic=args.semantic, labels=labels or None,
                      seed=args.seed, vgg_weights=args.vgg_weights,
                      semantic_weights=args.semantic_weights)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
