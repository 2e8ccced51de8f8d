"""Command-line interface: train, export, convert-acdc."""

import argparse
import sys

from .acdc import AcdcError, convert
from .data import DataError, load_slices
from .export import TARGETS, ExportError, export
from .train import TrainConfig, TrainError, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unet-exporter",
        description="Train a 2D segmentation U-Net and export middle-layer tensors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on a slice manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p_train.add_argument("--split", default="train", choices=["train", "dev", "all"])
    defaults = TrainConfig()
    p_train.add_argument("--base-filters", type=int, default=defaults.base_filters)
    p_train.add_argument("--depth", type=int, default=defaults.depth)
    p_train.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p_train.add_argument("--epochs", type=int, default=defaults.epochs)
    p_train.add_argument("--input-size", type=int, default=defaults.input_size)
    p_train.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p_train.add_argument("--no-augment", action="store_true")
    p_train.add_argument("--latent-mode", default=defaults.latent_mode, choices=["pool", "flat"])
    p_train.add_argument("--seed", type=int, default=defaults.seed)

    p_export = sub.add_parser("export", help="export activations/gradients/predictions")
    p_export.add_argument("--manifest", required=True)
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--out", required=True)
    p_export.add_argument("--split", default="train", choices=["train", "dev", "all"])
    p_export.add_argument(
        "--targets", nargs="+", default=list(TARGETS), choices=list(TARGETS)
    )

    p_conv = sub.add_parser("convert-acdc", help="ACDC directory tree -> slice manifest")
    p_conv.add_argument("--acdc-root", required=True)
    p_conv.add_argument("--out", required=True)
    p_conv.add_argument("--dev-fraction", type=float, default=0.2)
    return parser


def _select(slices, split):
    return slices if split == "all" else [s for s in slices if s.split == split]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = TrainConfig(
                base_filters=args.base_filters,
                depth=args.depth,
                batch_size=args.batch_size,
                epochs=args.epochs,
                input_size=args.input_size,
                learning_rate=args.learning_rate,
                augment=not args.no_augment,
                latent_mode=args.latent_mode,
                seed=args.seed,
            )
            slices = _select(load_slices(args.manifest), args.split)
            path = train(config, slices, args.checkpoint)
            print(f"checkpoint written to {path}")
        elif args.command == "export":
            slices = _select(load_slices(args.manifest), args.split)
            out = export(args.checkpoint, slices, args.out, tuple(args.targets))
            print(f"exported {len(slices)} examples to {out}")
        else:
            manifest = convert(args.acdc_root, args.out, args.dev_fraction)
            print(f"manifest written to {manifest}")
    except (DataError, TrainError, ExportError, AcdcError) as e:
        print(f"[{args.command}] {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
