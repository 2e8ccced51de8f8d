"""Command-line entry point.

Usage:
    dtcav [stage] --config config.json [--seed N] [--out DIR]

where stage is one of prepare, patches, embed, cluster, cavs, score,
metrics, report, all (default all). ``--stage`` works as an alternative to
the positional form. Exits 0 on success, 1 with a stage-tagged message
otherwise.
"""

import argparse
import sys

from .pipeline import STAGES, Pipeline, PipelineConfig, PipelineError

_CHOICES = list(STAGES) + ["all"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtcav", description="D-TCAV concept discovery pipeline")
    parser.add_argument("stage_pos", nargs="?", choices=_CHOICES, default=None,
                        metavar="stage", help=f"pipeline stage: {', '.join(_CHOICES)}")
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--stage", choices=_CHOICES, default=None)
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.stage or args.stage_pos or "all"
    try:
        config = PipelineConfig.from_json(args.config)
    except (OSError, ValueError, TypeError) as e:
        print(f"[config] {e}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    try:
        Pipeline(config).run((stage,))
    except PipelineError as e:
        print(str(e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
