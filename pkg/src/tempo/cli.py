"""Command-line entry point.

    tempo generate --config cfg.json --workdir out [--force]
    tempo embed    --config cfg.json --workdir out
    tempo classify --config cfg.json --workdir out
    tempo map      --config cfg.json --workdir out
    tempo all      --config cfg.json --workdir out [--force]

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence. TEMPO_LOG (error|warn|info|debug) controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from . import pipeline
from .config import load_config
from .errors import ConfigError, DataError, DivergenceError

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    level_name = os.environ.get("TEMPO_LOG", "info").lower()
    level = _LOG_LEVELS.get(level_name, logging.INFO)
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempo",
        description="Temporal activity embeddings: synthetic scenes, "
        "spectrogram autoencoding, land-use classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "synthesize a scene: trajectories, labels, manifest"),
        ("embed", "trajectories -> spectrograms -> CAE -> embedding raster"),
        ("classify", "train per-pixel classifiers and write the comparison"),
        ("map", "render the RGB embedding map"),
        ("all", "run every stage in order"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--workdir", metavar="PATH", help="artifact directory")
        p.add_argument("--seed", type=int, metavar="U64", help="global random seed")
        p.add_argument("--threads", type=int, metavar="N", help="worker cap")
        if name in ("generate", "all"):
            p.add_argument("--force", action="store_true",
                           help="allow writing into a non-empty workdir")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    log = logging.getLogger("tempo")
    try:
        cfg = load_config(
            path=args.config, workdir=args.workdir, seed=args.seed,
            threads=args.threads,
        )
        if args.command == "generate":
            pipeline.run_generate(cfg, force=args.force)
        elif args.command == "embed":
            pipeline.run_embed(cfg)
        elif args.command == "classify":
            pipeline.run_classify(cfg)
        elif args.command == "map":
            pipeline.run_map(cfg)
        else:
            pipeline.run_all(cfg, force=args.force)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except DivergenceError as exc:
        log.error("numeric divergence: %s", exc)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
