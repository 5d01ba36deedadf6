"""``cnn-recover`` entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical or decomposition
failure, 4 a command's own checks failed.
"""

import argparse
import sys

from .errors import ConfigError, NumericalError
from .experiments import COMMANDS, load_config, run_command

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnn-recover",
        description="Planted non-overlapping CNN experiments: Hessian spectra, gradient-descent "
                    "traces, tensor-initialized recovery, activation moments, derivative checks.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="INI file with an [experiment] section")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="master seed (overrides seed)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for grid cells")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        ec = load_config(args.config, args.command, {"out_dir": args.out, "seed": args.seed})
        result = run_command(args.command, ec, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in result.files:
        print(f"wrote {path}")
    for check in result.checks:
        print(check.line())
    return EXIT_OK if result.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
