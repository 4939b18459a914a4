"""Entry point: speak odca-forecast/1 on stdin/stdout until EOF."""

from __future__ import annotations

import argparse
import sys

from odca_sidecar import __version__
from odca_sidecar.server import SidecarConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odca-sidecar",
        description="Forecaster subprocess speaking newline-delimited JSON "
                    "(odca-forecast/1) on stdin/stdout.")
    parser.add_argument("--model", default="statistical",
                        help="model identifier (default: %(default)s)")
    parser.add_argument("--device", default="cpu",
                        help="device hint for model wrappers "
                             "(default: %(default)s)")
    parser.add_argument("--max-samples", type=int, default=256,
                        help="largest n_samples served (default: %(default)s)")
    parser.add_argument("--max-horizon", type=int, default=512,
                        help="largest horizon served (default: %(default)s)")
    parser.add_argument("--idle-timeout", type=float, default=None,
                        metavar="SECONDS",
                        help="exit cleanly after this long without a request "
                             "(default: wait forever)")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = SidecarConfig(model=args.model, device=args.device,
                            max_samples=args.max_samples,
                            max_horizon=args.max_horizon,
                            idle_timeout_s=args.idle_timeout)
    except ValueError as exc:
        build_parser().error(str(exc))
        return 2  # unreachable; error() raises SystemExit
    return serve(sys.stdin, sys.stdout, cfg)


if __name__ == "__main__":
    raise SystemExit(main())
