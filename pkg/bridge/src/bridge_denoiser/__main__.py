"""Entry point: ``python -m bridge_denoiser --mode diagonal --sigma0 1.0``."""

from __future__ import annotations

import argparse
import sys

from .denoise import MODES
from .server import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bridge-denoiser")
    parser.add_argument("--mode", choices=sorted(MODES), default="diagonal")
    parser.add_argument("--sigma0", type=float, default=1.0,
                        help="marginal std of the diagonal prior")
    args = parser.parse_args(argv)
    return serve(MODES[args.mode](args))


if __name__ == "__main__":
    sys.exit(main())
