"""Module entry so ``python -m odca_sidecar`` serves the protocol."""

import sys

from odca_sidecar.cli import main

if __name__ == "__main__":
    sys.exit(main())
