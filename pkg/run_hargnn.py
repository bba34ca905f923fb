#!/usr/bin/env python3
# run_hargnn.py
"""
Launcher for the HARGNN command line from a source checkout.

Verifies the numerical and plotting stack is importable, then hands the
arguments to `hargnn.cli.main` and exits with its status code.
"""

import importlib.util
import os
import sys

project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)

# import name -> requirements.txt entry
REQUIRED = {"numpy": "numpy", "pandas": "pandas", "matplotlib": "matplotlib", "pubsub": "pypubsub"}

missing = [pkg for module, pkg in REQUIRED.items() if importlib.util.find_spec(module) is None]
if missing:
    # logging is configured by the CLI, which cannot load yet
    print(f"ERROR: Missing required package(s): {', '.join(missing)}", file=sys.stderr)
    print(f"Install them with:  pip install -r {os.path.join(project_root, 'requirements.txt')}",
          file=sys.stderr)
    sys.exit(1)

try:
    from hargnn.cli import main
except ImportError as e:
    print(f"ERROR: Cannot import the hargnn package: {e}", file=sys.stderr)
    print(f"Run this script from a checkout containing {os.path.join(project_root, 'hargnn')}",
          file=sys.stderr)
    sys.exit(1)


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
