#!/usr/bin/env python3
"""Backward-compatible entry point. Real logic lives in synth_eval/__main__.py."""
import sys

from synth_eval.__main__ import main

if __name__ == "__main__":
    sys.exit(main())
