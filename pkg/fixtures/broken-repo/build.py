#!/usr/bin/env python3
"""Always fail to build."""

import sys

if __name__ == "__main__":
    sys.exit("build: missing toolchain")
