#!/usr/bin/env python3
"""Downscale a PGM image by an integer factor (nearest neighbour)."""

import argparse
from pathlib import Path


def read_pgm(path):
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if tokens[:1] != ["P2"]:
        raise SystemExit(f"{path}: not an ASCII PGM (P2) image")
    width, height, maxval = (int(t) for t in tokens[1:4])
    pixels = [int(t) for t in tokens[4:4 + width * height]]
    if len(pixels) != width * height:
        raise SystemExit(f"{path}: truncated image")
    return width, height, maxval, [pixels[r * width:(r + 1) * width] for r in range(height)]


def write_pgm(path, width, height, maxval, rows):
    lines = ["P2", f"{width} {height}", str(maxval)] + [" ".join(str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def main(argv=None):
    parser = argparse.ArgumentParser(description="Downscale a PGM image.")
    parser.add_argument("source")
    parser.add_argument("target")
    parser.add_argument("--factor", type=int, default=2)
    args = parser.parse_args(argv)
    width, height, maxval, rows = read_pgm(args.source)
    f = args.factor
    small = [row[::f] for row in rows[::f]]
    write_pgm(args.target, len(small[0]), len(small), maxval, small)


if __name__ == "__main__":
    main()
