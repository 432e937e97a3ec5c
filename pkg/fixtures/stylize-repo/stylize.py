#!/usr/bin/env python3
"""Apply a negative-film style to a PGM image."""

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
    parser = argparse.ArgumentParser(description="Invert a PGM image.")
    parser.add_argument("source")
    parser.add_argument("target")
    args = parser.parse_args(argv)
    width, height, maxval, rows = read_pgm(args.source)
    write_pgm(args.target, width, height, maxval, [[maxval - v for v in row] for row in rows])


if __name__ == "__main__":
    main()
