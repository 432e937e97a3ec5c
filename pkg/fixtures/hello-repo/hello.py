#!/usr/bin/env python3
"""Greet someone by name."""

import argparse


def main(argv=None):
    parser = argparse.ArgumentParser(description="Greet someone by name.")
    sub = parser.add_subparsers(dest="command", required=True)
    greet = sub.add_parser("greet", help="print a greeting")
    greet.add_argument("name")
    args = parser.parse_args(argv)
    print(f"Hello, {args.name}!")


if __name__ == "__main__":
    main()
