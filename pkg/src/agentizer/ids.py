"""Deterministic identifiers.

Ids are a function of ``(seed, parent, ordinal)`` only, so that a replay of
the same run with the same seed produces the same ids regardless of thread
scheduling.
"""

from __future__ import annotations

import hashlib


def derive(prefix: str, parent: str | int, ordinal: int | str = 0) -> str:
    digest = hashlib.sha256(f"{parent}/{ordinal}".encode()).hexdigest()[:12]
    return f"{prefix}-{digest}"


def root_goal_id(seed: int) -> str:
    return derive("goal", f"seed:{seed}", "root")


def slug(text: str) -> str:
    out = []
    prev_dash = False
    for ch in text.lower():
        if ch.isascii() and ch.isalnum():
            out.append(ch)
            prev_dash = False
        elif not prev_dash:
            out.append("-")
            prev_dash = True
    return "".join(out).strip("-") or "item"
