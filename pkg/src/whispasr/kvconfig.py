"""Flat ``key = value`` experiment config text."""

from __future__ import annotations


def parse_kv_config(text: str) -> dict[str, str]:
    """One ``key = value`` per line; ``#`` starts a comment; duplicate keys are rejected."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ValueError(f"config line {n}: duplicate key {k!r}")
        out[k] = v
    return out


def format_kv_config(d: dict) -> str:
    return "".join(f"{k} = {d[k]}\n" for k in sorted(d))
