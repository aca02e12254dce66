"""Selects between the compiled search core and the pure-Python engine.

The compiled module is optional; set BNSEARCH_ENGINE=pure or =compiled to
override the automatic choice.
"""

from __future__ import annotations

import os

try:
    from . import _fast as compiled
except ImportError:  # extension not built on this install
    compiled = None
if compiled is not None and not hasattr(compiled, "run"):
    compiled = None


def compiled_available() -> bool:
    return compiled is not None


def resolve(name: str | None = None) -> str:
    """Map an engine request ("auto"/"pure"/"compiled"/None) to a concrete engine."""
    req = (name or "auto").lower()
    if req == "auto":
        req = os.environ.get("BNSEARCH_ENGINE", "auto").lower() or "auto"
    if req == "auto":
        return "compiled" if compiled_available() else "pure"
    if req == "pure":
        return "pure"
    if req == "compiled":
        if not compiled_available():
            raise RuntimeError(
                "compiled engine requested but bnsearch._fast is not importable"
            )
        return "compiled"
    raise ValueError(f"unknown engine {name!r} (expected auto, pure, or compiled)")


def engine_info() -> dict:
    return {
        "compiled_available": compiled_available(),
        "default": resolve(None),
        "override": os.environ.get("BNSEARCH_ENGINE") or None,
    }
