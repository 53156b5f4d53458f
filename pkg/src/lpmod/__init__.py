"""Separate compilation, linking and execution for a module-structured logic language."""

from __future__ import annotations

__version__ = "0.1.0"
