"""Render skinmc CSV artifacts into publication-style figures."""

from .figures import FigureSpec, render
from .reading import SchemaError, read_table

__version__ = "0.1.0"

__all__ = ["FigureSpec", "render", "SchemaError", "read_table"]
