"""Batch figure rendering for partial-trace experiment CSV outputs."""

from .figures import (
    FIGURE_KINDS,
    EmptySelectionError,
    FigureSpec,
    FigureSpecError,
    SchemaMismatchError,
    build_figure,
    render,
    smooth_curve,
)

__version__ = "0.1.0"

__all__ = [
    "FIGURE_KINDS",
    "EmptySelectionError",
    "FigureSpec",
    "FigureSpecError",
    "SchemaMismatchError",
    "build_figure",
    "render",
    "smooth_curve",
]
