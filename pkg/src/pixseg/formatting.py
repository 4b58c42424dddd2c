"""Small helpers that turn metric values into readable text."""

from __future__ import annotations

import math


def format_metric(value: float, digits: int = 6) -> str:
    """Render a metric for CSV output; undefined values become ``nan``."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    formatted = f"{value:.{digits}f}".rstrip("0").rstrip(".")
    return "0" if formatted in ("", "-0") else formatted


def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    """Render ``mean±std`` the way result tables print it."""
    if math.isnan(mean):
        return "nan"
    return f"{mean:.{digits}f}±{std:.{digits}f}"


__all__ = ["format_metric", "format_mean_std"]
