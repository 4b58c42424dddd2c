"""Generate the short command summary printed below ``pixseg --help``."""

from __future__ import annotations

from typing import List

from pixseg.modes import ALL_STRATEGIES


def build_help_lines() -> List[str]:
    """Return one line per subcommand."""
    strategies = "|".join(s.value for s in ALL_STRATEGIES)
    lines = [
        "synth            --out DIR [--config FILE] [--seed N]        write synthetic volumes",
        "train            --data DIR --out DIR [--config FILE]        fit a model, save model.pxseg",
        "predict          --checkpoint FILE --input PATH --out DIR    write predicted label volumes",
        "evaluate         --pred DIR --gt DIR --out FILE [--summary]  per-case region metrics",
        f"sample-stats     --volume FILE --n N [--strategy {strategies}]",
        "compare-samplers --data DIR --out FILE [--runs R]            uniform vs class-balanced",
    ]
    return lines


__all__ = ["build_help_lines"]
