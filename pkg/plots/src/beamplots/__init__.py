"""Offline figure regeneration from simcli CSV output directories.

The renderers are read-only over the CSVs: every plotted value is taken
verbatim from a column, and nothing is recomputed beyond axis transforms.
"""

from .render import FIGURES, MissingColumnError, plot_all

__all__ = ["FIGURES", "MissingColumnError", "plot_all"]
