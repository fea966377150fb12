"""Grid-based vessel route planning and RL navigation workbench."""

__version__ = "0.1.0"
