"""Machine unlearning via conditional-dependence-guided block Newton updates."""

__version__ = "0.1.0"
