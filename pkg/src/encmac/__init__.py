"""encmac - encoding-based approximate multiplier design-space exploration."""

__version__ = "0.1.0"
