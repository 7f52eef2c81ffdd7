"""Three-class spoofing-robust speaker verification scoring toolkit."""

__version__ = "0.1.0"
