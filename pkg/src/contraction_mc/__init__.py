"""Monte Carlo toolkit for recursive distributional equations on path space."""

__version__ = "0.1.0"
