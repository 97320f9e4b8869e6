"""Numerical laboratory for non-uniformly expanding maps.

Submodules: maps, pliss, hyptimes, constants, tower, density, cli.
"""

__version__ = "0.1.0"
