"""Hilbert-type expansion and direct kinetic solver for a half-space gas
with Maxwell reflection at small accommodation.

The package builds the matched interior / viscous-layer / kinetic-layer
expansion of a half-space kinetic problem whose accommodation coefficient
scales like sqrt(epsilon), runs a direct discrete-velocity solver for the
same problem, and measures the remainder between the two.
"""

__version__ = "0.1.0"
