"""Periodic circle packings of the hyperbolic plane.

Klein-model geometry, regular tilings and their branched covers, shift
systems with rational cylinder weights, and measure transport between
packings and group orbits, with Monte Carlo density estimation on top.
"""

__version__ = "0.1.0"
