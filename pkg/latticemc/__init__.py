"""
latticemc - semi-classical Monte-Carlo simulation of atoms in a dissipative
lin-perp-lin optical lattice driven by a weak probe beam.
"""

__version__ = "0.3.0"
