"""Pathwise simulation of the 2D stochastic Navier-Stokes equations with additive noise.

Modules: ``spectral`` (basis, operators, norms), ``noise`` (reproducible
Wiener paths), ``ou`` (Ornstein-Uhlenbeck transform), ``solver`` (the random
PDE and its energy validators), ``rds_cocycle`` (the cocycle ``phi``),
``attractor`` (radii, absorbing balls, pullback ensembles) and ``cli``.
"""
__version__ = "0.1.0"
