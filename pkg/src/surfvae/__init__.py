"""Disentangled latent encoding of implied-volatility surfaces.

A variational auto-encoder with a pairwise latent-covariance penalty maps
8x7 vol grids into a 3-dimensional latent space whose axes line up with
the level, skew and term structure of a surface. On top of that encoding:
interpretable scenario generation, completion of a surface from a partial
observation, and inference of single-stock surfaces from an index surface.
"""

__version__ = "0.1.0"
