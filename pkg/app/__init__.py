"""
infinity-laplace-lab
====================

infinity-laplace-lab is a numerical laboratory for the inhomogeneous
infinity-Laplace equation. It solves the one-dimensional problem by
shooting, approximates two-dimensional solutions by vanishing viscosity
continuation, checks the pointwise identities behind the gradient estimates
and measures the Sobolev and BV regularity of the gradient under mesh
refinement.
"""

__version__ = "0.1.0"
