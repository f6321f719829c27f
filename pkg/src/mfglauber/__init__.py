"""Mixing-time laboratory for Glauber dynamics of mean-field spin models.

Covers the Curie-Weiss-Potts model, its generalized power-``r`` variant and
the mean-field Blume-Capel model: free-energy critical values, exact lumped
chains, couplings and numerical checks of aggregate contraction conditions.
"""

from mfglauber.model_core import ModelSpec

__version__ = "0.1.0"

__all__ = ["ModelSpec", "__version__"]
