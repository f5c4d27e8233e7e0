"""Latent-insensitive autoencoders: linear (SVD) and dense deep variants.

Core pieces:

* :mod:`lisae.linalg` - SVD, orthogonal complements, subspace decomposition.
* :mod:`lisae.linear` - linear two-phase model with closed-form phase 1.
* :mod:`lisae.neural` - dense autoencoder with manual backprop and freezing.
* :mod:`lisae.training` - phase-1 reconstruction and phase-2 latent shaping.
* :mod:`lisae.datasets` - IDX/CSV I/O, synthetic data, augmentation, tasks.
* :mod:`lisae.evaluation` - rank AUC, threshold sweeps, paired runs, ablations.
"""

from __future__ import annotations

from lisae.errors import LisaeError

__version__ = "0.1.0"

__all__ = ["LisaeError", "__version__"]
