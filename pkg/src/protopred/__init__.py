"""Prototype-based prediction from neural-network latent representations.

The package trains small deterministic networks on synthetic dual-modality
image data, condenses their latent vectors into labeled cluster-center
prototype sets, classifies by nearest prototype, chains a second network on
the first network's latents, merges prototype sets across datasets, and
trains modality-limited networks with a cluster-center-guided loss.
"""

__version__ = "0.1.0"

from . import adapt, archs, clustering, netcore, prototypes, synthdata, transfer

__all__ = [
    "adapt",
    "archs",
    "clustering",
    "netcore",
    "prototypes",
    "synthdata",
    "transfer",
    "__version__",
]
