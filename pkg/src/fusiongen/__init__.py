"""Few-shot EEG data augmentation by bottleneck feature fusion.

Submodules: ``data`` (trials, container, preprocessing, synthetic data),
``alignment``, ``nn`` and ``generator`` (the autoencoder), ``fusion``,
``augment`` (baselines), ``decoding`` (CSP-LDA), ``bench`` (protocol) and
``cli``.  ``kernels.BACKEND`` names the active convolution backend.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
