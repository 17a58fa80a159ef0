"""Measurement-consistent flow sampling for PSF-limited super-resolution.

The package collects the forward degradation model, the Wiener-regularized
back-projection, an Euler sampler with per-step data-consistency correction,
the closed-form spectral toy model, a small source-extraction pipeline and the
evaluation metrics, plus a command-line driver (``mcflow``).
"""

__version__ = "0.1.0"
