"""Degradation operator ``A = D_s o H_psf`` and its strict adjoint.

All convolutions are circular and carried out by spectral multiplication on
the HR grid.  ``D_s`` is the s-by-s block mean, so its adjoint replicates each
LR value over its block with weight ``1/s**2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image import angular_frequencies, fft2, ifft2

DEFAULT_PSF_SIGMA = 2.0


def _check_2d(x, name="image") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class PsfKernel:
    """Periodized Gaussian PSF on an HR grid, with its DFT transfer function."""

    sigma: float
    spatial: np.ndarray = field(repr=False)
    transfer: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.spatial.shape


def make_gaussian_psf(sigma: float = DEFAULT_PSF_SIGMA, shape=(64, 64), mode: str = "discrete") -> PsfKernel:
    """Build a Gaussian PSF of width ``sigma`` HR pixels on a ``shape`` grid.

    ``discrete`` samples the continuous Gaussian at integer offsets with
    circular wrap-around (summing all periodic images that matter), scales it
    to unit sum and takes its DFT.  ``analytic`` sets the transfer function to
    ``exp(-sigma**2 |k|**2 / 2)`` on the folded angular frequency grid and
    obtains the spatial kernel by inverse DFT.
    """
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError(f"PSF sigma must be positive, got {sigma}")
    h, w = (int(n) for n in shape)
    if h <= 0 or w <= 0:
        raise ValueError(f"PSF grid must be positive, got {shape}")

    if mode == "discrete":
        spatial = np.outer(_wrapped_gaussian_1d(sigma, h), _wrapped_gaussian_1d(sigma, w))
        spatial /= spatial.sum()
        transfer = fft2(spatial)
        # exact symmetry k(-r) = k(r) makes the transfer real up to rounding
        transfer = transfer.real.astype(np.complex128)
    elif mode == "analytic":
        ky, kx = angular_frequencies((h, w))
        transfer = np.exp(-0.5 * sigma**2 * (ky**2 + kx**2)).astype(np.complex128)
        spatial = ifft2(transfer)
    else:
        raise ValueError(f"unknown PSF mode {mode!r}")
    spatial.setflags(write=False)
    transfer.setflags(write=False)
    return PsfKernel(sigma, spatial, transfer)


def _wrapped_gaussian_1d(sigma: float, n: int) -> np.ndarray:
    # offsets -reach..reach folded onto the circle; symmetric by construction
    reach = int(np.ceil(12.0 * sigma)) + n
    offsets = np.arange(-reach, reach + 1)
    vals = np.exp(-0.5 * (offsets / sigma) ** 2)
    out = np.zeros(n)
    np.add.at(out, offsets % n, vals)
    return out


def convolve_psf(x, psf: PsfKernel) -> np.ndarray:
    x = _check_2d(x)
    if x.shape != psf.shape:
        raise ValueError(f"image shape {x.shape} does not match PSF grid {psf.shape}")
    return ifft2(fft2(x) * psf.transfer)


def downsample_area(x, s: int) -> np.ndarray:
    """Block mean over non-overlapping s-by-s cells."""
    x = _check_2d(x)
    s = int(s)
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    h, w = x.shape
    if h % s or w % s:
        raise ValueError(f"grid {x.shape} is not divisible by scale {s}")
    return x.reshape(h // s, s, w // s, s).mean(axis=(1, 3))


def upsample_adjoint(y, s: int) -> np.ndarray:
    """Adjoint of :func:`downsample_area`: ``out[p, q] = y[p // s, q // s] / s**2``."""
    y = _check_2d(y)
    s = int(s)
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    return np.repeat(np.repeat(y, s, axis=0), s, axis=1) / (s * s)


@dataclass(frozen=True)
class ForwardOperator:
    """PSF blur followed by s-fold area downsampling on a fixed HR grid."""

    psf: PsfKernel
    scale: int = 1

    def __post_init__(self):
        h, w = self.psf.shape
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if h % self.scale or w % self.scale:
            raise ValueError(f"HR grid {self.psf.shape} is not divisible by scale {self.scale}")

    @classmethod
    def gaussian(cls, hr_shape, scale: int, sigma: float = DEFAULT_PSF_SIGMA, mode: str = "discrete"):
        return cls(make_gaussian_psf(sigma, hr_shape, mode), int(scale))

    @property
    def hr_shape(self) -> tuple[int, int]:
        return self.psf.shape

    @property
    def lr_shape(self) -> tuple[int, int]:
        h, w = self.psf.shape
        return h // self.scale, w // self.scale

    def __call__(self, x) -> np.ndarray:
        return apply_forward(self, x)

    def adjoint(self, y) -> np.ndarray:
        return apply_adjoint(self, y)


def apply_forward(op: ForwardOperator, x) -> np.ndarray:
    x = _check_2d(x)
    if x.shape != op.hr_shape:
        raise ValueError(f"expected HR grid {op.hr_shape}, got {x.shape}")
    return downsample_area(convolve_psf(x, op.psf), op.scale)


def apply_adjoint(op: ForwardOperator, y) -> np.ndarray:
    y = _check_2d(y)
    if y.shape != op.lr_shape:
        raise ValueError(f"expected LR grid {op.lr_shape}, got {y.shape}")
    # the Gaussian PSF is centro-symmetric, so H^T = H
    return convolve_psf(upsample_adjoint(y, op.scale), op.psf)


def nearest_upsample(y, s: int) -> np.ndarray:
    """Flux-density preserving replication of an LR raster onto the HR grid."""
    return upsample_adjoint(y, s) * (s * s)
