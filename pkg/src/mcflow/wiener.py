"""Wiener-regularized back-projection kernel ``W = conj(H) / (|H|^2 + 1/lambda)``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import PsfKernel
from .image import fft2, ifft2

DEFAULT_LAMBDA_SNR = 50.0
IMAG_TOL = 1e-10


@dataclass(frozen=True)
class WienerKernel:
    lambda_snr: float | np.ndarray
    kernel: np.ndarray = field(repr=False)
    transfer: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.kernel.shape


def wiener_response(transfer, lambda_snr) -> np.ndarray:
    """Pointwise ``conj(H) / (|H|^2 + 1/lambda)``; ``lambda`` may be per-frequency."""
    transfer = np.asarray(transfer)
    lam = np.asarray(lambda_snr, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("lambda_snr must be positive")
    return np.conj(transfer) / (np.abs(transfer) ** 2 + 1.0 / lam)


def make_wiener(psf: PsfKernel, lambda_snr: float = DEFAULT_LAMBDA_SNR) -> WienerKernel:
    lambda_snr = float(lambda_snr)
    if not lambda_snr > 0:
        raise ValueError(f"lambda_snr must be positive, got {lambda_snr}")
    kernel = wiener_response(psf.transfer, lambda_snr)
    kernel.setflags(write=False)
    return WienerKernel(lambda_snr, kernel, psf.transfer)


def make_wiener_mmse(psf: PsfKernel, signal_psd, noise_power: float) -> WienerKernel:
    """Full MMSE form ``conj(H) Phi / (|H|^2 Phi + sigma_n^2)``.

    Equivalent to :func:`make_wiener` with a per-frequency SNR field
    ``Phi / sigma_n^2``.  Intended for checking limits against the scalar form.
    """
    signal_psd = np.broadcast_to(np.asarray(signal_psd, dtype=np.float64), psf.shape)
    if np.any(signal_psd <= 0) or not noise_power > 0:
        raise ValueError("signal PSD and noise power must be positive")
    lam = signal_psd / float(noise_power)
    kernel = np.conj(psf.transfer) * signal_psd / (np.abs(psf.transfer) ** 2 * signal_psd + noise_power)
    kernel.setflags(write=False)
    return WienerKernel(lam, kernel, psf.transfer)


def wiener_backproject(w: WienerKernel, residual_hr) -> np.ndarray:
    """Filter an HR-lifted residual with ``W`` and return the real result."""
    residual_hr = np.asarray(residual_hr, dtype=np.float64)
    if residual_hr.shape != w.shape:
        raise ValueError(f"residual shape {residual_hr.shape} does not match kernel {w.shape}")
    return ifft2(w.kernel * fft2(residual_hr), imag_tol=IMAG_TOL * max(1.0, float(np.max(np.abs(residual_hr)))))
