"""Image containers, pixel normalization, seeded noise and the DFT convention.

Numeric operators throughout the package work on plain ``float64`` arrays
(HR/LR rasters, masks, weights) and ``complex128`` arrays (spectra).  The
:class:`ImageGrid` wrapper carries physical units where they matter: at the
normalization boundary and in the FIMG file container.

DFT convention: the forward transform is unnormalized and the inverse carries
``1/(H*W)``, i.e. exactly ``numpy.fft.fft2`` / ``numpy.fft.ifft2``.  A unit
impulse at the origin therefore has a flat spectrum of ones, and a constant
image ``c`` has the single DC coefficient ``c*H*W``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNITS = ("nanomaggy", "normalized", "dimensionless")


class DegenerateNormalization(ValueError):
    """Raised when the clip interval collapses to a point."""


@dataclass(frozen=True)
class ImageGrid:
    """2-D double-precision raster with declared units."""

    data: np.ndarray
    units: str = "dimensionless"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.size == 0:
            raise ValueError(f"ImageGrid needs a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("ImageGrid data contains NaN or Inf")
        if self.units not in UNITS:
            raise ValueError(f"unknown units {self.units!r}; expected one of {UNITS}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NormalizationSpec:
    """Clip thresholds and the min-max range used to map pixels onto [0, 1]."""

    clip_lo: float
    clip_hi: float
    min_val: float
    max_val: float

    def __post_init__(self):
        if not (self.clip_lo < self.clip_hi and self.min_val < self.max_val):
            raise DegenerateNormalization(
                f"degenerate normalization: clip=({self.clip_lo}, {self.clip_hi}), "
                f"range=({self.min_val}, {self.max_val})"
            )

    def to_dict(self) -> dict:
        return {
            "clip_lo": self.clip_lo,
            "clip_hi": self.clip_hi,
            "min_val": self.min_val,
            "max_val": self.max_val,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(float(d["clip_lo"]), float(d["clip_hi"]), float(d["min_val"]), float(d["max_val"]))


def _pixels(img) -> np.ndarray:
    return np.asarray(img.data if isinstance(img, ImageGrid) else img, dtype=np.float64)


def nearest_rank_quantile(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank empirical quantile of an ascending sample.

    Returns the ``ceil(q*n)``-th smallest value (1-based), clamped to the
    sample.  No interpolation, so the result is always a member of the sample.
    """
    n = sorted_values.size
    rank = int(np.ceil(q * n))
    rank = min(max(rank, 1), n)
    return float(sorted_values[rank - 1])


def fit_normalization(images, tail_fraction: float = 1e-4) -> NormalizationSpec:
    """Fit clip thresholds at the ``tail_fraction`` tails of all pooled pixels.

    The clipped population is min-max rescaled afterwards, so ``min_val`` and
    ``max_val`` coincide with the clip thresholds.
    """
    if not 0.0 < tail_fraction < 0.5:
        raise ValueError(f"tail_fraction must lie in (0, 0.5), got {tail_fraction}")
    arrays = [_pixels(img).ravel() for img in images]
    if not arrays or sum(a.size for a in arrays) == 0:
        raise ValueError("fit_normalization needs at least one non-empty image")
    pooled = np.concatenate(arrays)
    if not np.all(np.isfinite(pooled)):
        raise ValueError("non-finite pixels in normalization input")
    pooled.sort()
    lo = nearest_rank_quantile(pooled, tail_fraction)
    hi = nearest_rank_quantile(pooled, 1.0 - tail_fraction)
    return NormalizationSpec(lo, hi, lo, hi)


def normalize(img, spec: NormalizationSpec) -> ImageGrid:
    data = np.clip(_pixels(img), spec.clip_lo, spec.clip_hi)
    out = (data - spec.min_val) / (spec.max_val - spec.min_val)
    return ImageGrid(np.clip(out, 0.0, 1.0), units="normalized")


def denormalize(img, spec: NormalizationSpec) -> ImageGrid:
    if isinstance(img, ImageGrid) and img.units != "normalized":
        raise ValueError(f"denormalize expects normalized units, got {img.units!r}")
    data = _pixels(img)
    return ImageGrid(spec.min_val + data * (spec.max_val - spec.min_val), units="nanomaggy")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator seeded with a 64-bit unsigned integer."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def sample_standard_normal(shape, seed: int) -> np.ndarray:
    """I.i.d. N(0, 1) draws; identical seeds give bit-identical arrays."""
    shape = tuple(int(n) for n in shape)
    if any(n <= 0 for n in shape):
        raise ValueError(f"shape must be positive, got {shape}")
    return make_rng(seed).standard_normal(shape)


def fft2(x: np.ndarray) -> np.ndarray:
    return np.fft.fft2(np.asarray(x, dtype=np.float64))


def ifft2(spectrum: np.ndarray, shape=None, *, real: bool = True, imag_tol: float | None = None) -> np.ndarray:
    """Inverse DFT; with ``real=True`` the imaginary residue is checked and dropped."""
    spectrum = np.asarray(spectrum)
    if shape is not None and tuple(shape) != spectrum.shape:
        raise ValueError(f"spectrum shape {spectrum.shape} does not match requested {tuple(shape)}")
    out = np.fft.ifft2(spectrum)
    if not real:
        return out
    if imag_tol is not None:
        residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
        if residue > imag_tol:
            raise ValueError(f"imaginary residue {residue:.3e} exceeds {imag_tol:.1e}")
    return out.real.copy()


def angular_frequencies(shape) -> tuple[np.ndarray, np.ndarray]:
    """Angular DFT frequencies ``2*pi*m/H`` folded to [-pi, pi), as (rows, cols) grids."""
    h, w = shape
    ky = 2.0 * np.pi * np.fft.fftfreq(h)
    kx = 2.0 * np.pi * np.fft.fftfreq(w)
    return np.meshgrid(ky, kx, indexing="ij")


# --- FIMG container -------------------------------------------------------

_DTYPES = {"f64": "<f8", "f32": "<f4", "i32": "<i4"}


def _fimg_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin", ".fimg"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_fimg(path, data, units: str = "dimensionless", dtype: str | None = None) -> None:
    """Write ``<path>.json`` + ``<path>.bin`` (little-endian, row-major)."""
    if isinstance(data, ImageGrid):
        units = data.units
        data = data.data
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("FIMG stores 2-D rasters only")
    if dtype is None:
        dtype = "i32" if np.issubdtype(data.dtype, np.integer) else "f64"
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported FIMG dtype {dtype!r}")
    if units not in UNITS:
        raise ValueError(f"unknown units {units!r}")
    header = {
        "dtype": dtype,
        "shape": [int(data.shape[0]), int(data.shape[1])],
        "units": units,
        "byteorder": "little",
    }
    jpath, bpath = _fimg_paths(path)
    jpath.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(bpath, np.ascontiguousarray(data, dtype=_DTYPES[dtype]).tobytes())
    _atomic_write(jpath, (json.dumps(header, sort_keys=True) + "\n").encode())


def read_fimg(path) -> tuple[np.ndarray, str]:
    """Read a FIMG pair; float data is promoted to float64, i32 stays integer."""
    jpath, bpath = _fimg_paths(path)
    header = json.loads(jpath.read_text())
    dtype = header.get("dtype")
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported FIMG dtype {dtype!r}")
    if header.get("byteorder", "little") != "little":
        raise ValueError("FIMG payload must be little-endian")
    h, w = (int(n) for n in header["shape"])
    raw = np.frombuffer(bpath.read_bytes(), dtype=_DTYPES[dtype])
    if raw.size != h * w:
        raise ValueError(f"{bpath}: expected {h * w} values, found {raw.size}")
    arr = raw.reshape(h, w)
    arr = arr.astype(np.int64) if dtype == "i32" else arr.astype(np.float64)
    return arr, header.get("units", "dimensionless")
