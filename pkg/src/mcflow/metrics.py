"""Image-quality, photometric and shape metrics.

PSNR and SSIM work in the normalized [0, 1] domain.  Flux-L1 and the
per-source quantities (magnitude residual, luminosity-proxy mass error, shear
residual) work in native flux units on background-subtracted images, over the
ground-truth segmentation footprints.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0
ZERO_POINT = 25.0
THETA_STAR = 3.0
BRIGHT_FLUX = 0.5
MIN_LABEL_PIXELS = 10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def psnr(pred, gt, peak: float = 1.0) -> float:
    pred, gt = _pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(-10.0 * np.log10(mse / peak**2), PSNR_CAP))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    win = np.outer(g, g)
    return win / win.sum()


def ssim(pred, gt, data_range: float = 1.0, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
         k1: float = SSIM_K1, k2: float = SSIM_K2) -> float:
    """Mean SSIM over all fully-supported Gaussian windows."""
    pred, gt = _pair(pred, gt)
    if min(pred.shape) < window:
        raise ValueError(f"image smaller than the {window}x{window} SSIM window")
    win = _gaussian_window(window, sigma)
    pad = (window - 1) // 2
    crop = (slice(pad, pred.shape[0] - pad), slice(pad, pred.shape[1] - pad))

    def filt(a):
        return ndimage.correlate(a, win, mode="reflect")[crop]

    mu_x, mu_y = filt(pred), filt(gt)
    sxx = filt(pred * pred) - mu_x**2
    syy = filt(gt * gt) - mu_y**2
    sxy = filt(pred * gt) - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    smap = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2))
    return float(smap.mean())


# --- apertures and flux -----------------------------------------------------------


@dataclass
class ApertureMask:
    """Per-source pixel sets, as ``(rows, cols)`` index arrays keyed by source id."""

    mode: str
    supports: dict[int, tuple[np.ndarray, np.ndarray]] = field(repr=False)
    scale: float = 1.0

    def __len__(self) -> int:
        return len(self.supports)


def footprint_apertures(seg, ids=None) -> ApertureMask:
    seg = np.asarray(seg)
    supports = {}
    for sid, sl in enumerate(ndimage.find_objects(seg), start=1):
        if sl is None or (ids is not None and sid not in ids):
            continue
        rr, cc = np.nonzero(seg[sl] == sid)
        supports[sid] = (rr + sl[0].start, cc + sl[1].start)
    return ApertureMask("footprint", supports)


def ellipse_apertures(catalog, shape, scale: float = 1.0) -> ApertureMask:
    """Elliptical apertures from catalog ``(row, col, a, b, theta)`` scaled by ``scale``.

    Non-canonical: the Kron scale factor is a free parameter here.
    """
    rr, cc = np.indices(shape)
    supports = {}
    for k in range(len(catalog)):
        dx = cc - catalog.cols[k]
        dy = rr - catalog.rows[k]
        ct, st = np.cos(catalog.theta[k]), np.sin(catalog.theta[k])
        u = (dx * ct + dy * st) / (scale * catalog.a[k])
        v = (-dx * st + dy * ct) / (scale * catalog.b[k])
        inside = u * u + v * v <= 1.0
        supports[int(catalog.ids[k])] = np.nonzero(inside)
    return ApertureMask("ellipse", supports, scale)


def aperture_fluxes(img, masks: ApertureMask) -> dict[int, float]:
    img = np.asarray(img, dtype=np.float64)
    return {sid: float(img[idx].sum()) for sid, idx in masks.supports.items()}


def flux_l1(pred, gt, masks: ApertureMask) -> float:
    """Sum over sources of ``|aperture flux(pred) - aperture flux(gt)|``.

    An empty aperture set gives 0.
    """
    pred, gt = _pair(pred, gt)
    fp = aperture_fluxes(pred, masks)
    fg = aperture_fluxes(gt, masks)
    return float(sum(abs(fp[k] - fg[k]) for k in masks.supports))


# --- per-source science quantities --------------------------------------------------


def magnitude(flux: float, zero_point: float = ZERO_POINT) -> float:
    if flux <= 0:
        raise ValueError("magnitude needs a positive flux")
    return -2.5 * np.log10(flux) + zero_point


def magnitude_error(f_pred: float, f_gt: float, zero_point: float = ZERO_POINT) -> float:
    """``|m_pred - m_gt| = 2.5 |log10 f_pred - log10 f_gt|`` (zero point cancels)."""
    if f_pred <= 0 or f_gt <= 0:
        raise ValueError("magnitude error needs positive fluxes")
    return float(abs(magnitude(f_pred, zero_point) - magnitude(f_gt, zero_point)))


def stellar_mass_mae(pairs, theta_star: float = THETA_STAR) -> float:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one flux pair")
    return float(np.mean([theta_star * abs(fp - fg) for fp, fg in pairs]))


@dataclass(frozen=True)
class ShearMeasurement:
    e1: float
    e2: float
    qxx: float
    qyy: float
    qxy: float
    centroid: tuple[float, float]
    uniform_fallback: bool = False


def measure_shear(img, footprint) -> ShearMeasurement:
    """Ellipticity from positivity-clipped, flux-weighted second moments.

    ``footprint`` is ``(rows, cols)``; x is the column axis.  A footprint with
    no positive flux falls back to uniform weights; a single-pixel footprint
    (zero trace) reports ``e1 = e2 = 0``.
    """
    img = np.asarray(img, dtype=np.float64)
    rows, cols = (np.asarray(a) for a in footprint)
    if rows.size == 0:
        raise ValueError("empty footprint")
    w = np.maximum(img[rows, cols], 0.0)
    fallback = False
    if w.sum() <= 0:
        w = np.ones_like(w)
        fallback = True
    tot = w.sum()
    yc = np.sum(w * rows) / tot
    xc = np.sum(w * cols) / tot
    dx, dy = cols - xc, rows - yc
    qxx = float(np.sum(w * dx * dx) / tot)
    qyy = float(np.sum(w * dy * dy) / tot)
    qxy = float(np.sum(w * dx * dy) / tot)
    trace = qxx + qyy
    if trace > 0:
        e1, e2 = (qxx - qyy) / trace, 2.0 * qxy / trace
    else:
        e1 = e2 = 0.0
    return ShearMeasurement(float(e1), float(e2), qxx, qyy, qxy, (float(yc), float(xc)), fallback)


def shear_error(m_pred: ShearMeasurement, m_gt: ShearMeasurement) -> float:
    return float(np.hypot(m_pred.e1 - m_gt.e1, m_pred.e2 - m_gt.e2))


def source_fluxes(img, seg, min_pixels: int = MIN_LABEL_PIXELS) -> dict[int, float]:
    img = np.asarray(img, dtype=np.float64)
    seg = np.asarray(seg)
    return {
        sid: float(img[idx].sum())
        for sid, idx in footprint_apertures(seg).supports.items()
        if idx[0].size >= min_pixels
    }


def bright_source_select(seg, gt, f_thr: float = BRIGHT_FLUX, min_pixels: int = MIN_LABEL_PIXELS) -> list[int]:
    """Ids whose footprint-integrated ground-truth flux is at least ``f_thr``."""
    return sorted(sid for sid, f in source_fluxes(gt, seg, min_pixels).items() if f >= f_thr)


@dataclass
class DownstreamParams:
    f_thr: float = BRIGHT_FLUX
    theta_star: float = THETA_STAR
    zero_point: float = ZERO_POINT
    min_pixels: int = MIN_LABEL_PIXELS


@dataclass
class SourceRow:
    id: int
    f_gt: float
    f_pred: float
    dm: float | None
    dmass: float
    dgamma: float


@dataclass
class Summary:
    mean: float
    median: float
    n: int
    excluded: int


@dataclass
class DownstreamReport:
    sources: list[SourceRow]
    dm: Summary
    mass: Summary
    dgamma: Summary

    @property
    def n_src(self) -> int:
        return len(self.sources)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["metric", "mean", "median", "n", "excluded"])
        for name, s in (("dm", self.dm), ("mass_mae", self.mass), ("dgamma", self.dgamma)):
            wr.writerow([name, f"{s.mean:.12g}", f"{s.median:.12g}", s.n, s.excluded])
        return buf.getvalue()

    def sources_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["id", "f_gt", "f_pred", "dm", "dmass", "dgamma"])
        for r in self.sources:
            wr.writerow([
                r.id, f"{r.f_gt:.12g}", f"{r.f_pred:.12g}",
                "" if r.dm is None else f"{r.dm:.12g}", f"{r.dmass:.12g}", f"{r.dgamma:.12g}",
            ])
        return buf.getvalue()


def _summary(values: list[float], excluded: int = 0) -> Summary:
    if not values:
        return Summary(float("nan"), float("nan"), 0, excluded)
    # np.median averages the two central values for even counts
    return Summary(float(np.mean(values)), float(np.median(values)), len(values), excluded)


def downstream_report(pred, gt, seg, params: DownstreamParams | None = None) -> DownstreamReport:
    """Per-source magnitude, mass and shear residuals on the bright GT set.

    Both images must already be background-subtracted; every source is
    measured on its ground-truth footprint.  Sources with a non-positive flux
    on either side are left out of the magnitude statistics only.
    """
    params = params or DownstreamParams()
    pred, gt = _pair(pred, gt)
    seg = np.asarray(seg)
    ids = bright_source_select(seg, gt, params.f_thr, params.min_pixels)
    if not ids:
        raise ValueError("no bright sources above the flux threshold")
    masks = footprint_apertures(seg, set(ids))
    rows = []
    for sid in ids:
        idx = masks.supports[sid]
        f_gt = float(gt[idx].sum())
        f_pred = float(pred[idx].sum())
        dm = magnitude_error(f_pred, f_gt, params.zero_point) if f_pred > 0 and f_gt > 0 else None
        dmass = params.theta_star * abs(f_pred - f_gt)
        dgamma = shear_error(measure_shear(pred, idx), measure_shear(gt, idx))
        rows.append(SourceRow(sid, f_gt, f_pred, dm, dmass, dgamma))
    dms = [r.dm for r in rows if r.dm is not None]
    return DownstreamReport(
        rows,
        _summary(dms, len(rows) - len(dms)),
        _summary([r.dmass for r in rows]),
        _summary([r.dgamma for r in rows]),
    )
