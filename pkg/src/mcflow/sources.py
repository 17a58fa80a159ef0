"""Sky background meshes, threshold source extraction and catalog matching.

Coordinates are ``(row, col)`` in pixels; moment-based shapes use the column
axis as x and the row axis as y.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

CONNECTIVITY = np.ones((3, 3), dtype=bool)  # 8-connected
CLIP_SIGMA = 3.0
CLIP_ITERS = 5
ELLIPSE_FLOOR = 0.5


# --- background -------------------------------------------------------------


@dataclass
class BackgroundModel:
    cell: tuple[int, int]
    mean_mesh: np.ndarray
    rms_mesh: np.ndarray
    mean: np.ndarray = field(repr=False)
    rms: np.ndarray = field(repr=False)
    filled_cells: np.ndarray = field(repr=False, default=None)
    interpolation: str = "bilinear"

    @classmethod
    def constant(cls, shape, mean: float = 0.0, rms: float = 1.0) -> "BackgroundModel":
        h, w = shape
        return cls(
            (h, w),
            np.full((1, 1), float(mean)),
            np.full((1, 1), float(rms)),
            np.full(shape, float(mean)),
            np.full(shape, float(rms)),
            np.zeros((1, 1), dtype=bool),
        )


def sigma_clipped_stats(values: np.ndarray, nsigma: float = CLIP_SIGMA, iters: int = CLIP_ITERS) -> tuple[float, float]:
    """Mean and standard deviation after iterative clipping about the median."""
    v = np.asarray(values, dtype=np.float64).ravel()
    for _ in range(iters):
        if v.size == 0:
            break
        med = np.median(v)
        std = v.std()
        keep = np.abs(v - med) <= nsigma * std
        if keep.all():
            break
        v = v[keep]
    if v.size == 0:
        return np.nan, np.nan
    return float(v.mean()), float(v.std())


def _cell_edges(n: int, cell: int) -> np.ndarray:
    # the last cell absorbs any remainder
    count = max(n // cell, 1)
    edges = np.arange(count + 1) * cell
    edges[-1] = n
    return edges


def _interp_axis(centers: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = np.arange(n, dtype=np.float64)
    if centers.size == 1:
        z = np.zeros(n, dtype=np.int64)
        return z, z, np.zeros(n)
    j = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, centers.size - 2)
    frac = np.clip((pos - centers[j]) / (centers[j + 1] - centers[j]), 0.0, 1.0)
    return j, j + 1, frac


def bilinear_mesh(mesh: np.ndarray, row_centers, col_centers, shape) -> np.ndarray:
    """Bilinear interpolation between cell centres, clamped beyond the outer centres."""
    r0, r1, fr = _interp_axis(np.asarray(row_centers, float), shape[0])
    c0, c1, fc = _interp_axis(np.asarray(col_centers, float), shape[1])
    top = mesh[r0][:, c0] * (1 - fc) + mesh[r0][:, c1] * fc
    bot = mesh[r1][:, c0] * (1 - fc) + mesh[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def estimate_background(img, validity=None, cell: int = 32) -> BackgroundModel:
    """Sigma-clipped mean/rms per mesh cell, interpolated to full resolution.

    Pixels with ``validity <= 0`` are ignored.  A cell without valid pixels
    copies the nearest cell that has them and is marked in ``filled_cells``.
    """
    img = np.asarray(img, dtype=np.float64)
    cell = int(cell)
    if cell < 8:
        raise ValueError(f"background cell must be >= 8 px, got {cell}")
    h, w = img.shape
    if h < cell or w < cell:
        raise ValueError(f"image {img.shape} smaller than one background cell {cell}")
    valid = np.ones(img.shape, bool) if validity is None else np.asarray(validity) > 0

    re, ce = _cell_edges(h, cell), _cell_edges(w, cell)
    nr, nc = re.size - 1, ce.size - 1
    mean_mesh = np.full((nr, nc), np.nan)
    rms_mesh = np.full((nr, nc), np.nan)
    for i in range(nr):
        for j in range(nc):
            block = img[re[i]:re[i + 1], ce[j]:ce[j + 1]]
            ok = valid[re[i]:re[i + 1], ce[j]:ce[j + 1]]
            if ok.any():
                mean_mesh[i, j], rms_mesh[i, j] = sigma_clipped_stats(block[ok])

    filled = np.isnan(mean_mesh)
    if filled.all():
        raise ValueError("no valid pixels for background estimation")
    if filled.any():
        _, (ii, jj) = ndimage.distance_transform_edt(filled, return_indices=True)
        mean_mesh = mean_mesh[ii, jj]
        rms_mesh = rms_mesh[ii, jj]

    row_c = 0.5 * (re[:-1] + re[1:]) - 0.5
    col_c = 0.5 * (ce[:-1] + ce[1:]) - 0.5
    mean = bilinear_mesh(mean_mesh, row_c, col_c, img.shape)
    rms = bilinear_mesh(rms_mesh, row_c, col_c, img.shape)
    return BackgroundModel((cell, cell), mean_mesh, rms_mesh, mean, rms, filled)


# --- extraction -----------------------------------------------------------------


@dataclass
class SourceCatalog:
    ids: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    npix: np.ndarray
    flux: np.ndarray
    a: np.ndarray
    b: np.ndarray
    theta: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.size)

    def centroids(self) -> list[tuple[float, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "row", "col", "npix", "flux", "a", "b", "theta"])
        for k in range(len(self)):
            writer.writerow([
                int(self.ids[k]),
                *(f"{float(v):.12g}" for v in (self.rows[k], self.cols[k])),
                int(self.npix[k]),
                *(f"{float(v):.12g}" for v in (self.flux[k], self.a[k], self.b[k], self.theta[k])),
            ])
        return buf.getvalue()

    @classmethod
    def empty(cls) -> "SourceCatalog":
        z = np.zeros(0)
        return cls(np.zeros(0, np.int64), z, z, np.zeros(0, np.int64), z, z, z, z)


def second_moment_ellipse(rows, cols, weights) -> tuple[float, float, float, float, float]:
    """Weighted centroid and ellipse ``(row, col, a, b, theta)`` from second moments.

    ``theta`` is the angle of the major axis from the column (x) axis toward
    the row (y) axis.  Zero-variance axes get a ``0.5`` px floor.
    """
    w = np.asarray(weights, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        w = np.ones_like(w)
        total = w.sum()
    yc = float(np.sum(w * rows) / total)
    xc = float(np.sum(w * cols) / total)
    dx, dy = cols - xc, rows - yc
    qxx = np.sum(w * dx * dx) / total
    qyy = np.sum(w * dy * dy) / total
    qxy = np.sum(w * dx * dy) / total
    evals, evecs = np.linalg.eigh(np.array([[qxx, qxy], [qxy, qyy]]))
    lam_b, lam_a = max(evals[0], 0.0), max(evals[1], 0.0)
    a = np.sqrt(lam_a) if lam_a > 1e-12 else ELLIPSE_FLOOR
    b = np.sqrt(lam_b) if lam_b > 1e-12 else ELLIPSE_FLOOR
    b = min(b, a)
    vx, vy = evecs[:, 1]
    theta = float(np.arctan2(vy, vx))
    # fold to (-pi/2, pi/2]
    if theta <= -np.pi / 2:
        theta += np.pi
    elif theta > np.pi / 2:
        theta -= np.pi
    return yc, xc, float(a), float(b), theta


def _levels(thresh: float, peak: float, n: int) -> np.ndarray:
    # exponentially spaced strictly between threshold and peak
    thresh = max(thresh, 1e-30)
    if peak <= thresh:
        return np.zeros(0)
    return thresh * (peak / thresh) ** (np.arange(1, n) / n)


def _deblend(values: np.ndarray, region: np.ndarray, base: float, levels: int, contrast: float, total_flux: float) -> list[np.ndarray]:
    """Split ``region`` into significant branches of the isophote tree.

    Returns a list of seed masks; one seed means no split.
    """
    peak = float(values[region].max())
    for lvl in _levels(base, peak, levels):
        lab, n = ndimage.label(region & (values > lvl), structure=CONNECTIVITY)
        if n < 2:
            continue
        fluxes = ndimage.sum(values, lab, index=np.arange(1, n + 1))
        significant = [k + 1 for k in range(n) if fluxes[k] > contrast * total_flux]
        if len(significant) < 2:
            continue
        seeds = []
        for k in significant:
            seeds.extend(_deblend(values, lab == k, lvl, levels, contrast, total_flux))
        return seeds
    return [region]


def _split_region(region: np.ndarray, seeds: list[np.ndarray]) -> np.ndarray:
    """Assign every pixel of ``region`` to its nearest seed; returns local labels 1..n."""
    seed_lab = np.zeros(region.shape, np.int64)
    for k, s in enumerate(seeds, start=1):
        seed_lab[s] = k
    _, (ii, jj) = ndimage.distance_transform_edt(seed_lab == 0, return_indices=True)
    out = np.where(region, seed_lab[ii, jj], 0)
    return out


def relabel_contiguous(labels: np.ndarray, min_pixels: int = 1) -> np.ndarray:
    """Drop labels smaller than ``min_pixels`` and renumber the rest 1..K in scan order."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, np.int64)
    flat = labels.ravel()
    ids, first, counts = np.unique(flat, return_index=True, return_counts=True)
    keep = [(f, i) for i, f, c in zip(ids, first, counts) if i > 0 and c >= min_pixels]
    for new, (_, old) in enumerate(sorted(keep), start=1):
        out[labels == old] = new
    return out


def extract_sources(
    img,
    bg: BackgroundModel,
    k_sigma: float = 2.0,
    min_pixels: int = 5,
    deblend: dict | None = None,
    validity=None,
) -> tuple[np.ndarray, SourceCatalog]:
    """Threshold the background-subtracted image at ``k_sigma`` times the local rms.

    Pixels strictly above threshold form 8-connected components; components
    under ``min_pixels`` are dropped.  ``deblend={'levels': 32, 'contrast': 0.02}``
    splits a component when at least two branches above some exponentially
    spaced isophote each carry more than ``contrast`` of its flux.
    Returns the segmentation map (0 = background, 1..K) and the catalog.
    """
    if not k_sigma > 0:
        raise ValueError("k_sigma must be positive")
    if min_pixels < 1:
        raise ValueError("min_pixels must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    sub = img - bg.mean
    thresh = k_sigma * bg.rms
    det = sub > thresh
    if validity is not None:
        det &= np.asarray(validity) > 0

    lab, n = ndimage.label(det, structure=CONNECTIVITY)
    seg = relabel_contiguous(lab, min_pixels)

    if deblend and seg.max() > 0:
        levels = int(deblend.get("levels", 32))
        contrast = float(deblend.get("contrast", 0.02))
        pieces = np.zeros_like(seg)
        next_id = 1
        for sl_idx, sl in enumerate(ndimage.find_objects(seg), start=1):
            region = seg[sl] == sl_idx
            vals = np.where(region, sub[sl], 0.0)
            base = float(np.min(thresh[sl][region]))
            total = float(vals[region].sum())
            seeds = _deblend(vals, region, base, levels, contrast, total)
            local = _split_region(region, seeds) if len(seeds) > 1 else region.astype(np.int64)
            for k in range(1, int(local.max()) + 1):
                pieces[sl][local == k] = next_id
                next_id += 1
        seg = relabel_contiguous(pieces, 1)

    return seg, catalog_from_segmentation(sub, seg)


def catalog_from_segmentation(values, seg) -> SourceCatalog:
    values = np.asarray(values, dtype=np.float64)
    k = int(seg.max())
    if k == 0:
        return SourceCatalog.empty()
    rows, cols = [], []
    npix, flux, a_s, b_s, th = [], [], [], [], []
    for sid, sl in enumerate(ndimage.find_objects(seg), start=1):
        m = seg[sl] == sid
        rr, cc = np.nonzero(m)
        v = values[sl][m]
        yc, xc, a, b, theta = second_moment_ellipse(rr + sl[0].start, cc + sl[1].start, np.maximum(v, 0.0))
        rows.append(yc)
        cols.append(xc)
        npix.append(int(m.sum()))
        flux.append(float(v.sum()))
        a_s.append(a)
        b_s.append(b)
        th.append(theta)
    return SourceCatalog(
        np.arange(1, k + 1), np.array(rows), np.array(cols), np.array(npix),
        np.array(flux), np.array(a_s), np.array(b_s), np.array(th),
    )


def label_centroids(seg, min_pixels: int = 10) -> list[tuple[int, float, float]]:
    """Unweighted centroids of labels covering at least ``min_pixels`` pixels."""
    seg = np.asarray(seg)
    out = []
    for sid, sl in enumerate(ndimage.find_objects(seg), start=1):
        if sl is None:
            continue
        rr, cc = np.nonzero(seg[sl] == sid)
        if rr.size < min_pixels:
            continue
        out.append((sid, float(rr.mean() + sl[0].start), float(cc.mean() + sl[1].start)))
    return out


# --- matching -------------------------------------------------------------------


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    fp_ids: list[int]
    fn_ids: list[int]
    precision: float
    recall: float
    f1: float

    @property
    def tp(self) -> int:
        return len(self.pairs)


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def greedy_match(gt, pred, tol: float = 10.0) -> MatchResult:
    """Greedy nearest-first one-to-one matching within ``tol`` pixels.

    ``gt`` and ``pred`` are sequences of ``(row, col)``; ids are list indices.
    Candidate pairs are walked in ascending distance (ties by gt id, then
    pred id) and claimed when both ends are still free.  An empty prediction
    against an empty truth scores 1 everywhere; an undefined ratio is 0.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    pairs = []
    if len(g) and len(p):
        d2 = ((g[:, None, :] - p[None, :, :]) ** 2).sum(-1)
        gi, pj = np.nonzero(d2 <= tol * tol)
        order = np.lexsort((pj, gi, d2[gi, pj]))
        used_g, used_p = set(), set()
        for k in order:
            a, b = int(gi[k]), int(pj[k])
            if a in used_g or b in used_p:
                continue
            used_g.add(a)
            used_p.add(b)
            pairs.append((a, b, float(np.sqrt(d2[a, b]))))
    matched_g = {a for a, _, _ in pairs}
    matched_p = {b for _, b, _ in pairs}
    fn = [i for i in range(len(g)) if i not in matched_g]
    fp = [j for j in range(len(p)) if j not in matched_p]
    tp = len(pairs)
    if not len(g) and not len(p):
        prec = rec = f1 = 1.0
    else:
        prec = tp / len(p) if len(p) else 0.0
        rec = tp / len(g) if len(g) else 0.0
        f1 = _f1(prec, rec)
    return MatchResult(pairs, fp, fn, prec, rec, f1)


def detection_scores(results: list[MatchResult]) -> tuple[float, float, float]:
    """Macro average: every image weighs the same."""
    if not results:
        raise ValueError("need at least one per-image match result")
    return (
        float(np.mean([r.precision for r in results])),
        float(np.mean([r.recall for r in results])),
        float(np.mean([r.f1 for r in results])),
    )
