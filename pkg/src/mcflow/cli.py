"""Command-line driver: ``mcflow {synth,sample,toy,metrics,selfcheck}``.

Every run echoes its resolved configuration to ``config.json`` in the output
directory, writes files atomically, and is deterministic given its config and
seed.  Exit codes: 0 success, 2 configuration error, 3 input error, 4 numeric
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .forward import ForwardOperator, convolve_psf, make_gaussian_psf, nearest_upsample
from .image import (
    DegenerateNormalization,
    NormalizationSpec,
    fit_normalization,
    make_rng,
    normalize,
    read_fimg,
    write_fimg,
)
from .metrics import (
    DownstreamParams,
    ellipse_apertures,
    flux_l1,
    footprint_apertures,
    downstream_report,
    psnr,
    ssim,
)
from .sampler import CORRECTIONS, SCHEDULES, SamplerConfig, initial_state, make_oracle_velocity, sample
from .sources import (
    SourceCatalog,
    catalog_from_segmentation,
    estimate_background,
    extract_sources,
    greedy_match,
    label_centroids,
)
from .toy import (
    BANDS,
    DivergentStep,
    ToyModelSpec,
    naive_gain,
    observation_image,
    simulate_impulse_recovery,
    sigma_vs_n,
    wiener_gain,
)
from .wiener import make_wiener

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_INVARIANT = 4


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


class InvariantViolation(Exception):
    pass


@dataclass
class RunConfig:
    """Resolved parameters of one subcommand run (flags merged with ``--config``)."""

    subcommand: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {"subcommand": self.subcommand, "version": __version__, **self.params}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# --- output helpers -------------------------------------------------------------


def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([_fmt(v) for v in row])
    _atomic_text(path, buf.getvalue())


def write_pgm(path: Path, img) -> None:
    """8-bit binary PGM with a per-image min-max stretch (constant images map to 0)."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros(img.shape) if hi <= lo else (img - lo) / (hi - lo)
    pix = np.round(scaled * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header + pix.tobytes())
    os.replace(tmp, path)


def _echo_config(out: Path, cfg: RunConfig) -> None:
    _atomic_text(out / "config.json", cfg.to_json())


def _load(path, what: str) -> tuple[np.ndarray, str]:
    if path is None:
        raise InputError(f"missing input: {what}")
    try:
        return read_fimg(path)
    except FileNotFoundError as exc:
        raise InputError(f"{what}: cannot read {path} ({exc.filename})") from exc
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{what}: malformed FIMG {path}: {exc}") from exc


# --- synth ------------------------------------------------------------------------


def _render_source(shape, row, col, flux, a, b, theta) -> np.ndarray:
    yy, xx = np.indices(shape, dtype=np.float64)
    dx, dy = xx - col, yy - row
    ct, st = np.cos(theta), np.sin(theta)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return flux / (2 * np.pi * a * b) * np.exp(-0.5 * (u * u / (a * a) + v * v / (b * b)))


def _place_sources(rng, n, size, margin, min_sep):
    centres = []
    tries = 0
    while len(centres) < n:
        tries += 1
        if tries > 10000:
            raise ConfigError(f"cannot place {n} sources {min_sep} px apart on a {size} px grid")
        p = rng.uniform(margin, size - 1 - margin, size=2)
        if all(np.hypot(*(p - q)) >= min_sep for q in centres):
            centres.append(p)
    return centres


def _weight_map(rng, shape, noise, stripes, trails) -> np.ndarray:
    """Inverse-variance map with zero-weight vertical stripes and short trails."""
    wht = np.full(shape, 1.0 / noise**2)
    h, w = shape
    for _ in range(stripes):
        c = int(rng.integers(0, w - 1))
        wht[:, c:c + 2] = 0.0
    for _ in range(trails):
        r0, c0 = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
        ang = rng.uniform(0, np.pi)
        length = rng.uniform(6, 12)
        for t in np.linspace(0, length, int(4 * length)):
            r = int(round(r0 + t * np.sin(ang)))
            c = int(round(c0 + t * np.cos(ang)))
            if 0 <= r < h and 0 <= c < w:
                wht[r, c] = 0.0
    return wht


def cmd_synth(p: dict) -> None:
    size, s = p["hr_size"], p["scale"]
    if size % s:
        raise ConfigError(f"hr_size {size} not divisible by scale {s}")
    if p["n_sources"] < 0 or not p["hr_noise"] > 0:
        raise ConfigError("n_sources must be >= 0 and hr_noise > 0")
    rng = make_rng(p["seed"])
    shape = (size, size)
    clean = np.zeros(shape)
    truth = []
    for k, (row, col) in enumerate(_place_sources(rng, p["n_sources"], size, p["margin"], p["min_sep"]), start=1):
        flux = rng.uniform(*p["flux_range"])
        if rng.random() < p["point_fraction"]:
            a = b = 0.8
            theta = 0.0
        else:
            a = rng.uniform(1.2, 2.5)
            b = a * rng.uniform(0.5, 1.0)
            theta = rng.uniform(0, np.pi)
        stamp = _render_source(shape, row, col, flux, a, b, theta)
        clean += stamp
        truth.append((k, row, col, int(np.count_nonzero(stamp > p["mask_level"])), float(stamp.sum()), a, b, theta))
    hr = clean + p["hr_noise"] * rng.standard_normal(shape)
    op = ForwardOperator.gaussian(shape, s, p["psf_sigma"])
    lr_clean = op(hr)
    blurred = convolve_psf(hr, op.psf)
    if abs(lr_clean.sum() - blurred.sum() / s**2) > 1e-9 * max(1.0, abs(blurred.sum())):
        raise InvariantViolation("synthetic pair breaks flux conservation")
    lr = lr_clean + p["lr_noise"] * rng.standard_normal(op.lr_shape) if p["lr_noise"] > 0 else lr_clean
    wht = _weight_map(rng, shape, p["hr_noise"], p["stripes"], p["trails"])
    mask = (clean > p["mask_level"]).astype(np.float64)

    out = Path(p["out"])
    write_fimg(out / "hr", hr, "nanomaggy")
    write_fimg(out / "lr", lr, "nanomaggy")
    write_fimg(out / "cond", nearest_upsample(lr, s), "nanomaggy")
    write_fimg(out / "wht", wht, "dimensionless")
    write_fimg(out / "mask", mask, "dimensionless")
    cat = SourceCatalog(*(np.array(col) for col in zip(*truth))) if truth else SourceCatalog.empty()
    _atomic_text(out / "truth_catalog.csv", cat.to_csv())


# --- sample ----------------------------------------------------------------------


def _parse_spike(text):
    try:
        r, c, amp = text.split(",")
        return (int(r), int(c)), float(amp)
    except (AttributeError, ValueError) as exc:
        raise ConfigError(f"spike must be 'row,col,amplitude', got {text!r}") from exc


def cmd_sample(p: dict) -> None:
    lr, _ = _load(p["lr"], "low-resolution observation")
    target, units = _load(p["target"], "oracle target")
    cond = _load(p["cond"], "condition")[0] if p["cond"] else None
    s = p["scale"]
    if target.shape[0] % s or target.shape[1] % s:
        raise InputError(f"target shape {target.shape} not divisible by scale {s}")
    op = ForwardOperator.gaussian(target.shape, s, p["psf_sigma"])
    if lr.shape != op.lr_shape:
        raise InputError(f"observation shape {lr.shape} does not match LR grid {op.lr_shape}")
    if cond is not None and cond.shape != op.hr_shape:
        raise InputError(f"condition shape {cond.shape} does not match HR grid {op.hr_shape}")
    try:
        cfg = SamplerConfig(p["steps"], p["eta0"], p["correction"], p["lambda_snr"], p["schedule"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    x0 = initial_state(op.hr_shape, p["seed"])
    kind = p["oracle"]
    spike = _parse_spike(p["spike"]) if kind == "hallucinating" else None
    if spike is not None and not all(0 <= i < n for i, n in zip(spike[0], op.hr_shape)):
        raise ConfigError(f"spike pixel {spike[0]} outside the HR grid")
    try:
        v = make_oracle_velocity(kind, target, x0=x0, spike=spike)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    x, rec = sample(v, lr, cond, op, cfg, p["seed"], x0=x0)
    if not np.all(np.isfinite(x)):
        raise InvariantViolation("sampler produced non-finite values")

    out = Path(p["out"])
    write_fimg(out / "xN", x, units)
    _atomic_text(out / "trajectory.csv", rec.to_csv())
    write_pgm(out / "quicklook.pgm", x)


# --- toy ------------------------------------------------------------------------


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals or min(vals) < 1:
        raise ConfigError("iteration counts must be positive")
    return vals


def cmd_toy(p: dict) -> None:
    try:
        spec = ToyModelSpec(
            sigma_h=p["sigma_h"], s=p["scale"], eta=p["eta"], N=p["steps"], sigma_n=p["sigma_n"],
            lambda_snr=p["lambda_snr"], grid=(p["grid"], p["grid"]), band=p["band"],
        )
    except (ValueError, DivergentStep) as exc:
        raise ConfigError(str(exc)) from exc
    n_values = _int_list(p["n_values"])
    seed = p["seed"]
    out = Path(p["out"])

    ks = np.linspace(0.0, spec.k_max, p["k_points"])
    h_sq = spec.transfer_sq(ks**2)
    g_n = naive_gain(h_sq, spec.eta, spec.N)
    g_w = wiener_gain(h_sq, spec.eta, spec.N, spec.lambda_snr)
    write_csv(out / "recovery.csv", ["k", "g_naive", "g_wiener"], zip(ks, g_n, g_w))

    try:
        rows = sigma_vs_n(spec, n_values, seed)
        recs = {m: simulate_impulse_recovery(spec, m, seed) for m in ("truth", "naive", "wiener")}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    noise_col = spec.sigma_n if spec.sigma_n > 0 else None
    write_csv(out / "sigma_vs_N.csv", ["N", "sigma_naive", "sigma_wiener", "sigma_n"],
              [(n, a, b, noise_col) for n, a, b in rows])

    radii = recs["truth"].profile.radii
    write_csv(out / "radial.csv", ["r", "truth", "naive", "wiener"],
              zip(radii, *(recs[m].profile.values for m in ("truth", "naive", "wiener"))))

    write_pgm(out / "truth.pgm", recs["truth"].image)
    write_pgm(out / "observation.pgm", observation_image(spec, seed))
    write_pgm(out / "naive.pgm", recs["naive"].image)
    write_pgm(out / "wiener.pgm", recs["wiener"].image)


# --- metrics ---------------------------------------------------------------------


def cmd_metrics(p: dict) -> None:
    pred, _ = _load(p["pred"], "prediction")
    gt, _ = _load(p["gt"], "ground truth")
    if pred.shape != gt.shape:
        raise InputError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    validity = None
    if p["wht"]:
        wht, _ = _load(p["wht"], "weight map")
        if wht.shape != gt.shape:
            raise InputError("weight map shape differs from ground truth")
        validity = wht > 0

    try:
        bg_gt = estimate_background(gt, validity, p["bg_cell"])
        bg_pred = estimate_background(pred, validity, p["bg_cell"])
        bg_det = estimate_background(pred, validity, p["det_cell"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    gt_sub = gt - bg_gt.mean
    pred_sub = pred - bg_pred.mean
    deblend = {"levels": p["deblend_levels"], "contrast": p["deblend_contrast"]} if p["deblend_levels"] > 0 else None

    out = Path(p["out"])
    if p["seg"]:
        seg, _ = _load(p["seg"], "segmentation")
        if seg.shape != gt.shape:
            raise InputError("segmentation shape differs from ground truth")
        seg = seg.astype(np.int64)
    else:
        seg, _ = extract_sources(gt, bg_gt, p["k_sigma"], p["min_pixels"], deblend, validity)
        write_fimg(out / "seg", seg, "dimensionless", "i32")

    if p["norm"]:
        try:
            norm = NormalizationSpec.from_dict(json.loads(Path(p["norm"]).read_text()))
        except FileNotFoundError as exc:
            raise InputError(f"normalization spec not found: {p['norm']}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad normalization spec: {exc}") from exc
    else:
        try:
            norm = fit_normalization([gt])
        except DegenerateNormalization as exc:
            raise InputError(f"ground truth cannot be normalized: {exc}") from exc
    pn, gn = normalize(pred, norm).data, normalize(gt, norm).data
    try:
        ssim_val = ssim(pn, gn)
    except ValueError as exc:
        raise InputError(str(exc)) from exc

    if p["aperture"] == "ellipse":
        masks = ellipse_apertures(catalog_from_segmentation(gt_sub, seg), gt.shape, p["ellipse_scale"])
    else:
        masks = footprint_apertures(seg)
    write_csv(out / "metrics.csv", ["metric", "value"], [
        ("psnr", psnr(pn, gn)),
        ("ssim", ssim_val),
        ("flux_l1", flux_l1(pred_sub, gt_sub, masks)),
        ("n_apertures", len(masks)),
    ])

    gt_pts = [(r, c) for _, r, c in label_centroids(seg, p["label_min_pixels"])]
    _, pred_cat = extract_sources(pred, bg_det, p["k_sigma"], p["min_pixels"], deblend, validity)
    m = greedy_match(gt_pts, pred_cat.centroids(), p["tol"])
    write_csv(out / "detection.csv", ["precision", "recall", "f1", "tp", "fp", "fn"],
              [(m.precision, m.recall, m.f1, m.tp, len(m.fp_ids), len(m.fn_ids))])

    params = DownstreamParams(p["f_thr"], p["theta_star"], p["zero_point"], p["label_min_pixels"])
    try:
        rep = downstream_report(pred_sub, gt_sub, seg, params)
    except ValueError:
        rep = None
    if rep is None:
        write_csv(out / "downstream.csv", ["metric", "mean", "median", "n", "excluded"],
                  [(name, float("nan"), float("nan"), 0, 0) for name in ("dm", "mass_mae", "dgamma")])
        write_csv(out / "downstream_sources.csv", ["id", "f_gt", "f_pred", "dm", "dmass", "dgamma"], [])
    else:
        _atomic_text(out / "downstream.csv", rep.summary_csv())
        _atomic_text(out / "downstream_sources.csv", rep.sources_csv())


# --- selfcheck -----------------------------------------------------------------


def run_selfcheck(seed: int = 0, trials: int = 10) -> list[tuple[str, bool, float]]:
    """Quick operator checks: adjointness, flux conservation, Wiener limits."""
    rng = make_rng(seed)
    results = []
    for s in (1, 2, 4):
        op = ForwardOperator.gaussian((32, 32), s)
        worst = 0.0
        for _ in range(trials):
            x = rng.standard_normal(op.hr_shape)
            y = rng.standard_normal(op.lr_shape)
            lhs, rhs = float(np.vdot(op(x), y)), float(np.vdot(x, op.adjoint(y)))
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
        results.append((f"adjoint_s{s}", worst < 1e-9, worst))
        x = rng.standard_normal(op.hr_shape)
        err = abs(op(x).sum() - x.sum() / s**2)
        results.append((f"flux_s{s}", err < 1e-9, err))
    psf = make_gaussian_psf(2.0, (32, 32))
    bound = float(np.max(np.abs(make_wiener(psf, 50.0).kernel)))
    results.append(("wiener_bound", bound <= np.sqrt(50.0) / 2 + 1e-12, bound))
    return results


def cmd_selfcheck(p: dict) -> None:
    results = run_selfcheck(p["seed"] if p["seed"] is not None else 0)
    rows = [(name, "pass" if ok else "fail", val) for name, ok, val in results]
    for name, status, val in rows:
        print(f"{name}: {status} ({val:.3g})")
    if p["out"]:
        write_csv(Path(p["out"]) / "selfcheck.csv", ["check", "status", "value"], rows)
    if not all(ok for _, ok, _ in results):
        raise InvariantViolation("operator self-check failed")


# --- argument parsing ---------------------------------------------------------------


def _float_pair(text):
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        vals = [float(v) for v in str(text).split(",")]
    if len(vals) != 2 or not 0 < vals[0] <= vals[1]:
        raise ConfigError(f"expected 'lo,hi' with 0 < lo <= hi, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(sp, seed_help="random seed"):
        sp.add_argument("--config", help="JSON file whose keys override flags")
        sp.add_argument("--seed", type=int, help=seed_help)
        sp.add_argument("--selfcheck", action="store_true", help="run operator self-checks first")
        return sp

    sp = common(sub.add_parser("synth", help="generate a synthetic HR/LR pair"), "random seed (required)")
    sp.add_argument("--out", required=False)
    sp.add_argument("--hr-size", type=int, default=64)
    sp.add_argument("--scale", type=int, default=4)
    sp.add_argument("--psf-sigma", type=float, default=2.0)
    sp.add_argument("--n-sources", type=int, default=5)
    sp.add_argument("--min-sep", type=float, default=14.0)
    sp.add_argument("--margin", type=float, default=8.0)
    sp.add_argument("--flux-range", default="20,60")
    sp.add_argument("--point-fraction", type=float, default=0.3)
    sp.add_argument("--hr-noise", type=float, default=0.002)
    sp.add_argument("--lr-noise", type=float, default=0.0)
    sp.add_argument("--mask-level", type=float, default=0.05)
    sp.add_argument("--stripes", type=int, default=1)
    sp.add_argument("--trails", type=int, default=2)
    sp.set_defaults(func=cmd_synth, needs_seed=True)

    sp = common(sub.add_parser("sample", help="run the measurement-consistent sampler"), "random seed (required)")
    sp.add_argument("--out")
    sp.add_argument("--lr", help="LR observation FIMG")
    sp.add_argument("--target", help="HR FIMG the oracle velocity field steers toward")
    sp.add_argument("--cond", help="optional HR condition FIMG")
    sp.add_argument("--oracle", choices=("rectified", "endpoint", "hallucinating"), default="rectified")
    sp.add_argument("--spike", help="row,col,amplitude for the hallucinating oracle")
    sp.add_argument("--scale", type=int, default=4)
    sp.add_argument("--psf-sigma", type=float, default=2.0)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--eta0", type=float, default=0.5)
    sp.add_argument("--correction", choices=CORRECTIONS, default="wiener")
    sp.add_argument("--lambda-snr", type=float, default=50.0)
    sp.add_argument("--schedule", choices=SCHEDULES, default="linear_decay")
    sp.set_defaults(func=cmd_sample, needs_seed=True)

    sp = common(sub.add_parser("toy", help="closed-form spectral toy model sweeps"), "noise seed (default 0)")
    sp.add_argument("--out")
    sp.add_argument("--sigma-h", type=float, default=2.0)
    sp.add_argument("--scale", type=int, default=4)
    sp.add_argument("--eta", type=float, default=0.5)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--sigma-n", type=float, default=0.0)
    sp.add_argument("--lambda-snr", type=float, default=50.0)
    sp.add_argument("--grid", type=int, default=256)
    sp.add_argument("--band", choices=BANDS, default="square")
    sp.add_argument("--n-values", default="1,2,3,5,10,20,50")
    sp.add_argument("--k-points", type=int, default=65)
    sp.set_defaults(func=cmd_toy, needs_seed=False)

    sp = common(sub.add_parser("metrics", help="image, detection and downstream metrics"))
    sp.add_argument("--out")
    sp.add_argument("--pred")
    sp.add_argument("--gt")
    sp.add_argument("--seg", help="GT segmentation FIMG (computed from --gt when absent)")
    sp.add_argument("--wht", help="inverse-variance map; zero marks invalid pixels")
    sp.add_argument("--norm", help="normalization spec JSON (fitted on --gt when absent)")
    sp.add_argument("--bg-cell", type=int, default=32)
    sp.add_argument("--det-cell", type=int, default=64)
    sp.add_argument("--k-sigma", type=float, default=2.0)
    sp.add_argument("--min-pixels", type=int, default=5)
    sp.add_argument("--label-min-pixels", type=int, default=10)
    sp.add_argument("--deblend-levels", type=int, default=32)
    sp.add_argument("--deblend-contrast", type=float, default=0.02)
    sp.add_argument("--tol", type=float, default=10.0)
    sp.add_argument("--aperture", choices=("footprint", "ellipse"), default="footprint")
    sp.add_argument("--ellipse-scale", type=float, default=1.0)
    sp.add_argument("--f-thr", type=float, default=0.5)
    sp.add_argument("--theta-star", type=float, default=3.0)
    sp.add_argument("--zero-point", type=float, default=25.0)
    sp.set_defaults(func=cmd_metrics, needs_seed=False)

    sp = common(sub.add_parser("selfcheck", help="operator invariant checks"))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_selfcheck, needs_seed=False)
    return parser


_INTERNAL = {"func", "needs_seed", "config", "selfcheck", "subcommand"}


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    params = {k: v for k, v in vars(ns).items() if k not in _INTERNAL}
    if ns.config:
        try:
            overrides = json.loads(Path(ns.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {ns.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in overrides.items():
            k = key.replace("-", "_")
            if k == "subcommand":
                continue
            if k not in params:
                raise ConfigError(f"unknown config key {key!r} for {ns.subcommand}")
            params[k] = value
    if ns.needs_seed and params.get("seed") is None:
        raise ConfigError(f"--seed is required for {ns.subcommand}")
    if params.get("seed") is not None:
        seed = params["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if ns.subcommand != "selfcheck" and not params.get("out"):
        raise ConfigError("--out is required")
    if "flux_range" in params:
        params["flux_range"] = _float_pair(params["flux_range"])
    return RunConfig(ns.subcommand, params)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve_config(ns)
        if ns.selfcheck and ns.subcommand != "selfcheck":
            failed = [name for name, ok, _ in run_selfcheck() if not ok]
            if failed:
                raise InvariantViolation(f"self-check failed: {', '.join(failed)}")
        if cfg.params.get("out"):
            _echo_config(Path(cfg.params["out"]), cfg)
        ns.func(cfg.params)
    except ConfigError as exc:
        print(f"mcflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"mcflow: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantViolation as exc:
        print(f"mcflow: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
