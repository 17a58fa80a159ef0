"""OT conditional flow matching and measurement-consistent Euler sampling.

A velocity field is any callable ``v(x, t, c) -> array`` returning an array
shaped like ``x``.  Trained networks are out of scope; the analytic oracle
fields built by :func:`make_oracle_velocity` drive the sampler in tests and
in the CLI.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .forward import ForwardOperator, upsample_adjoint
from .image import sample_standard_normal
from .wiener import DEFAULT_LAMBDA_SNR, make_wiener, wiener_backproject

RECTIFIED_EPS = 1e-6
CORRECTIONS = ("none", "adjoint", "wiener")
SCHEDULES = ("linear_decay", "constant")


class VelocityField(Protocol):
    def __call__(self, x: np.ndarray, t: float, c: np.ndarray | None) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 10
    eta0: float = 0.5
    correction: str = "wiener"
    lambda_snr: float = DEFAULT_LAMBDA_SNR
    schedule: str = "linear_decay"
    keep_states: bool = False

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if not self.eta0 >= 0:
            raise ValueError(f"eta0 must be >= 0, got {self.eta0}")
        if self.correction not in CORRECTIONS:
            raise ValueError(f"correction must be one of {CORRECTIONS}, got {self.correction!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.correction == "wiener" and not self.lambda_snr > 0:
            raise ValueError("wiener correction needs lambda_snr > 0")


@dataclass
class TrajectoryRecord:
    """Per-step diagnostics of one sampling run.

    ``residual_norms[i]`` is the LR residual of the state after step ``i``;
    ``candidate_residual_norms[i]`` is the residual of the Euler candidate
    before correction.
    """

    times: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    residual_norms: list[float] = field(default_factory=list)
    candidate_residual_norms: list[float] = field(default_factory=list)
    states: list[np.ndarray] | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "t", "eta", "residual_l2"])
        for i, (t, eta, r) in enumerate(zip(self.times, self.step_sizes, self.residual_norms)):
            writer.writerow([i, f"{t:.12g}", f"{eta:.12g}", f"{r:.12g}"])
        return buf.getvalue()


@dataclass(frozen=True)
class WeightMaps:
    """Loss weights: reliability ``sqrt(wht)`` times importance ``1 + mask``."""

    wht: np.ndarray
    source_mask: np.ndarray
    combined: np.ndarray


def make_weight_maps(wht, source_mask) -> WeightMaps:
    wht = np.asarray(wht, dtype=np.float64)
    mask = np.asarray(source_mask, dtype=np.float64)
    if wht.shape != mask.shape:
        raise ValueError("weight map and source mask shapes differ")
    if np.any(wht < 0) or not np.all(np.isfinite(wht)):
        raise ValueError("inverse-variance weights must be finite and non-negative")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("source mask must be binary")
    return WeightMaps(wht, mask, np.sqrt(wht) * (1.0 + mask))


def interpolate(x0, x1, t: float) -> tuple[np.ndarray, np.ndarray]:
    """OT path ``x_t = (1-t) x0 + t x1`` and its target velocity ``x1 - x0``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError("x0 and x1 shapes differ")
    return (1.0 - t) * x0 + t * x1, x1 - x0


def cfm_loss(v_pred, u_t) -> float:
    d = np.asarray(v_pred, dtype=np.float64) - np.asarray(u_t, dtype=np.float64)
    return float(np.mean(d * d))


def wfm_loss(v_pred, u_t, weights: WeightMaps) -> float:
    """Per-image normalized weighted squared error."""
    d = np.asarray(v_pred, dtype=np.float64) - np.asarray(u_t, dtype=np.float64)
    w = weights.combined
    if d.shape != w.shape:
        raise ValueError("prediction and weight shapes differ")
    total = float(w.sum())
    if total <= 0:
        raise ValueError("all loss weights are zero")
    return float(np.sum(w * d * d) / total)


def euler_step(v: VelocityField, x, t: float, dt: float, c=None) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return x + v(x, t, c) * dt


def eta_schedule(cfg: SamplerConfig, i: int) -> float:
    if not 0 <= i < cfg.steps:
        raise ValueError(f"step index {i} outside [0, {cfg.steps})")
    if cfg.schedule == "constant":
        return float(cfg.eta0)
    return cfg.eta0 * (1.0 - i / cfg.steps)


# --- analytic velocity fields ---------------------------------------------


class EndpointVelocity:
    """Constant field ``x1 - x0`` for a known start state ``x0``."""

    def __init__(self, x1, x0):
        self.u = np.asarray(x1, dtype=np.float64) - np.asarray(x0, dtype=np.float64)

    def __call__(self, x, t, c=None):
        return self.u


class RectifiedVelocity:
    """Field ``(x1 - x) / (1 - t)`` that steers any state onto ``x1`` at t = 1."""

    def __init__(self, x1, eps: float = RECTIFIED_EPS):
        self.x1 = np.asarray(x1, dtype=np.float64)
        self.eps = eps

    def __call__(self, x, t, c=None):
        return (self.x1 - x) / max(1.0 - t, self.eps)


def spike_image(shape, pixel, amplitude: float) -> np.ndarray:
    out = np.zeros(shape)
    out[tuple(pixel)] = amplitude
    return out


def make_oracle_velocity(kind: str, x1, *, x0=None, spike=None) -> Callable:
    """Analytic stand-in for a trained velocity network.

    ``endpoint`` needs the trajectory's start state ``x0``; ``hallucinating``
    needs ``spike=(pixel, amplitude)`` and targets ``x1`` plus that spike.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    if kind == "endpoint":
        if x0 is None:
            raise ValueError("endpoint velocity needs the start state x0")
        return EndpointVelocity(x1, x0)
    if kind == "rectified":
        return RectifiedVelocity(x1)
    if kind == "hallucinating":
        if spike is None:
            raise ValueError("hallucinating velocity needs a spike (pixel, amplitude)")
        pixel, amplitude = spike
        return RectifiedVelocity(x1 + spike_image(x1.shape, pixel, amplitude))
    raise ValueError(f"unknown oracle kind {kind!r}")


# --- sampler ----------------------------------------------------------------


def initial_state(shape, seed: int) -> np.ndarray:
    return sample_standard_normal(shape, seed)


def sample(
    v: VelocityField,
    y,
    c,
    op: ForwardOperator,
    cfg: SamplerConfig,
    seed: int,
    x0=None,
) -> tuple[np.ndarray, TrajectoryRecord]:
    """Euler-integrate ``v`` from Gaussian noise with per-step LR back-projection.

    Each step forms the Euler candidate, measures the LR residual
    ``A(candidate) - y`` and subtracts ``eta_i`` times either ``A^T r``
    (``adjoint``) or the Wiener-filtered lift ``W * D_s^T r`` (``wiener``).
    ``x0`` overrides the seeded start draw.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != op.lr_shape:
        raise ValueError(f"observation shape {y.shape} does not match LR grid {op.lr_shape}")
    if c is not None and np.shape(c) != op.hr_shape:
        raise ValueError(f"condition shape {np.shape(c)} does not match HR grid {op.hr_shape}")
    x = initial_state(op.hr_shape, seed) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != op.hr_shape:
        raise ValueError(f"start state shape {x.shape} does not match HR grid {op.hr_shape}")

    wk = make_wiener(op.psf, cfg.lambda_snr) if cfg.correction == "wiener" else None
    rec = TrajectoryRecord(states=[x.copy()] if cfg.keep_states else None)
    n = cfg.steps
    dt = 1.0 / n
    for i in range(n):
        t = i / n
        cand = x + v(x, t, c) * dt
        if np.shape(cand) != op.hr_shape:
            raise ValueError("velocity field changed the state shape")
        r = op(cand) - y
        rec.candidate_residual_norms.append(float(np.linalg.norm(r)))
        if cfg.correction == "none":
            eta = 0.0
            x = cand
        else:
            eta = eta_schedule(cfg, i)
            if cfg.correction == "adjoint":
                x = cand - eta * op.adjoint(r)
            else:
                x = cand - eta * wiener_backproject(wk, upsample_adjoint(r, op.scale))
        rec.times.append(t)
        rec.step_sizes.append(eta)
        rec.residual_norms.append(
            rec.candidate_residual_norms[-1] if eta == 0.0 else float(np.linalg.norm(op(x) - y))
        )
        if cfg.keep_states:
            rec.states.append(x.copy())
    return x, rec
