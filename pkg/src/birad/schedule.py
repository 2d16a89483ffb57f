"""Diffusion noise schedule, forward process, and deterministic reverse steps.

Schedule arrays live in float64 (cumulative products are where precision
matters); latents stay float32 and only receive scalar coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

# Division by sqrt(alpha_bar) blows up as alpha_bar -> 0.
ALPHA_BAR_FLOOR = 1e-8

# Backbone convention: sqrt-space interpolation of beta over 1000 steps.
DEFAULT_T = 1000
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2


class ScheduleError(ValueError):
    pass


class SingularScheduleError(ScheduleError):
    """Raised when a step would divide by a vanishing noise-signal ratio."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Immutable per-timestep noise schedule.

    betas[t] is the per-step noise variance, alphas[t] = 1 - betas[t],
    and alpha_bars[t] is the running product of alphas up to and including t.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        for name in ("betas", "alphas", "alpha_bars"):
            arr = getattr(self, name)
            if arr.shape != (self.T,):
                raise ScheduleError(f"{name} must have shape ({self.T},)")
        if not (0.0 < self.betas.min() and self.betas.max() < 1.0):
            raise ScheduleError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ScheduleError("alpha_bars must be strictly decreasing")


def make_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    kind: str = "scaled_linear",
) -> DiffusionSchedule:
    """Build a schedule with linearly or sqrt-linearly interpolated betas."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "scaled_linear":
        betas = np.linspace(beta_start**0.5, beta_end**0.5, T, dtype=np.float64) ** 2
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return DiffusionSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _check_t(t: int, T: int) -> None:
    if not 0 <= t < T:
        raise ScheduleError(f"timestep {t} outside [0, {T})")


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ScheduleError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_diffuse(
    x0: torch.Tensor, t: int, eps: torch.Tensor, s: DiffusionSchedule
) -> torch.Tensor:
    """Closed-form noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    _check_t(t, s.T)
    _check_shapes(x0, eps)
    ab = s.alpha_bars[t]
    return float(np.sqrt(ab)) * x0 + float(np.sqrt(1.0 - ab)) * eps


def estimate_x0(
    x_t: torch.Tensor, eps_pred: torch.Tensor, t: int, s: DiffusionSchedule
) -> torch.Tensor:
    """Invert the forward model: (x_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)."""
    _check_t(t, s.T)
    _check_shapes(x_t, eps_pred)
    ab = s.alpha_bars[t]
    if ab < ALPHA_BAR_FLOOR:
        raise SingularScheduleError(
            f"alpha_bar[{t}] = {ab:.3e} below floor {ALPHA_BAR_FLOOR:g}"
        )
    return (x_t - float(np.sqrt(1.0 - ab)) * eps_pred) / float(np.sqrt(ab))


def ddim_step(
    x_t: torch.Tensor, eps_pred: torch.Tensor, t: int, s: DiffusionSchedule
) -> torch.Tensor:
    """One deterministic reverse step from t to t - 1."""
    if t < 1:
        raise ScheduleError(f"ddim_step needs t >= 1, got {t} (terminate with estimate_x0)")
    return ddim_step_to(x_t, eps_pred, t, t - 1, s)


def ddim_step_to(
    x_t: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    t_prev: int,
    s: DiffusionSchedule,
) -> torch.Tensor:
    """Reverse step from t to an earlier t_prev; t_prev = -1 yields the clean estimate.

    Used by strided inference, where consecutive sub-schedule timesteps are
    more than one step apart.
    """
    _check_t(t, s.T)
    if not -1 <= t_prev < t:
        raise ScheduleError(f"t_prev {t_prev} must lie in [-1, {t})")
    x0_est = estimate_x0(x_t, eps_pred, t, s)
    return ddim_recombine(x0_est, eps_pred, t_prev, s)


def ddim_recombine(
    x0: torch.Tensor,
    eps_pred: torch.Tensor,
    t_prev: int,
    s: DiffusionSchedule,
) -> torch.Tensor:
    """Rebuild x_{t_prev} from a clean estimate and a noise prediction.

    Split out of ddim_step_to so callers may adjust the clean estimate
    (e.g. low-frequency anchoring) between estimation and recombination.
    t_prev = -1 returns the clean estimate itself.
    """
    _check_shapes(x0, eps_pred)
    if not -1 <= t_prev < s.T:
        raise ScheduleError(f"t_prev {t_prev} must lie in [-1, {s.T})")
    if t_prev < 0:
        return x0
    ab_prev = s.alpha_bars[t_prev]
    return float(np.sqrt(ab_prev)) * x0 + float(np.sqrt(1.0 - ab_prev)) * eps_pred


def inference_timesteps(s: DiffusionSchedule, steps: int) -> list[int]:
    """Descending sub-schedule of ``steps`` timesteps, uniformly strided over [0, T)."""
    if not 1 <= steps <= s.T:
        raise ScheduleError(f"steps must lie in [1, {s.T}], got {steps}")
    stride = s.T // steps
    return [i * stride for i in reversed(range(steps))]
