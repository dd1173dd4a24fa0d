"""Gaussian diffusion over joint-angle vectors.

Steps are 1-based: ``t = 1..T``; arrays in :class:`NoiseSchedule` are indexed
by ``t - 1``. Sampler state is kept in float64; denoisers cast as they need.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import Rng

DDPM_REFERENCE_STEPS = 1000
DDPM_BETA_START = 1e-4
DDPM_BETA_END = 0.02
MAX_BETA = 0.999
DEFAULT_TIMESTEPS = 80


class Parameterization(str, enum.Enum):
    PREDICT_X0 = "x0"
    PREDICT_EPS = "eps"


class StepRangeError(ValueError):
    pass


class SamplingError(FloatingPointError):
    def __init__(self, step: int, message: str = "denoiser returned non-finite values"):
        super().__init__(f"{message} at step {step}")
        self.step = step


def default_betas(timesteps: int) -> tuple[float, float]:
    """DDPM's 1000-step linear endpoints rescaled to ``timesteps`` steps.

    Keeps the total noise injected (and so ``alpha_bar_T``) near DDPM's, which
    is what makes ``theta_T`` indistinguishable from the ``N(0, I)`` the
    sampler starts from.
    """
    scale = DDPM_REFERENCE_STEPS / timesteps
    return min(DDPM_BETA_START * scale, MAX_BETA), min(DDPM_BETA_END * scale, MAX_BETA)


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int
    beta_start: float
    beta_end: float
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    def check_step(self, t) -> None:
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.timesteps):
            raise StepRangeError(f"step {t} outside 1..{self.timesteps}")

    def at(self, name: str, t):
        self.check_step(t)
        return getattr(self, name)[np.asarray(t) - 1]


def linear_schedule(timesteps: int = DEFAULT_TIMESTEPS, beta_start: float | None = None,
                    beta_end: float | None = None) -> NoiseSchedule:
    if timesteps < 2:
        raise ValueError(f"need at least 2 timesteps, got {timesteps}")
    if beta_start is None or beta_end is None:
        d_start, d_end = default_betas(timesteps)
        beta_start = d_start if beta_start is None else beta_start
        beta_end = d_end if beta_end is None else beta_end
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(timesteps, float(beta_start), float(beta_end), betas, alphas, alpha_bars, np.sqrt(betas))


def _col(values, like: np.ndarray) -> np.ndarray:
    """Broadcast per-row schedule values against ``(B, N)`` state."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0 or like.ndim <= 1:
        return values
    return values.reshape(values.shape + (1,) * (like.ndim - values.ndim))


def q_sample(theta0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward jump ``sqrt(ab_t) theta0 + sqrt(1 - ab_t) eps``; ``t`` may be per-row."""
    theta0 = np.asarray(theta0)
    eps = np.asarray(eps)
    ab = _col(sched.at("alpha_bars", t), theta0)
    out = np.sqrt(ab) * theta0 + np.sqrt(1.0 - ab) * eps
    return out.astype(np.result_type(theta0.dtype, eps.dtype))


def eps_to_x0(theta_t, t, eps_hat, sched: NoiseSchedule) -> np.ndarray:
    theta_t = np.asarray(theta_t, dtype=np.float64)
    ab = _col(sched.at("alpha_bars", t), theta_t)
    return (theta_t - np.sqrt(1.0 - ab) * np.asarray(eps_hat, dtype=np.float64)) / np.sqrt(ab)


def x0_to_eps(theta_t, t, x0_hat, sched: NoiseSchedule) -> np.ndarray:
    theta_t = np.asarray(theta_t, dtype=np.float64)
    ab = _col(sched.at("alpha_bars", t), theta_t)
    return (theta_t - np.sqrt(ab) * np.asarray(x0_hat, dtype=np.float64)) / np.sqrt(1.0 - ab)


def p_sample_step(theta_t, t: int, model_output, z, sched: NoiseSchedule,
                  param: Parameterization = Parameterization.PREDICT_X0) -> np.ndarray:
    """One ancestral step ``theta_t -> theta_{t-1}``.

    Mean is ``(theta_t - beta_t / sqrt(1 - ab_t) * eps) / sqrt(alpha_t)``;
    x0 predictions are converted to eps first. ``z`` must be zero at t == 1.
    """
    sched.check_step(t)
    theta_t = np.asarray(theta_t, dtype=np.float64)
    z = np.zeros_like(theta_t) if z is None else np.asarray(z, dtype=np.float64)
    if t == 1 and np.any(z != 0):
        raise ValueError("noise must be zero on the final step (t == 1)")
    if Parameterization(param) is Parameterization.PREDICT_X0:
        eps_hat = x0_to_eps(theta_t, t, model_output, sched)
    else:
        eps_hat = np.asarray(model_output, dtype=np.float64)
    beta = sched.betas[t - 1]
    mean = (theta_t - beta / np.sqrt(1.0 - sched.alpha_bars[t - 1]) * eps_hat) / np.sqrt(sched.alphas[t - 1])
    return mean + sched.sigmas[t - 1] * z


Denoiser = Callable[[np.ndarray, int, np.ndarray], np.ndarray]


def sample(denoiser: Denoiser, cond, sched: NoiseSchedule, rng: Rng, n_joints: int,
           param: Parameterization = Parameterization.PREDICT_X0, trace: bool = False,
           deterministic: bool = False, theta_T=None):
    """Run the reverse chain from ``theta_T ~ N(0, I)`` down to ``theta_0``.

    ``cond`` is ``(B, 2)`` (or a single ``(2,)`` target); ``denoiser`` is called
    as ``denoiser(theta_t, t, cond)`` with ``theta_t`` of shape ``(B, N)``.
    Returns ``(theta_0, trace_list_or_None)``; the trace holds ``theta_T`` ...
    ``theta_0`` (T + 1 arrays). ``deterministic`` zeroes every ``z``.
    """
    cond = np.asarray(cond, dtype=np.float64)
    single = cond.ndim == 1
    cond = cond.reshape(-1, 2)
    shape = (len(cond), n_joints)
    theta = rng.normal(shape) if theta_T is None else np.array(theta_T, dtype=np.float64).reshape(shape)
    states = [theta.copy()] if trace else None
    for t in range(sched.timesteps, 0, -1):
        out = np.asarray(denoiser(theta, t, cond), dtype=np.float64)
        if out.shape != shape or not np.all(np.isfinite(out)):
            raise SamplingError(t, "denoiser returned non-finite or misshapen output")
        if t > 1 and not deterministic:
            z = rng.normal(shape)
        else:
            z = np.zeros(shape)
        theta = p_sample_step(theta, t, out, z, sched, param)
        if not np.all(np.isfinite(theta)):
            raise SamplingError(t, "sampler state became non-finite")
        if trace:
            states.append(theta.copy())
    if single:
        theta = theta[0]
        if trace:
            states = [s[0] for s in states]
    return theta, states
