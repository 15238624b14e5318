"""Discrete diffusion noise schedule and per-frame noising/denoising steps.

A latent sequence carries an independent timestep per frame, so every
operation here is vectorized over frames with per-frame alpha-bar lookups.
Timestep t=0 is in-band and means "clean": alpha_bars[0] == 1 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ScheduleError


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete schedule: betas over steps 1..T, cumulative alpha_bars over 0..T."""

    betas: np.ndarray       # (T,)
    alphas: np.ndarray      # (T,)
    alpha_bars: np.ndarray  # (T+1,), alpha_bars[0] == 1

    @property
    def T(self) -> int:
        return len(self.betas)


@dataclass
class LatentSequence:
    """F x D per-frame latent vectors with a parallel per-frame timestep vector."""

    latents: np.ndarray    # (F, D) float64
    timesteps: np.ndarray  # (F,) int64

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.timesteps = np.asarray(self.timesteps, dtype=np.int64)
        if self.latents.ndim != 2:
            raise ContractError(f"latents must be 2-D, got shape {self.latents.shape}")
        if self.timesteps.shape != (self.latents.shape[0],):
            raise ContractError(
                f"timesteps shape {self.timesteps.shape} does not match "
                f"{self.latents.shape[0]} frames"
            )

    @property
    def F(self) -> int:
        return self.latents.shape[0]

    @property
    def D(self) -> int:
        return self.latents.shape[1]

    def copy(self) -> "LatentSequence":
        return LatentSequence(self.latents.copy(), self.timesteps.copy())

    @classmethod
    def clean(cls, latents: np.ndarray) -> "LatentSequence":
        latents = np.asarray(latents, dtype=np.float64)
        return cls(latents, np.zeros(latents.shape[0], dtype=np.int64))


def build_schedule(T: int, beta_min: float, beta_max: float, kind: str = "linear") -> NoiseSchedule:
    """Build a T-step schedule with strictly decreasing alpha_bars.

    ``linear`` spaces betas evenly in [beta_min, beta_max]; ``cosine`` uses the
    squared-cosine alpha_bar profile with betas clipped into (0, 0.999].
    """
    if T < 2:
        raise ConfigError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(
            f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64)
        bars = np.cos((steps / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
        bars /= bars[0]
        betas = np.clip(1.0 - bars[1:] / bars[:-1], beta_min, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    if np.any(np.diff(alpha_bars) >= 0):
        raise ConfigError("alpha_bars are not strictly decreasing")
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _check_timesteps(t_vec: np.ndarray, T: int) -> np.ndarray:
    t = np.asarray(t_vec, dtype=np.int64)
    if np.any(t < 0) or np.any(t > T):
        raise ScheduleError(f"timesteps must lie in [0, {T}], got range [{t.min()}, {t.max()}]")
    return t


def add_noise(
    z0: LatentSequence,
    t_vec: np.ndarray,
    eps: np.ndarray,
    schedule: NoiseSchedule,
) -> LatentSequence:
    """Forward-noise each frame f to its own level: sqrt(ab_t)*z0 + sqrt(1-ab_t)*eps."""
    t = _check_timesteps(t_vec, schedule.T)
    if t.shape != (z0.F,):
        raise ContractError(f"t_vec length {t.shape} does not match F={z0.F}")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.latents.shape:
        raise ContractError(f"eps shape {eps.shape} does not match {z0.latents.shape}")
    ab = schedule.alpha_bars[t][:, None]
    noisy = np.sqrt(ab) * z0.latents + np.sqrt(1.0 - ab) * eps
    return LatentSequence(noisy, t)


def sample_df_timesteps(
    F: int,
    T: int,
    step_size: int,
    mode: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw a per-frame timestep vector for diffusion-forcing training.

    ramp: pick a reference frame u and level t_ref, then slope away by
    ``step_size`` per frame, clamped to [0, T] (earlier frames cleaner,
    later frames noisier). iid: independent uniform draws from {1..T}.
    uniform: one shared draw.
    """
    if step_size < 0:
        raise ContractError(f"step_size must be >= 0, got {step_size}")
    if mode == "ramp":
        u = int(rng.integers(0, F))
        t_ref = int(rng.integers(1, T + 1))
        t = t_ref + (np.arange(F) - u) * step_size
        return np.clip(t, 0, T).astype(np.int64)
    if mode == "iid":
        return rng.integers(1, T + 1, size=F).astype(np.int64)
    if mode == "uniform":
        return np.full(F, int(rng.integers(1, T + 1)), dtype=np.int64)
    raise ContractError(f"unknown timestep mode {mode!r}")


def sampler_step(
    z_t: LatentSequence,
    x0_pred: np.ndarray,
    t_vec: np.ndarray,
    next_t_vec: np.ndarray,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> LatentSequence:
    """Per-frame DDIM-style update from t_vec to next_t_vec.

    Frames with next == t pass through bit-identically. With eta == 0 the
    update is deterministic; eta > 0 adds fresh noise scaled by the standard
    stochastic-variant sigma (``noise`` overrides the rng draw so callers can
    share one draw per frame across overlapping windows).
    """
    t = _check_timesteps(t_vec, schedule.T)
    nxt = _check_timesteps(next_t_vec, schedule.T)
    if t.shape != (z_t.F,) or nxt.shape != (z_t.F,):
        raise ContractError("timestep vectors must have one entry per frame")
    if np.any(nxt > t):
        raise ScheduleError("next timestep exceeds current timestep on some frame")
    x0 = np.asarray(x0_pred, dtype=np.float64)
    if x0.shape != z_t.latents.shape:
        raise ContractError(f"x0_pred shape {x0.shape} does not match {z_t.latents.shape}")

    out = z_t.latents.copy()
    move = nxt < t
    if np.any(move):
        ab_t = schedule.alpha_bars[t[move]][:, None]
        ab_n = schedule.alpha_bars[nxt[move]][:, None]
        z = z_t.latents[move]
        x = x0[move]
        eps_hat = (z - np.sqrt(ab_t) * x) / np.sqrt(1.0 - ab_t)
        if eta > 0.0:
            sigma = (
                eta
                * np.sqrt((1.0 - ab_n) / (1.0 - ab_t))
                * np.sqrt(np.clip(1.0 - ab_t / ab_n, 0.0, None))
            )
            if noise is None:
                if rng is None:
                    raise ContractError("eta > 0 requires an rng or explicit noise")
                xi = rng.standard_normal(z.shape)
            else:
                xi = np.asarray(noise, dtype=np.float64)[move]
            dir_coef = np.sqrt(np.clip(1.0 - ab_n - sigma**2, 0.0, None))
            out[move] = np.sqrt(ab_n) * x + dir_coef * eps_hat + sigma * xi
        else:
            out[move] = np.sqrt(ab_n) * x + np.sqrt(1.0 - ab_n) * eps_hat
    return LatentSequence(out, nxt.copy())
