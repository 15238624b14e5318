"""Long-sequence generation schedulers over a fixed-size denoiser window.

Three modes share one denoiser contract:

- parallel multi-window denoising (PMWD): K overlapping windows advance one
  schedule step at a time over the whole sequence; overlapped latents are
  averaged after every step, so context flows in both directions.
- sliding window: autoregressive slides that re-noise a clean history to a
  fixed conditioning level and denoise a block of fresh frames against it.
- FIFO: a queue at strictly increasing noise levels that emits one clean
  frame per slide, dequeues its prompt, and enqueues fresh noise at the tail.

Frames are pinned by setting their timestep to 0 and restoring their latents
after every step (first/last-frame boundary conditioning).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .conditioning import PromptTrack
from .errors import ContractError, GeometryError
from .schedule import LatentSequence, NoiseSchedule, add_noise, sampler_step


@dataclass(frozen=True)
class WindowPlan:
    """K overlapping windows tiling [0, F) with per-frame coverage counts."""

    F: int
    F_window: int
    K: int
    F_slide: int
    F_overlapped: int
    starts: np.ndarray    # (K,)
    coverage: np.ndarray  # (F,)


@dataclass(frozen=True)
class BoundaryCondition:
    """Frames pinned clean (timestep 0) for the whole denoising run."""

    positions: tuple[int, ...]
    latents: np.ndarray  # (len(positions), D)

    def __post_init__(self):
        object.__setattr__(self, "latents", np.asarray(self.latents, dtype=np.float64))
        if self.latents.shape[0] != len(self.positions):
            raise ContractError("one latent row per pinned position required")
        if len(set(self.positions)) != len(self.positions):
            raise ContractError("duplicate boundary positions")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DRIFTLESS_THREADS", "1")))
    except ValueError:
        return 1


def _admissible_k(F: int, F_window: int) -> list[int]:
    out = [1] if F == F_window else []
    for k in range(2, F - F_window + 2):
        excess = k * F_window - F
        if excess < 0 or excess % (k - 1) != 0:
            continue
        if 0 <= excess // (k - 1) < F_window:
            out.append(k)
    return out


def plan_windows(F: int, F_window: int, K: int) -> WindowPlan:
    """Window geometry: overlap = (K*F_window - F)/(K-1), slide = F_window - overlap.

    Raises a GeometryError carrying the three nearest feasible K values when
    the requested K does not tile [0, F) exactly.
    """
    if K < 1:
        raise ContractError(f"K must be >= 1, got {K}")
    if not (1 <= F_window <= F):
        raise ContractError(f"need 1 <= F_window <= F, got F_window={F_window}, F={F}")

    def fail(reason: str) -> GeometryError:
        near = sorted(_admissible_k(F, F_window), key=lambda k: (abs(k - K), k))[:3]
        return GeometryError(
            f"infeasible window geometry (F={F}, F_window={F_window}, K={K}): {reason}; "
            f"nearest feasible K: {near}",
            admissible_k=tuple(near),
        )

    if K == 1:
        if F != F_window:
            raise fail("a single window must cover the whole sequence")
        overlapped = 0
    else:
        excess = K * F_window - F
        if excess < 0:
            raise fail("K windows cannot reach the end of the sequence")
        if excess % (K - 1) != 0:
            raise fail(f"overlap {excess}/{K - 1} is not an integer")
        overlapped = excess // (K - 1)
        if not (0 <= overlapped < F_window):
            raise fail(f"overlap {overlapped} outside [0, F_window)")
    slide = F_window - overlapped
    starts = np.arange(K, dtype=np.int64) * slide
    assert starts[-1] + F_window == F
    coverage = np.zeros(F, dtype=np.int64)
    for s in starts:
        coverage[s : s + F_window] += 1
    return WindowPlan(
        F=F, F_window=F_window, K=K, F_slide=slide, F_overlapped=overlapped,
        starts=starts, coverage=coverage,
    )


def _frame_noise(noise_root: int, step: int, F: int, D: int) -> np.ndarray:
    """One fresh draw per frame per step from the frame's own stream, so
    overlapping windows see identical noise for a shared frame."""
    rows = [
        np.random.default_rng(
            np.random.SeedSequence(noise_root, spawn_key=(step, f))
        ).standard_normal(D)
        for f in range(F)
    ]
    return np.stack(rows)


def _apply_boundary(z: np.ndarray, t_vec: np.ndarray, boundary: BoundaryCondition | None):
    if boundary is None:
        return
    for row, pos in enumerate(boundary.positions):
        z[pos] = boundary.latents[row]
        t_vec[pos] = 0


def pmwd_generate(
    denoiser,
    plan: WindowPlan,
    prompts: PromptTrack,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    boundary: BoundaryCondition | None = None,
    eta: float = 0.0,
    on_step=None,
    window_eval_order=None,
) -> LatentSequence:
    """Denoise all K windows in parallel each step, averaging overlaps.

    Windows may be evaluated in any order (``window_eval_order``, or threaded
    when DRIFTLESS_THREADS > 1) but are always reduced in ascending window
    index, so the output is bit-stable. ``on_step(t_next, z)`` observes the
    fused state after every step; the callback must not mutate ``z``.
    """
    if prompts.F != plan.F:
        raise ContractError(f"{prompts.F} prompts for {plan.F} planned frames")
    if boundary is not None and any(not 0 <= p < plan.F for p in boundary.positions):
        raise ContractError("boundary positions outside [0, F)")
    T = schedule.T
    D = denoiser.latent_dim
    z = rng.standard_normal((plan.F, D))
    noise_root = int(rng.integers(0, 2**63)) if eta > 0.0 else 0
    t_vec = np.full(plan.F, T, dtype=np.int64)
    _apply_boundary(z, t_vec, boundary)

    order = list(range(plan.K)) if window_eval_order is None else list(window_eval_order)
    if sorted(order) != list(range(plan.K)):
        raise ContractError("window_eval_order must be a permutation of range(K)")

    for t in range(T, 0, -1):
        next_t = np.where(t_vec == 0, 0, t - 1).astype(np.int64)
        xi = _frame_noise(noise_root, t, plan.F, D) if eta > 0.0 else None

        def eval_window(k: int) -> np.ndarray:
            s = int(plan.starts[k])
            e = s + plan.F_window
            seq = LatentSequence(z[s:e].copy(), t_vec[s:e].copy())
            x0 = denoiser.evaluate(seq, prompts.window(s, e))
            stepped = sampler_step(
                seq, x0, seq.timesteps, next_t[s:e], schedule,
                eta=eta, noise=None if xi is None else xi[s:e],
            )
            return stepped.latents

        workers = min(_threads(), plan.K)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = dict(zip(order, pool.map(eval_window, order)))
        else:
            results = {k: eval_window(k) for k in order}

        buffer = np.zeros((plan.F, D))
        counts = np.zeros(plan.F, dtype=np.int64)
        for k in range(plan.K):  # fixed ascending reduction
            s = int(plan.starts[k])
            e = s + plan.F_window
            buffer[s:e] += results[k]
            counts[s:e] += 1
        if not np.array_equal(counts, plan.coverage):
            raise AssertionError("window contributions do not match planned coverage")
        z = buffer / counts[:, None]
        t_vec = next_t
        _apply_boundary(z, t_vec, boundary)
        if on_step is not None:
            on_step(t - 1, z)
    return LatentSequence(z, t_vec)


def single_window_generate(
    denoiser,
    prompts: PromptTrack,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    eta: float = 0.0,
    init: np.ndarray | None = None,
) -> LatentSequence:
    """Plain full-window denoising loop from pure noise to clean."""
    F = prompts.F
    D = denoiser.latent_dim
    z = rng.standard_normal((F, D)) if init is None else np.asarray(init, dtype=np.float64)
    state = LatentSequence(z, np.full(F, schedule.T, dtype=np.int64))
    for t in range(schedule.T, 0, -1):
        x0 = denoiser.evaluate(state, prompts)
        state = sampler_step(
            state, x0, state.timesteps, np.full(F, t - 1, dtype=np.int64),
            schedule, eta=eta, rng=rng,
        )
    return state


def sliding_window_generate(
    denoiser,
    prompts: PromptTrack,
    F_window: int,
    F_slide: int,
    T_history: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    initial_window: np.ndarray | None = None,
    eta: float = 0.0,
) -> LatentSequence:
    """Autoregressive generation: each slide re-noises the last
    F_window - F_slide clean frames to T_history, holds them fixed there, and
    denoises F_slide fresh frames from T to 0 under their own prompts."""
    F_total = prompts.F
    if F_total < F_window:
        raise ContractError(f"prompt track ({F_total}) shorter than one window ({F_window})")
    if not (1 <= F_slide < F_window):
        raise ContractError(f"need 1 <= F_slide < F_window, got {F_slide}")
    if not (0 <= T_history <= schedule.T):
        raise ContractError(f"T_history must lie in [0, {schedule.T}]")
    if (F_total - F_window) % F_slide != 0:
        raise GeometryError(
            f"remaining {F_total - F_window} frames are not a whole number of "
            f"slides of {F_slide}"
        )
    F_history = F_window - F_slide

    first = single_window_generate(
        denoiser, prompts.window(0, F_window), schedule, rng, eta=eta, init=initial_window
    )
    out = first.latents.copy()
    done = F_window
    while done < F_total:
        history_clean = out[done - F_history : done]
        hist_t = np.full(F_history, T_history, dtype=np.int64)
        noised_history = add_noise(
            LatentSequence.clean(history_clean),
            hist_t,
            rng.standard_normal(history_clean.shape),
            schedule,
        )
        fresh = rng.standard_normal((F_slide, denoiser.latent_dim))
        window_prompts = prompts.window(done - F_history, done + F_slide)
        z = np.concatenate([noised_history.latents, fresh], axis=0)
        t_vec = np.concatenate([hist_t, np.full(F_slide, schedule.T, dtype=np.int64)])
        state = LatentSequence(z, t_vec)
        for t in range(schedule.T, 0, -1):
            x0 = denoiser.evaluate(state, window_prompts)
            next_t = np.concatenate([hist_t, np.full(F_slide, t - 1, dtype=np.int64)])
            state = sampler_step(state, x0, state.timesteps, next_t, schedule, eta=eta, rng=rng)
        out = np.concatenate([out, state.latents[F_history:]], axis=0)
        done += F_slide
    return LatentSequence.clean(out)


def fifo_levels(F_window: int, T: int) -> np.ndarray:
    """Diagonal queue levels: F_window values evenly spaced over (0, T]."""
    tau = np.round(np.arange(1, F_window + 1) * T / F_window).astype(np.int64)
    if np.any(np.diff(tau) <= 0) or tau[0] <= 0:
        raise GeometryError(
            f"cannot space {F_window} strictly increasing levels over (0, {T}]"
        )
    return tau


def _track_select(prompts: PromptTrack, indices: np.ndarray) -> PromptTrack:
    raw = tuple(prompts.raw[i] for i in indices) if prompts.raw is not None else None
    return PromptTrack(prompts.blocks[indices], prompts.source, raw)


def fifo_generate(
    denoiser,
    prompts: PromptTrack,
    F_window: int,
    total_frames: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    eta: float = 0.0,
    on_step=None,
) -> LatentSequence:
    """First-in-first-out generation emitting one clean frame per slide.

    Warm-up generates the first window outright, then re-noises it to the
    diagonal levels to prime the queue as the initialization of the next
    F_window frames. Each slide advances every slot one level, pops the head
    at t=0 as the next output frame together with its prompt, and enqueues
    fresh noise at t=T paired with the next prompt (the final window repeats
    the last prompt for tail slots that never reach the head).
    """
    if total_frames < F_window:
        raise ContractError(f"total_frames {total_frames} < window {F_window}")
    if prompts.F != total_frames:
        raise ContractError(
            f"prompt track has {prompts.F} entries but {total_frames} frames requested"
        )
    tau = fifo_levels(F_window, schedule.T)
    warm = single_window_generate(denoiser, prompts.window(0, F_window), schedule, rng, eta=eta)
    out = np.empty((total_frames, denoiser.latent_dim))
    out[:F_window] = warm.latents
    if total_frames == F_window:
        return LatentSequence.clean(out)

    queue = add_noise(
        LatentSequence.clean(warm.latents.copy()),
        tau,
        rng.standard_normal(warm.latents.shape),
        schedule,
    ).latents
    slot_prompt = np.minimum(F_window + np.arange(F_window), total_frames - 1)

    for slide in range(1, total_frames - F_window + 1):
        assert np.all(np.diff(tau) > 0)
        seq = LatentSequence(queue, tau.copy())
        x0 = denoiser.evaluate(seq, _track_select(prompts, slot_prompt))
        next_t = np.concatenate([[0], tau[:-1]]).astype(np.int64)
        stepped = sampler_step(seq, x0, tau, next_t, schedule, eta=eta, rng=rng)
        emitted_frame = F_window + slide - 1
        out[emitted_frame] = stepped.latents[0]
        if on_step is not None:
            on_step(slide, emitted_frame, stepped.timesteps.copy())
        queue = np.concatenate(
            [stepped.latents[1:], rng.standard_normal((1, denoiser.latent_dim))], axis=0
        )
        slot_prompt = np.concatenate(
            [slot_prompt[1:], [min(emitted_frame + F_window, total_frames - 1)]]
        )
    return LatentSequence.clean(out)
