"""Diffusion-forcing training over synthetic windows.

Each sample gets its own per-frame timestep vector (a monotone ramp most of
the time, fully independent draws otherwise), is noised accordingly, and the
network regresses the clean window under an x0 mean-squared objective. The
optimizer is plain Adam with bias correction, written out explicitly so one
step can be checked against a hand computation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .conditioning import PromptTrack
from .errors import ContractError
from .model import DenoiserConfig, TinyDenoiser, dit_forward, init_weights
from .schedule import LatentSequence, NoiseSchedule, add_noise, sample_df_timesteps


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 400
    batch: int = 8
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    s_max: int = 4
    p_iid: float = 0.2
    p_video_level: float = 0.2
    seed: int = 0
    target_loss: float = 0.05

    def __post_init__(self):
        if self.batch < 1 or self.iterations < 1:
            raise ContractError("batch and iterations must be >= 1")
        if not (0.0 <= self.p_iid <= 1.0 and 0.0 <= self.p_video_level <= 1.0):
            raise ContractError("p_iid and p_video_level must lie in [0, 1]")


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    grad_norm: float
    wall_time: float


@dataclass
class ClipSample:
    """One training window with both conditioning variants."""

    window: np.ndarray  # (F_window, D) clean latents
    frame_track: PromptTrack
    video_track: PromptTrack


class Adam:
    """Adam with bias correction; state keyed by parameter name."""

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.config
        self.t += 1
        for name in sorted(params):
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            m_hat = self.m[name] / (1.0 - c.beta1**self.t)
            v_hat = self.v[name] / (1.0 - c.beta2**self.t)
            params[name] = params[name] - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)


def window_loss(
    params,
    z0: np.ndarray,
    track: PromptTrack,
    t_vec: np.ndarray,
    eps: np.ndarray,
    schedule: NoiseSchedule,
    model_config: DenoiserConfig,
    predictor=None,
):
    """Per-window x0 MSE at the given timestep vector (graph node or float)."""
    z_t = add_noise(LatentSequence.clean(z0), t_vec, eps, schedule)
    if predictor is None:
        pred = dit_forward(z_t.latents, t_vec, track.blocks, params, model_config)
    else:
        pred = predictor(z_t, track)
    diff = nm.sub(pred, z0)
    return nm.scale(nm.sum_all(nm.mul(diff, diff)), 1.0 / z0.size)


def df_loss(
    params,
    batch: list[tuple[np.ndarray, PromptTrack]],
    schedule: NoiseSchedule,
    train_config: TrainConfig,
    model_config: DenoiserConfig,
    rng: np.random.Generator,
    predictor=None,
):
    """Mean x0 MSE over a batch with freshly drawn per-frame timestep vectors.

    Randomness is drawn per sample in batch order and the terms are reduced in
    that fixed order, so the value is bit-reproducible for a given seed.
    """
    if not batch:
        raise ContractError("empty batch")
    F_window = model_config.F_window
    draws = []
    for z0, track in batch:
        z0 = np.asarray(z0, dtype=np.float64)
        if z0.shape[0] != F_window:
            raise ContractError(
                f"window length {z0.shape[0]} does not match F_window={F_window}"
            )
        if track.F != F_window:
            raise ContractError(f"track length {track.F} does not match F_window={F_window}")
        if rng.random() < train_config.p_iid:
            t_vec = sample_df_timesteps(F_window, schedule.T, 0, "iid", rng)
        else:
            step = int(rng.integers(0, train_config.s_max + 1))
            t_vec = sample_df_timesteps(F_window, schedule.T, step, "ramp", rng)
        eps = rng.standard_normal(z0.shape)
        draws.append((z0, track, t_vec, eps))
    total = None
    for z0, track, t_vec, eps in draws:
        term = window_loss(params, z0, track, t_vec, eps, schedule, model_config, predictor)
        total = term if total is None else nm.add(total, term)
    return nm.scale(total, 1.0 / len(batch))


def curriculum_stream(
    samples: list[ClipSample],
    rng: np.random.Generator,
    p_video_level: float,
):
    """Endless (window, track) pairs: frame-level tracks most of the time,
    replicated video-level tracks for the rest."""
    if not samples:
        raise ContractError("no training samples")
    while True:
        clip = samples[int(rng.integers(0, len(samples)))]
        if rng.random() < p_video_level:
            yield clip.window, clip.video_track
        else:
            yield clip.window, clip.frame_track


class TrainingDiverged(ContractError):
    def __init__(self, message: str, records: list[TrainRecord]):
        super().__init__(message)
        self.records = records


def train(
    config: TrainConfig,
    dataset,
    schedule: NoiseSchedule,
    model_config: DenoiserConfig,
) -> tuple[TinyDenoiser, list[TrainRecord]]:
    """Adam-train a fresh denoiser on (window, track) pairs from ``dataset``."""
    init_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(10,)))
    loop_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(11,)))
    weights = init_weights(model_config, schedule.T, init_rng)
    optimizer = Adam(weights, config)
    records: list[TrainRecord] = []
    start = time.perf_counter()
    for iteration in range(1, config.iterations + 1):
        batch = [next(dataset) for _ in range(config.batch)]
        graph = nm.Graph()
        params = {name: graph.parameter(name, w) for name, w in weights.items()}
        loss = df_loss(params, batch, schedule, config, model_config, loop_rng)
        loss_value = float(loss.value[0, 0])
        grads = graph.backward(loss)
        grad_norm = float(
            np.sqrt(sum(np.sum(grads[name] ** 2) for name in sorted(grads)))
        )
        record = TrainRecord(iteration, loss_value, grad_norm, time.perf_counter() - start)
        records.append(record)
        if not np.isfinite(loss_value):
            raise TrainingDiverged(f"non-finite loss at iteration {iteration}", records)
        optimizer.step(weights, grads)
    return TinyDenoiser(weights, model_config, schedule.T), records


def smoothed_loss(records: list[TrainRecord], window: int = 50) -> float:
    tail = records[-window:] if len(records) >= window else records
    return float(np.mean([r.loss for r in tail]))


def records_to_csv(records: list[TrainRecord]) -> str:
    lines = ["iteration,loss,grad_norm,wall_time"]
    for r in records:
        lines.append(f"{r.iteration},{r.loss!r},{r.grad_norm!r},{r.wall_time:.3f}")
    return "\n".join(lines) + "\n"
