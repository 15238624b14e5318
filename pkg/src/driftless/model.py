"""Denoisers sharing one evaluation contract.

``TinyDenoiser`` is a small DiT-style network over F-frame windows: bidirectional
temporal self-attention, frame-level cross-attention (the query of frame f sees
only the key/value tokens of caption f), and an MLP, each pre-normalized with a
residual. Per-frame timesteps enter through an embedding table so frames at
different noise levels can be denoised in one call. ``OracleDenoiser`` is the
closed-form Gaussian posterior mean for synthetic-world prompts, used to verify
schedulers independently of training.

Both expose ``evaluate(seq, prompts) -> (F, D) x0 prediction`` where ``seq``
carries its own per-frame timestep vector.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .conditioning import PromptTrack
from .containers import load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractError, DimensionError
from .schedule import LatentSequence, NoiseSchedule
from .synthworld import World


@dataclass(frozen=True)
class DenoiserConfig:
    D: int = 16
    D_text: int = 16
    L_text: int = 1
    layers: int = 2
    heads: int = 2
    hidden: int = 64
    F_window: int = 21
    mlp_ratio: int = 2
    use_positions: bool = True

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(f"heads={self.heads} must divide hidden={self.hidden}")
        if self.F_window < 1:
            raise ConfigError(f"F_window must be >= 1, got {self.F_window}")


def positional_encoding(F: int, width: int) -> np.ndarray:
    """Fixed sinusoidal offsets for positions 0..F-1 relative to window start."""
    pos = np.arange(F, dtype=np.float64)[:, None]
    i = np.arange(width, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / width)
    enc = np.empty((F, width))
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc


def init_weights(config: DenoiserConfig, T: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameter dict; the output head is zero-initialized so an untrained
    network predicts the all-zeros baseline."""
    h, mlp = config.hidden, config.mlp_ratio * config.hidden

    def dense(rows, cols):
        return rng.standard_normal((rows, cols)) / np.sqrt(rows)

    params: dict[str, np.ndarray] = {
        "w_in": dense(config.D, h),
        "t_table": rng.standard_normal((T + 1, h)) * 0.02,
    }
    for l in range(config.layers):
        params[f"l{l}.sa_gain"] = np.ones((1, h))
        params[f"l{l}.sa_bias"] = np.zeros((1, h))
        params[f"l{l}.sa_wq"] = dense(h, h)
        params[f"l{l}.sa_wk"] = dense(h, h)
        params[f"l{l}.sa_wv"] = dense(h, h)
        params[f"l{l}.sa_wo"] = dense(h, h)
        params[f"l{l}.ca_gain"] = np.ones((1, h))
        params[f"l{l}.ca_bias"] = np.zeros((1, h))
        params[f"l{l}.ca_wq"] = dense(h, h)
        params[f"l{l}.ca_wk"] = dense(config.D_text, h)
        params[f"l{l}.ca_wv"] = dense(config.D_text, h)
        params[f"l{l}.mlp_gain"] = np.ones((1, h))
        params[f"l{l}.mlp_bias"] = np.zeros((1, h))
        params[f"l{l}.mlp_w1"] = dense(h, mlp)
        params[f"l{l}.mlp_b1"] = np.zeros((1, mlp))
        params[f"l{l}.mlp_w2"] = dense(mlp, h)
        params[f"l{l}.mlp_b2"] = np.zeros((1, h))
    params["out_gain"] = np.ones((1, h))
    params["out_bias"] = np.zeros((1, h))
    params["w_out"] = np.zeros((h, config.D))
    return params


def frame_level_cross_attention(queries, prompt_blocks: np.ndarray, w_q, w_k, w_v):
    """Attention in which frame f's query attends only to caption f's tokens.

    ``queries`` is (F, width); ``prompt_blocks`` is (F, L_text, D_text). Row f of
    the output is softmax(q_f Wq (c_f Wk)^T / sqrt(d)) (c_f Wv), computed
    strictly within block f. With a single token per caption the softmax weight
    is identically 1, so the result collapses to the value projection.
    """
    blocks = np.asarray(prompt_blocks, dtype=np.float64)
    if blocks.ndim != 3:
        raise DimensionError(f"prompt blocks must be (F, L, D_text), got {blocks.shape}")
    F = nm.value_of(queries).shape[0]
    if blocks.shape[0] != F:
        raise DimensionError(f"{blocks.shape[0]} prompt blocks for {F} query rows")
    if blocks.shape[1] == 1:
        return nm.matmul(blocks[:, 0, :], w_v)
    d = nm.value_of(w_q).shape[1]
    rows = []
    for f in range(F):
        q_f = nm.matmul(nm.slice_rows(queries, f, f + 1), w_q)
        k_f = nm.matmul(blocks[f], w_k)
        v_f = nm.matmul(blocks[f], w_v)
        weights = nm.softmax_rows(nm.scale(nm.matmul(q_f, nm.transpose(k_f)), 1.0 / np.sqrt(d)))
        rows.append(nm.matmul(weights, v_f))
    return nm.concat_rows(rows)


def temporal_self_attention(x, w_q, w_k, w_v, w_o, heads: int):
    """Bidirectional multi-head attention over the frame axis (no causal mask)."""
    q, k, v = nm.matmul(x, w_q), nm.matmul(x, w_k), nm.matmul(x, w_v)
    width = nm.value_of(q).shape[1]
    dh = width // heads
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = nm.slice_cols(q, lo, hi), nm.slice_cols(k, lo, hi), nm.slice_cols(v, lo, hi)
        scores = nm.scale(nm.matmul(qh, nm.transpose(kh)), 1.0 / np.sqrt(dh))
        outs.append(nm.matmul(nm.softmax_rows(scores), vh))
    merged = outs[0] if heads == 1 else nm.concat_cols(outs)
    return nm.matmul(merged, w_o)


def dit_forward(latents, t_vec, prompt_blocks, params, config: DenoiserConfig):
    """Predict clean frames from noisy frames, per-frame timesteps, and prompts.

    Polymorphic over the numerics layer: with plain arrays this is a pure
    evaluation; with graph-parameter weights the whole forward lands on the
    tape for training and gradient checking.
    """
    lat = nm.value_of(latents)
    F = lat.shape[0]
    t = np.asarray(t_vec, dtype=np.int64)
    if t.shape != (F,):
        raise DimensionError(f"t_vec shape {t.shape} does not match F={F}")
    table_rows = nm.value_of(params["t_table"]).shape[0]
    if np.any(t < 0) or np.any(t >= table_rows):
        raise ContractError(f"timesteps out of table range [0, {table_rows - 1}]")

    h = nm.matmul(latents, params["w_in"])
    h = nm.add(h, nm.gather_rows(params["t_table"], t))
    if config.use_positions:
        h = nm.add(h, positional_encoding(F, config.hidden))
    for l in range(config.layers):
        n = nm.layer_norm(h, params[f"l{l}.sa_gain"], params[f"l{l}.sa_bias"])
        h = nm.add(
            h,
            temporal_self_attention(
                n,
                params[f"l{l}.sa_wq"],
                params[f"l{l}.sa_wk"],
                params[f"l{l}.sa_wv"],
                params[f"l{l}.sa_wo"],
                config.heads,
            ),
        )
        n = nm.layer_norm(h, params[f"l{l}.ca_gain"], params[f"l{l}.ca_bias"])
        h = nm.add(
            h,
            frame_level_cross_attention(
                n, prompt_blocks, params[f"l{l}.ca_wq"], params[f"l{l}.ca_wk"], params[f"l{l}.ca_wv"]
            ),
        )
        n = nm.layer_norm(h, params[f"l{l}.mlp_gain"], params[f"l{l}.mlp_bias"])
        inner = nm.tanh(nm.add(nm.matmul(n, params[f"l{l}.mlp_w1"]), params[f"l{l}.mlp_b1"]))
        h = nm.add(h, nm.add(nm.matmul(inner, params[f"l{l}.mlp_w2"]), params[f"l{l}.mlp_b2"]))
    n = nm.layer_norm(h, params["out_gain"], params["out_bias"])
    return nm.matmul(n, params["w_out"])


class TinyDenoiser:
    """Trained/trainable denoiser satisfying the evaluation contract."""

    def __init__(self, weights: dict[str, np.ndarray], config: DenoiserConfig, T: int):
        self.weights = weights
        self.config = config
        self.T = T

    @classmethod
    def fresh(cls, config: DenoiserConfig, T: int, rng: np.random.Generator) -> "TinyDenoiser":
        return cls(init_weights(config, T, rng), config, T)

    @property
    def latent_dim(self) -> int:
        return self.config.D

    def evaluate(self, seq: LatentSequence, prompts: PromptTrack) -> np.ndarray:
        if prompts.F != seq.F:
            raise ContractError(f"{prompts.F} prompts for {seq.F} frames")
        return dit_forward(seq.latents, seq.timesteps, prompts.blocks, self.weights, self.config)

    def save(self, path) -> None:
        meta = {"model": dataclasses.asdict(self.config), "T": self.T}
        save_checkpoint(path, self.weights, meta)

    @classmethod
    def load(cls, path) -> "TinyDenoiser":
        params, meta = load_checkpoint(path)
        return cls(params, DenoiserConfig(**meta["model"]), meta["T"])


def oracle_denoise(
    seq: LatentSequence,
    prompts: PromptTrack,
    world: World,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Exact posterior mean E[z0 | z_t] when z0 ~ N(mu_f, sigma^2 I).

    With ab = alpha_bars[t_f] and the forward process z_t = sqrt(ab) z0 +
    sqrt(1-ab) eps, conjugacy gives

        E[z0 | z_t] = ((1 - ab) mu_f + sqrt(ab) sigma^2 z_t) / ((1 - ab) + ab sigma^2).

    The prior mean mu_f comes from inverting the frame's synthesized caption.
    At (t = 0, sigma = 0) the ratio is 0/0; the input is already clean, so it
    is returned unchanged.
    """
    if prompts.F != seq.F:
        raise ContractError(f"{prompts.F} prompts for {seq.F} frames")
    if prompts.raw is None:
        raise ContractError("oracle needs raw captions to resolve world priors")
    sigma2 = world.params.sigma**2
    ab = schedule.alpha_bars[np.asarray(seq.timesteps)]
    out = np.empty_like(seq.latents)
    for f in range(seq.F):
        mu = world.caption_prior_mean(prompts.raw[f])
        denom = (1.0 - ab[f]) + ab[f] * sigma2
        if denom == 0.0:
            out[f] = seq.latents[f]
        else:
            out[f] = ((1.0 - ab[f]) * mu + np.sqrt(ab[f]) * sigma2 * seq.latents[f]) / denom
    return out


class OracleDenoiser:
    """Closed-form stand-in for the trained denoiser on synthetic worlds."""

    def __init__(self, world: World, schedule: NoiseSchedule):
        self.world = world
        self.schedule = schedule

    @property
    def latent_dim(self) -> int:
        return self.world.D

    def evaluate(self, seq: LatentSequence, prompts: PromptTrack) -> np.ndarray:
        return oracle_denoise(seq, prompts, self.world, self.schedule)
