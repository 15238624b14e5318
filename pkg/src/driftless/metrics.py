"""Text/video similarity metrics, confusion degree, and drift profiling."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .conditioning import PromptTrack
from .errors import ContractError
from .schedule import LatentSequence

VIDEO_EMBED_SAMPLES = 8


@dataclass(frozen=True)
class EmbeddingPair:
    """Deterministic unit-norm embedders for prompts and latent frames."""

    text_embed: Callable[[str], np.ndarray]
    frame_embed: Callable[[np.ndarray], np.ndarray]

    def video_embed(self, video: LatentSequence) -> np.ndarray:
        """Unit-norm mean of up to 8 uniformly sampled frame embeddings."""
        if video.F == 0:
            raise ContractError("cannot embed an empty video")
        if video.F <= VIDEO_EMBED_SAMPLES:
            idx = np.arange(video.F)
        else:
            idx = np.round(np.linspace(0, video.F - 1, VIDEO_EMBED_SAMPLES)).astype(int)
        frames = np.stack([self.frame_embed(video.latents[i]) for i in idx])
        return _normalize(frames.mean(axis=0))


@dataclass
class ConfusionReport:
    """Per-prompt confusion degrees plus the similarity matrices behind them."""

    per_prompt: np.ndarray  # (F,)
    mean_cd: float
    s_tt: np.ndarray        # (F, F) raw text-text similarities
    s_tf: np.ndarray        # (F, F) raw text-frame similarities
    s_tt_norm: np.ndarray
    s_tf_norm: np.ndarray

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("prompt_index,confusion_degree\n")
        for i, value in enumerate(self.per_prompt):
            out.write(f"{i},{value!r}\n")
        out.write(f"mean,{self.mean_cd!r}\n")
        return out.getvalue()


@dataclass
class DriftProfile:
    """Per-frame squared error against ground truth and its least-squares slope."""

    errors: np.ndarray  # (F,)
    slope: float
    intercept: float


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return np.zeros_like(v)
    return v / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _raw_prompts(prompts: PromptTrack) -> tuple[str, ...]:
    if prompts.raw is None:
        raise ContractError("prompt track carries no raw captions to embed")
    return prompts.raw


def global_similarity(global_prompt: str, video: LatentSequence, embeds: EmbeddingPair) -> float:
    """Cosine similarity between the prompt embedding and the video embedding."""
    if video.F == 0:
        raise ContractError("video has no frames")
    return cosine(embeds.text_embed(global_prompt), embeds.video_embed(video))


def frame_consistency(prompts: PromptTrack, video: LatentSequence, embeds: EmbeddingPair) -> float:
    """Mean over frames of the matched prompt/frame cosine similarity."""
    if prompts.F != video.F:
        raise ContractError(f"prompt count {prompts.F} != frame count {video.F}")
    captions = _raw_prompts(prompts)
    sims = [
        cosine(embeds.text_embed(captions[f]), embeds.frame_embed(video.latents[f]))
        for f in range(video.F)
    ]
    return float(np.mean(sims))


def confusion_degree(
    prompts: PromptTrack,
    video: LatentSequence,
    embeds: EmbeddingPair,
    denom_floor: float = 1e-6,
) -> ConfusionReport:
    """Confusion degree per prompt: sum over frames of the excess of normalized
    text-frame similarity over normalized text-text similarity, clipped at 0.

    Rows of both similarity matrices are normalized by their diagonal entries
    (floored at ``denom_floor`` so a badly mismatched frame cannot blow up the
    ratio); the diagonal therefore contributes zero by construction.
    """
    if prompts.F != video.F:
        raise ContractError(f"prompt count {prompts.F} != frame count {video.F}")
    captions = _raw_prompts(prompts)
    F = video.F
    text_vecs = np.stack([embeds.text_embed(c) for c in captions])
    frame_vecs = np.stack([embeds.frame_embed(video.latents[f]) for f in range(F)])

    s_tt = np.empty((F, F))
    s_tf = np.empty((F, F))
    for i in range(F):
        for j in range(F):
            s_tt[i, j] = cosine(text_vecs[i], text_vecs[j])
            s_tf[i, j] = cosine(text_vecs[i], frame_vecs[j])

    tt_denom = np.maximum(np.diag(s_tt), denom_floor)[:, None]
    tf_denom = np.maximum(np.diag(s_tf), denom_floor)[:, None]
    s_tt_norm = s_tt / tt_denom
    s_tf_norm = s_tf / tf_denom

    per_prompt = np.maximum(0.0, s_tf_norm - s_tt_norm).sum(axis=1)
    return ConfusionReport(
        per_prompt=per_prompt,
        mean_cd=float(per_prompt.mean()),
        s_tt=s_tt,
        s_tf=s_tf,
        s_tt_norm=s_tt_norm,
        s_tf_norm=s_tf_norm,
    )


def drift_profile(video: LatentSequence, conditional_means: np.ndarray) -> DriftProfile:
    """Squared per-frame error against known conditional means, with OLS slope."""
    means = np.asarray(conditional_means, dtype=np.float64)
    if means.shape != video.latents.shape:
        raise ContractError(
            f"conditional means shape {means.shape} != video shape {video.latents.shape}"
        )
    errors = np.sum((video.latents - means) ** 2, axis=1)
    f = np.arange(video.F, dtype=np.float64)
    slope, intercept = np.polyfit(f, errors, 1) if video.F > 1 else (0.0, float(errors[0]))
    return DriftProfile(errors=errors, slope=float(slope), intercept=float(intercept))


def sign_test_pvalue(successes: int, trials: int) -> float:
    """One-sided exact binomial tail P[X >= successes] with X ~ Binomial(trials, 1/2)."""
    if not (0 <= successes <= trials):
        raise ContractError(f"need 0 <= successes <= trials, got {successes}/{trials}")
    from math import comb

    total = sum(comb(trials, k) for k in range(successes, trials + 1))
    return total / 2.0**trials
