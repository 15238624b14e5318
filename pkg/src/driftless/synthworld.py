"""Synthetic multi-scene ground truth with exact text/frame embedders.

Scene means are mutually orthogonal D-vectors of norm r; each scene also owns
a unit drift direction orthogonal to every scene mean, along which frames move
as the scene progresses. Captions are synthesized strings that encode
(scene id, phase) exactly, so the ground-truth embedders can invert them and
every similarity used by the metrics has a closed form.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .metrics import EmbeddingPair
from .schedule import LatentSequence

CAPTION_SUFFIX = "[Long Shot, Eye-Level]"
_FRAME_RE = re.compile(r"^scene:(\d+) phase:(\d+\.\d{4}) \[.*\]$")
_GLOBAL_RE = re.compile(r"^scenes:(\d+(?:,\d+)*) \[.*\]$")


@dataclass(frozen=True)
class WorldParams:
    num_scenes: int = 8
    D: int = 16
    radius: float = 1.0
    sigma: float = 0.1
    dynamics_rate: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.num_scenes < 1:
            raise ConfigError(f"num_scenes must be >= 1, got {self.num_scenes}")
        if 2 * self.num_scenes > self.D:
            raise ConfigError(
                f"need 2*num_scenes <= D for orthogonal means and drift directions, "
                f"got num_scenes={self.num_scenes}, D={self.D}"
            )
        if self.sigma < 0 or self.radius <= 0:
            raise ConfigError("sigma must be >= 0 and radius > 0")


@dataclass(frozen=True, eq=False)
class SceneScript:
    """Per-frame scene ids, within-scene progress, and synthesized captions."""

    F: int
    scene_of: np.ndarray  # (F,) int
    phase: np.ndarray     # (F,) float in [0, 1], quantized to 4 decimals
    captions: tuple[str, ...]

    def runs(self) -> list[tuple[int, int, int]]:
        """(scene, start, end) for each maximal constant-scene run."""
        out, start = [], 0
        for f in range(1, self.F + 1):
            if f == self.F or self.scene_of[f] != self.scene_of[start]:
                out.append((int(self.scene_of[start]), start, f))
                start = f
        return out

    def global_caption(self) -> str:
        seen: list[int] = []
        for s in self.scene_of:
            if int(s) not in seen:
                seen.append(int(s))
        return f"scenes:{','.join(str(s) for s in seen)} {CAPTION_SUFFIX}"


class World:
    """Realized world: orthonormal scene geometry derived from WorldParams."""

    def __init__(self, params: WorldParams):
        self.params = params
        rng = np.random.default_rng(np.random.SeedSequence(params.seed, spawn_key=(0,)))
        gauss = rng.standard_normal((params.D, params.D))
        q, r = np.linalg.qr(gauss)
        q = q * np.sign(np.diag(r))  # canonical sign so the basis is seed-stable
        self.scene_means = params.radius * q[:, : params.num_scenes].T  # (S, D)
        self.drift_dirs = q[:, params.num_scenes : 2 * params.num_scenes].T  # (S, D)
        self._span_basis = q[:, : 2 * params.num_scenes]  # (D, 2S)

    @property
    def num_scenes(self) -> int:
        return self.params.num_scenes

    @property
    def D(self) -> int:
        return self.params.D

    def conditional_mean(self, scene: int, phase: float) -> np.ndarray:
        """Mean of the clean-frame distribution at (scene, phase)."""
        return self.scene_means[scene] + self.params.dynamics_rate * phase * self.drift_dirs[scene]

    def caption_for(self, scene: int, phase: float) -> str:
        return f"scene:{scene} phase:{phase:.4f} {CAPTION_SUFFIX}"

    def caption_prior_mean(self, caption: str) -> np.ndarray:
        """Invert a synthesized caption to its clean-frame prior mean.

        Frame captions map to the exact conditional mean; global captions map
        to the average of the mentioned scene means (the mixture mean).
        """
        m = _FRAME_RE.match(caption)
        if m:
            scene = int(m.group(1))
            if scene >= self.num_scenes:
                raise ContractError(f"caption names scene {scene} outside this world")
            return self.conditional_mean(scene, float(m.group(2)))
        g = _GLOBAL_RE.match(caption)
        if g:
            scenes = [int(s) for s in g.group(1).split(",")]
            if any(s >= self.num_scenes for s in scenes):
                raise ContractError("caption names a scene outside this world")
            return self.scene_means[scenes].mean(axis=0)
        raise ContractError(f"caption not produced by this world: {caption!r}")

    def classify(self, latent: np.ndarray) -> int:
        return int(np.argmax(self.scene_means @ np.asarray(latent)))


def _quantize(p: float) -> float:
    return float(f"{p:.4f}")


def sample_script(
    num_scenes_in_clip: int,
    F: int,
    rng: np.random.Generator,
    scene_pool: int,
) -> SceneScript:
    """Draw a script: distinct scenes, uniform boundary cuts, linear phase per run."""
    if not (1 <= num_scenes_in_clip <= F):
        raise ContractError(
            f"need 1 <= num_scenes_in_clip <= F, got {num_scenes_in_clip} and F={F}"
        )
    if num_scenes_in_clip > scene_pool:
        raise ContractError(
            f"clip wants {num_scenes_in_clip} distinct scenes but the pool has {scene_pool}"
        )
    scenes = rng.choice(scene_pool, size=num_scenes_in_clip, replace=False)
    if num_scenes_in_clip > 1:
        cuts = np.sort(rng.choice(np.arange(1, F), size=num_scenes_in_clip - 1, replace=False))
    else:
        cuts = np.array([], dtype=np.int64)
    bounds = np.concatenate([[0], cuts, [F]])
    scene_of = np.empty(F, dtype=np.int64)
    phase = np.empty(F, dtype=np.float64)
    for k in range(num_scenes_in_clip):
        lo, hi = int(bounds[k]), int(bounds[k + 1])
        scene_of[lo:hi] = scenes[k]
        m = hi - lo
        for i in range(m):
            phase[lo + i] = _quantize(i / (m - 1)) if m > 1 else 0.0
    captions = tuple(
        f"scene:{scene_of[f]} phase:{phase[f]:.4f} {CAPTION_SUFFIX}" for f in range(F)
    )
    return SceneScript(F=F, scene_of=scene_of, phase=phase, captions=captions)


def render_latents(script: SceneScript, world: World, rng: np.random.Generator) -> LatentSequence:
    """Clean frames: scene mean + phase drift + isotropic sigma noise."""
    if int(script.scene_of.max()) >= world.num_scenes:
        raise ContractError("script references a scene outside this world")
    means = script_conditional_means(script, world)
    noise = rng.standard_normal((script.F, world.D))
    return LatentSequence.clean(means + world.params.sigma * noise)


def script_conditional_means(script: SceneScript, world: World) -> np.ndarray:
    return np.stack(
        [world.conditional_mean(int(s), float(p)) for s, p in zip(script.scene_of, script.phase)]
    )


def ground_truth_embedders(world: World) -> EmbeddingPair:
    """Exact embedders: captions invert to their generating direction; frames
    project onto the span of all scene means and drift directions."""
    basis = world._span_basis

    def text_embed(caption: str) -> np.ndarray:
        mean = world.caption_prior_mean(caption)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ContractError(f"caption embeds to the zero vector: {caption!r}")
        return mean / norm

    def frame_embed(latent: np.ndarray) -> np.ndarray:
        v = np.asarray(latent, dtype=np.float64)
        proj = basis @ (basis.T @ v)
        norm = np.linalg.norm(proj)
        if norm < 1e-12:
            return np.zeros_like(proj)
        return proj / norm

    return EmbeddingPair(text_embed=text_embed, frame_embed=frame_embed)


def generate_clip(
    world: World,
    F: int,
    num_scenes_in_clip: int,
    rng: np.random.Generator,
) -> tuple[SceneScript, LatentSequence]:
    script = sample_script(num_scenes_in_clip, F, rng, scene_pool=world.num_scenes)
    return script, render_latents(script, world, rng)
