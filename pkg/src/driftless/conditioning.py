"""Per-frame caption documents, prompt templates, and conditioning tracks.

Caption files are JSON objects whose keys are exactly the strings "1".."N"
in any order, one non-empty string caption per frame, optionally wrapped in
a single triple-backtick code fence. Validation reports the first violation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np

from .errors import CaptionValidationError, ContractError, TemplateError

FRAME_LEVEL = "frame_level"
VIDEO_LEVEL = "video_level_replicated"

_PLACEHOLDERS = {
    "captioning": {"required": ["{NUM_FRAMES}"], "forbidden": ["{GLOBAL_PROMPT}"]},
    "conversion": {"required": ["{NUM_PROMPTS}", "{GLOBAL_PROMPT}"], "forbidden": []},
}


@dataclass(frozen=True)
class CaptionDocument:
    """Validated per-frame captions, ordered by frame index 1..frame_count."""

    frame_count: int
    captions: tuple[str, ...]

    def __post_init__(self):
        if len(self.captions) != self.frame_count:
            raise CaptionValidationError(
                f"expected {self.frame_count} captions, got {len(self.captions)}"
            )


@dataclass
class PromptTrack:
    """F per-frame conditioning blocks, each L_text x D_text."""

    blocks: np.ndarray  # (F, L_text, D_text)
    source: str
    raw: tuple[str, ...] | None = None

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=np.float64)
        if self.blocks.ndim != 3:
            raise ContractError(f"blocks must be (F, L_text, D_text), got {self.blocks.shape}")
        if not np.all(np.isfinite(self.blocks)):
            raise ContractError("prompt blocks contain non-finite entries")
        if self.raw is not None and len(self.raw) != self.F:
            raise ContractError("raw caption count does not match block count")

    @property
    def F(self) -> int:
        return self.blocks.shape[0]

    @property
    def L_text(self) -> int:
        return self.blocks.shape[1]

    @property
    def D_text(self) -> int:
        return self.blocks.shape[2]

    def window(self, lo: int, hi: int) -> "PromptTrack":
        raw = self.raw[lo:hi] if self.raw is not None else None
        return PromptTrack(self.blocks[lo:hi], self.source, raw)


@dataclass(frozen=True)
class PromptTemplate:
    body: str
    kind: str  # "captioning" | "conversion"

    def __post_init__(self):
        if self.kind not in _PLACEHOLDERS:
            raise TemplateError(f"unknown template kind {self.kind!r}")
        rules = _PLACEHOLDERS[self.kind]
        for token in rules["required"]:
            if token not in self.body:
                raise TemplateError(f"{self.kind} template is missing placeholder {token}")
        for token in rules["forbidden"]:
            if token in self.body:
                raise TemplateError(f"{self.kind} template must not contain {token}")


def strip_code_fence(text: str) -> str:
    """Remove one leading/trailing triple-backtick fence pair if present."""
    stripped = text.strip()
    if not stripped.startswith("```"):
        return text
    first_nl = stripped.find("\n")
    if first_nl < 0 or not stripped.endswith("```"):
        raise CaptionValidationError("unterminated code fence")
    return stripped[first_nl + 1 : -3]


def parse_caption_document(text: str, expected_frames: int) -> CaptionDocument:
    """Parse and validate a caption JSON document against the per-frame contract."""
    if expected_frames < 1:
        raise ContractError(f"expected_frames must be >= 1, got {expected_frames}")
    body = strip_code_fence(text)
    try:
        payload, end = json.JSONDecoder().raw_decode(body.strip())
    except json.JSONDecodeError as exc:
        raise CaptionValidationError(f"not valid JSON: {exc}") from None
    if body.strip()[end:].strip():
        raise CaptionValidationError("trailing content after the JSON object")
    if not isinstance(payload, dict):
        raise CaptionValidationError(f"top level must be a JSON object, got {type(payload).__name__}")
    expected_keys = [str(i) for i in range(1, expected_frames + 1)]
    for key in expected_keys:
        if key not in payload:
            raise CaptionValidationError(f'missing key "{key}"')
    for key in payload:
        if key not in expected_keys:
            raise CaptionValidationError(f'unexpected key "{key}"')
    captions = []
    for key in expected_keys:
        value = payload[key]
        if not isinstance(value, str):
            raise CaptionValidationError(
                f'value for key "{key}" must be a string, got {type(value).__name__}'
            )
        if not value.strip():
            raise CaptionValidationError(f'empty caption for key "{key}"')
        captions.append(value)
    return CaptionDocument(frame_count=expected_frames, captions=tuple(captions))


def serialize_caption_document(doc: CaptionDocument) -> str:
    payload = {str(i + 1): c for i, c in enumerate(doc.captions)}
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def load_builtin_template(kind: str) -> PromptTemplate:
    """Load one of the two shipped system prompts: 'captioning' or 'conversion'."""
    names = {"captioning": "frame_captioning.txt", "conversion": "global_to_frame.txt"}
    if kind not in names:
        raise TemplateError(f"no builtin template of kind {kind!r}")
    body = resources.files("driftless").joinpath("templates", names[kind]).read_text("utf-8")
    return PromptTemplate(body=body, kind=kind)


def render_template(template: PromptTemplate, n: int, global_prompt: str | None = None) -> str:
    """Substitute all placeholder occurrences; byte-stable for identical inputs."""
    if n < 1:
        raise TemplateError(f"frame count must be >= 1, got {n}")
    body = template.body
    if template.kind == "captioning":
        return body.replace("{NUM_FRAMES}", str(n))
    if global_prompt is None:
        raise TemplateError("conversion template requires a global prompt")
    return body.replace("{NUM_PROMPTS}", str(n)).replace("{GLOBAL_PROMPT}", global_prompt)


Embedder = Callable[[str], np.ndarray]


def _embed(embedder: Embedder, caption: str, L_text: int) -> np.ndarray:
    block = np.asarray(embedder(caption), dtype=np.float64)
    if block.ndim == 1:
        block = block[None, :]
    if block.ndim != 2 or block.shape[0] != L_text:
        raise ContractError(
            f"embedder returned shape {block.shape}, expected ({L_text}, D_text)"
        )
    return block


def build_prompt_track(doc: CaptionDocument, embedder: Embedder, L_text: int = 1) -> PromptTrack:
    """Embed each caption into its own conditioning block (frame-level track)."""
    blocks = np.stack([_embed(embedder, c, L_text) for c in doc.captions])
    return PromptTrack(blocks=blocks, source=FRAME_LEVEL, raw=doc.captions)


def replicate_global_prompt(
    global_caption: str, F: int, embedder: Embedder, L_text: int = 1
) -> PromptTrack:
    """Repeat one caption's embedding across all F frames (video-level baseline)."""
    if F < 1:
        raise ContractError(f"F must be >= 1, got {F}")
    block = _embed(embedder, global_caption, L_text)
    blocks = np.repeat(block[None, :, :], F, axis=0)
    return PromptTrack(blocks=blocks, source=VIDEO_LEVEL, raw=tuple([global_caption] * F))
