"""Adapters around external models: denoiser, text encoder, captioner, codec.

Everything downstream of this module sees the same small surface whether
the backend is the analytic toy denoiser or a real latent-diffusion
checkpoint.  No adapter ever downloads weights; real backends are selected
by configuration keys pointing at local paths and raise
``ModelUnavailableError`` when missing.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .errors import ConfigurationError, ModelUnavailableError, ValidationError
from .prompts import PromptEmbedding

HOOK_CROSS_ATTENTION = "cross_attention"
HOOK_SELF_ATTENTION = "self_attention"
HOOK_FEATURES = "features"


class HookScope:
    """Per-run hook state: injection overrides plus a trace of what fired.

    A scope is confined to one edit run; concurrent runs each build their
    own so no hook state leaks between them.
    """

    def __init__(self, overrides: dict | None = None):
        self.overrides = dict(overrides or {})
        self.trace: list[tuple[str, np.ndarray]] = []

    def apply(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.overrides:
            injected = self.overrides[name]
            self.trace.append((name, injected))
            return injected
        self.trace.append((name, value))
        return value

    def injected(self, name: str) -> bool:
        return name in self.overrides


@runtime_checkable
class DenoiserHandle(Protocol):
    """Opaque noise-prediction callable plus its declared capabilities."""

    latent_shape: tuple
    context_len: int
    hook_points: frozenset
    thread_safe: bool

    def predict(self, x: np.ndarray, t: int, y: PromptEmbedding) -> np.ndarray: ...


@dataclass
class GuidedDenoiser:
    """Classifier-free guidance wrapper.

    Extrapolates between the null-conditioned and prompt-conditioned
    predictions.  At scale 1 the unconditional pass is skipped and the
    conditional prediction is returned exactly.
    """

    inner: object
    null_embedding: PromptEmbedding
    scale: float = 7.5

    def __post_init__(self):
        if self.scale < 1.0:
            raise ConfigurationError(f"guidance scale {self.scale} must be >= 1")

    @property
    def latent_shape(self):
        return self.inner.latent_shape

    @property
    def context_len(self):
        return self.inner.context_len

    @property
    def hook_points(self):
        return getattr(self.inner, "hook_points", frozenset())

    @property
    def thread_safe(self):
        return getattr(self.inner, "thread_safe", False)

    def predict(self, x: np.ndarray, t: int, y: PromptEmbedding) -> np.ndarray:
        return guided_predict(self, x, t, y)

    def set_hook_scope(self, scope):
        if hasattr(self.inner, "set_hook_scope"):
            self.inner.set_hook_scope(scope)


def guided_predict(g: GuidedDenoiser, x: np.ndarray, t: int, y: PromptEmbedding) -> np.ndarray:
    eps_cond = np.asarray(g.inner.predict(x, t, y), dtype=np.float64)
    if g.scale == 1.0:
        return eps_cond
    eps_uncond = np.asarray(g.inner.predict(x, t, g.null_embedding), dtype=np.float64)
    return eps_uncond + g.scale * (eps_cond - eps_uncond)


class WhitespaceTokenizer:
    """Trivial tokenizer for the toy text pipeline; no special tokens."""

    position_offset = 0

    def tokenize(self, text: str) -> list[str]:
        return text.lower().split()


@dataclass
class HashTextEncoder:
    """Deterministic stand-in text encoder: each token hashes to a vector.

    Gives the toy pipeline real (L, D) embeddings with stable values, so
    prompt interpolation and fingerprints behave exactly as with a real
    encoder.
    """

    context_len: int = 8
    dim: int = 4
    tokenizer: WhitespaceTokenizer = field(default_factory=WhitespaceTokenizer)

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.encode()).digest()
        raw = np.frombuffer(digest[: 8 * self.dim], dtype=np.uint64).astype(np.float64)
        return (raw / np.float64(2**64)) * 2.0 - 1.0

    def encode(self, text: str) -> PromptEmbedding:
        return encode_prompt(text, self)

    def encode_tokens(self, tokens: list[str]) -> np.ndarray:
        out = np.zeros((self.context_len, self.dim))
        for i, tok in enumerate(tokens[: self.context_len]):
            out[i] = self._token_vector(tok)
        return out


def encode_prompt(p: str, encoder) -> PromptEmbedding:
    """Fixed-length embedding of a prompt string; empty prompt gives the null embedding."""
    tokens = encoder.tokenizer.tokenize(p)
    truncated = len(tokens) > encoder.context_len
    if truncated:
        tokens = tokens[: encoder.context_len]
    vectors = encoder.encode_tokens(tokens)
    emb = PromptEmbedding(
        tokens=vectors,
        meaningful_len=max(1, len(tokens)),
        text=p,
    )
    emb.__dict__["truncated"] = truncated
    return emb


def caption_source(image, captioner=None, user_prompt: str | None = None) -> str:
    """Source prompt for an image: the user override wins, else the captioner."""
    if user_prompt:
        return user_prompt
    if captioner is None:
        raise ModelUnavailableError(
            "no captioner configured and no source prompt supplied"
        )
    caption = captioner.caption(image)
    if not caption:
        raise ModelUnavailableError("captioner returned an empty caption")
    return caption


def build_target_prompt(p_src: str, task) -> str:
    """Deterministic string surgery from a task tuple.

    ``task`` is either ``("replace", source_word, target_word)`` or
    ``("insert", anchor_word, phrase)``.
    """
    mode = task[0]
    if mode == "replace":
        _, src_word, tgt_word = task
        words = p_src.split()
        lowered = [w.strip(".,!?").lower() for w in words]
        if src_word.lower() not in lowered:
            raise ValidationError(
                f"source word {src_word!r} absent from prompt {p_src!r}; image excluded"
            )
        idx = lowered.index(src_word.lower())
        trailing = words[idx][len(words[idx].rstrip(".,!?")) :]
        words[idx] = tgt_word + trailing
        return " ".join(words)
    if mode == "insert":
        _, anchor, phrase = task
        words = p_src.split()
        lowered = [w.strip(".,!?").lower() for w in words]
        if anchor.lower() not in lowered:
            raise ValidationError(
                f"anchor word {anchor!r} absent from prompt {p_src!r}; image excluded"
            )
        idx = lowered.index(anchor.lower())
        return " ".join(words[: idx + 1] + phrase.split() + words[idx + 1 :])
    raise ConfigurationError(f"unknown task mode {task[0]!r}")


class IdentityCodec:
    """Toy latent codec: the image is the latent, round trips are exact."""

    def __init__(self, latent_shape: tuple):
        self.latent_shape = tuple(latent_shape)

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.latent_shape:
            raise ValidationError(
                f"image shape {image.shape} does not match latent shape {self.latent_shape}"
            )
        return image

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.shape != self.latent_shape:
            raise ValidationError(
                f"latent shape {latent.shape} does not match {self.latent_shape}"
            )
        return latent


@dataclass
class StubCaptioner:
    """Fixed-text captioner for tests and toy pipelines."""

    text: str

    def caption(self, image) -> str:
        return self.text


def load_backbone(name: str, weight_path: str | None = None):
    """Resolve a backbone configuration key to adapter handles.

    ``toy`` resolves with no external dependencies.  Real checkpoints
    require locally available weights; nothing is fetched implicitly.
    """
    if name == "toy":
        from .toy import make_toy_backbone

        return make_toy_backbone()
    raise ModelUnavailableError(
        f"backbone {name!r} requires local weights and a diffusion runtime; "
        "point weight_path at a local checkpoint and install the GPU extras"
    )


class CallCountingDenoiser:
    """Wrapper that counts raw predict invocations; used by call-accounting tests."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    @property
    def latent_shape(self):
        return self.inner.latent_shape

    @property
    def context_len(self):
        return self.inner.context_len

    @property
    def hook_points(self):
        return getattr(self.inner, "hook_points", frozenset())

    @property
    def thread_safe(self):
        return getattr(self.inner, "thread_safe", False)

    def predict(self, x, t, y):
        self.calls += 1
        return self.inner.predict(x, t, y)

    def set_hook_scope(self, scope):
        if hasattr(self.inner, "set_hook_scope"):
            self.inner.set_hook_scope(scope)
