"""Instrumented stub denoisers for exercising hooks and guidance gradients.

These stubs make substitution claims assertable without real weights: every
attention map or feature they produce flows through the active hook scope,
so an injected tensor shows up verbatim in the recorded trace and in the
arithmetic of the returned prediction.
"""

from __future__ import annotations

import numpy as np

from .adapters import (
    HOOK_CROSS_ATTENTION,
    HOOK_FEATURES,
    HOOK_SELF_ATTENTION,
    HookScope,
)
from .prompts import PromptEmbedding


def _row_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


class AttentionStubDenoiser:
    """Tiny denoiser whose prediction is a differentiable read of its own
    cross-attention, self-attention, and feature tensors.

    Latents are flat vectors of length ``latent_dim``.  The cross-attention
    map is a row-softmax over scores that are linear in both the latent and
    the conditioning tokens, so the guidance gradient has a closed form.
    """

    thread_safe = False
    hook_points = frozenset({HOOK_CROSS_ATTENTION, HOOK_SELF_ATTENTION, HOOK_FEATURES})

    def __init__(self, latent_dim: int = 6, num_queries: int = 3, num_keys: int = 4, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim
        self.latent_shape = (latent_dim,)
        self.num_queries = num_queries
        self.num_keys = num_keys
        self.context_len = None
        # score projection: (nq*nk, latent_dim), conditioning bias mixer
        self.score_proj = rng.standard_normal((num_queries * num_keys, latent_dim)) / np.sqrt(
            latent_dim
        )
        self.cond_proj = rng.standard_normal(num_keys)
        self.self_proj = rng.standard_normal((num_queries * num_queries, latent_dim)) / np.sqrt(
            latent_dim
        )
        self.feat_proj = rng.standard_normal((latent_dim, latent_dim)) / np.sqrt(latent_dim)
        self.readout_cross = rng.standard_normal((latent_dim, num_queries * num_keys))
        self.readout_self = rng.standard_normal((latent_dim, num_queries * num_queries))
        self.readout_feat = rng.standard_normal((latent_dim, latent_dim)) / np.sqrt(latent_dim)
        self._scope: HookScope | None = None

    def set_hook_scope(self, scope):
        self._scope = scope

    def _cond_bias(self, y) -> np.ndarray:
        tokens = y.tokens if isinstance(y, PromptEmbedding) else np.asarray(y)
        summary = np.sum(np.asarray(tokens, dtype=np.float64), axis=tuple(range(np.ndim(tokens) - 1)))
        # fold the token summary into a per-key bias
        reps = int(np.ceil(self.num_keys / summary.size))
        return np.tile(summary, reps)[: self.num_keys] * self.cond_proj

    def _scores(self, x: np.ndarray, y) -> np.ndarray:
        z = (self.score_proj @ x).reshape(self.num_queries, self.num_keys)
        return z + self._cond_bias(y)[None, :]

    def cross_attention(self, x: np.ndarray, t: int, y) -> np.ndarray:
        return _row_softmax(self._scores(np.asarray(x, dtype=np.float64), y))

    def cross_attention_vjp(self, x: np.ndarray, t: int, y, grad_map: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product of the cross-attention map w.r.t. the latent."""
        m = self.cross_attention(x, t, y)
        # softmax backward per row: dz = m * (g - sum(g * m))
        g = np.asarray(grad_map, dtype=np.float64)
        dz = m * (g - np.sum(g * m, axis=-1, keepdims=True))
        return self.score_proj.T @ dz.reshape(-1)

    def _apply(self, name: str, value: np.ndarray) -> np.ndarray:
        if self._scope is not None:
            return self._scope.apply(name, value)
        return value

    def predict(self, x: np.ndarray, t: int, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        cross = self._apply(HOOK_CROSS_ATTENTION, self.cross_attention(x, t, y))
        self_attn = self._apply(
            HOOK_SELF_ATTENTION,
            _row_softmax((self.self_proj @ x).reshape(self.num_queries, self.num_queries)),
        )
        feats = self._apply(HOOK_FEATURES, self.feat_proj @ x)
        return (
            0.1 * x
            + self.readout_cross @ cross.reshape(-1)
            + self.readout_self @ self_attn.reshape(-1)
            + self.readout_feat @ feats
            + 0.05 * t
        )
