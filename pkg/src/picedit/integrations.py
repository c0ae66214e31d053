"""Grafting the corrected prediction onto attention-manipulation editors.

Each integration changes only where the interpolated-prompt prediction
comes from: attention-map injection (cross plus self), feature/self-map
injection, or a cross-attention-guided gradient step on the latent before
the two predictions are taken.  The correction arithmetic downstream is
untouched, so the weighted-correction structure is preserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapters import (
    HOOK_CROSS_ATTENTION,
    HOOK_FEATURES,
    HOOK_SELF_ATTENTION,
    HookScope,
)
from .errors import NumericalFailureError, ValidationError

_ROW_SUM_TOL = 1e-4


def _check_rows_normalized(name: str, attn: np.ndarray) -> None:
    sums = np.sum(attn, axis=-1)
    if not np.allclose(sums, 1.0, atol=_ROW_SUM_TOL):
        raise ValidationError(f"attention rows in {name!r} do not sum to 1")


@dataclass
class AttentionSnapshot:
    """Attention maps and features captured from one source-pass evaluation."""

    cross_maps: dict = field(default_factory=dict)
    self_maps: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    step: int = -1

    def __post_init__(self):
        for name, attn in self.cross_maps.items():
            _check_rows_normalized(name, attn)
        for name, attn in self.self_maps.items():
            _check_rows_normalized(name, attn)

    @property
    def empty(self) -> bool:
        return not (self.cross_maps or self.self_maps or self.features)


@dataclass(frozen=True)
class GuidanceConfig:
    """Cross-attention guidance parameters for the latent-optimization editor."""

    lambda_xa: float = 0.1
    injection_window: float = 1.0

    def __post_init__(self):
        if self.lambda_xa < 0:
            raise ValidationError(f"lambda_xa {self.lambda_xa} must be >= 0")
        if not 0.0 <= self.injection_window <= 1.0:
            raise ValidationError("injection window fraction must lie in [0, 1]")


def capture_snapshot(model, x_src: np.ndarray, t: int, y_src) -> AttentionSnapshot:
    """Evaluate the source pass with recording hooks and collect its maps."""
    scope = HookScope()
    model.set_hook_scope(scope)
    try:
        model.predict(x_src, t, y_src)
    finally:
        model.set_hook_scope(None)
    snap = AttentionSnapshot(step=t)
    for name, value in scope.trace:
        if name.startswith(HOOK_CROSS_ATTENTION):
            snap.cross_maps[name] = value
        elif name.startswith(HOOK_SELF_ATTENTION):
            snap.self_maps[name] = value
        elif name.startswith(HOOK_FEATURES):
            snap.features[name] = value
    return AttentionSnapshot(
        cross_maps=snap.cross_maps, self_maps=snap.self_maps, features=snap.features, step=t
    )


def _predict_with_injection(model, x, t, y, overrides: dict) -> np.ndarray:
    if not overrides:
        return np.asarray(model.predict(x, t, y), dtype=np.float64)
    scope = HookScope(overrides=overrides)
    model.set_hook_scope(scope)
    try:
        return np.asarray(model.predict(x, t, y), dtype=np.float64)
    finally:
        model.set_hook_scope(None)


def _check_step(snapshot: AttentionSnapshot, t: int) -> None:
    if not snapshot.empty and snapshot.step != t:
        raise ValidationError(
            f"snapshot captured at step {snapshot.step}, requested step {t}"
        )


def ptp_corrected_predict(
    x_tgt: np.ndarray, t: int, y_t, y_src, snapshot: AttentionSnapshot, model
) -> tuple[np.ndarray, np.ndarray]:
    """Attention-injection prediction pair for the correction term.

    The interpolated-prompt pass runs with the source pass's cross- and
    self-attention maps swapped in; the source-prompt pass runs clean.
    """
    _check_step(snapshot, t)
    overrides = {**snapshot.cross_maps, **snapshot.self_maps}
    eps_edit = _predict_with_injection(model, x_tgt, t, y_t, overrides)
    eps_src_cond = np.asarray(model.predict(x_tgt, t, y_src), dtype=np.float64)
    return eps_edit, eps_src_cond


def pnp_corrected_predict(
    x_tgt: np.ndarray, t: int, y_t, y_src, snapshot: AttentionSnapshot, model
) -> tuple[np.ndarray, np.ndarray]:
    """Feature/self-attention-injection prediction pair for the correction term."""
    _check_step(snapshot, t)
    overrides = {**snapshot.self_maps, **snapshot.features}
    eps_edit = _predict_with_injection(model, x_tgt, t, y_t, overrides)
    eps_src_cond = np.asarray(model.predict(x_tgt, t, y_src), dtype=np.float64)
    return eps_edit, eps_src_cond


def p2p_guidance_step(
    x_tgt: np.ndarray,
    t: int,
    y_t,
    y_src,
    snapshot: AttentionSnapshot,
    cfg: GuidanceConfig,
    model,
) -> np.ndarray:
    """Gradient step aligning the edit-pass cross-attention to the source's.

    Minimizes the squared Frobenius distance between the cross-attention
    map read from the interpolated-prompt pass and the source map, moving
    the latent by one step of size lambda_xa.
    """
    x_tgt = np.asarray(x_tgt, dtype=np.float64)
    if cfg.lambda_xa == 0.0:
        return x_tgt
    _check_step(snapshot, t)
    m_src = snapshot.cross_maps.get(HOOK_CROSS_ATTENTION)
    if m_src is None:
        raise ValidationError("snapshot carries no cross-attention map")
    m_tgt = model.cross_attention(x_tgt, t, y_t)
    grad = model.cross_attention_vjp(x_tgt, t, y_t, 2.0 * (m_tgt - m_src))
    if not np.all(np.isfinite(grad)):
        raise NumericalFailureError("non-finite guidance gradient", step=t, branch="guidance")
    return x_tgt - cfg.lambda_xa * grad


def p2p_correction(x_hat: np.ndarray, t: int, y_t, y_src, model) -> np.ndarray:
    """Correction term evaluated at the guidance-shifted latent."""
    eps_edit = np.asarray(model.predict(x_hat, t, y_t), dtype=np.float64)
    eps_src_cond = np.asarray(model.predict(x_hat, t, y_src), dtype=np.float64)
    return eps_edit - eps_src_cond


def attention_loss(m_tgt: np.ndarray, m_src: np.ndarray) -> float:
    """Squared Frobenius distance between two attention maps."""
    diff = np.asarray(m_tgt, dtype=np.float64) - np.asarray(m_src, dtype=np.float64)
    return float(np.sum(diff * diff))
