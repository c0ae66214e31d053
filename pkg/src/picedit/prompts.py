"""Time-dependent blending of source and target prompt embeddings.

Three task families are supported: word replacement (positional blend over
the whole context), phrase insertion (inserted span taken verbatim from the
target, suffix realigned to the shifted source positions), and phrase
removal (the mirror of insertion with the roles swapped).
"""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UnsupportedEditError, ValidationError

SPAN_UNUSED = -1


class EditKind(str, Enum):
    REPLACEMENT = "replacement"
    INSERTION = "insertion"
    REMOVAL = "removal"


@dataclass(frozen=True)
class PromptEmbedding:
    """Fixed-length sequence of token embedding vectors for one prompt."""

    tokens: np.ndarray  # (L, D)
    meaningful_len: int
    text: str = ""

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        object.__setattr__(self, "tokens", tokens)
        if tokens.ndim != 2:
            raise ValidationError(f"embedding must be (L, D), got shape {tokens.shape}")
        if not 0 < self.meaningful_len <= tokens.shape[0]:
            raise ValidationError(
                f"meaningful_len {self.meaningful_len} outside (0, {tokens.shape[0]}]"
            )
        if not np.all(np.isfinite(tokens)):
            raise ValidationError("embedding contains non-finite entries")

    @property
    def context_len(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class InterpolationPlan:
    """Edit-task descriptor: kind, edited token span, and mixing schedule."""

    kind: EditKind
    span_start: int = SPAN_UNUSED
    span_end: int = SPAN_UNUSED
    beta: float = 0.3
    total_steps: int = 50
    src_text: str = ""
    tgt_text: str = ""

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError(f"beta {self.beta} outside [0, 1]")
        if self.total_steps < 1:
            raise ValidationError("total_steps must be >= 1")
        if self.kind != EditKind.REPLACEMENT:
            if self.span_start < 0 or self.span_end < self.span_start:
                raise ValidationError(
                    f"invalid span [{self.span_start}, {self.span_end}] for {self.kind.value}"
                )

    @property
    def span_len(self) -> int:
        if self.kind == EditKind.REPLACEMENT:
            return 0
        return self.span_end - self.span_start + 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind.value,
                "span_start": self.span_start,
                "span_end": self.span_end,
                "beta": self.beta,
                "total_steps": self.total_steps,
                "src_text": self.src_text,
                "tgt_text": self.tgt_text,
            }
        )

    @classmethod
    def from_json(cls, s: str) -> "InterpolationPlan":
        d = json.loads(s)
        return cls(
            kind=EditKind(d["kind"]),
            span_start=d["span_start"],
            span_end=d["span_end"],
            beta=d["beta"],
            total_steps=d["total_steps"],
            src_text=d.get("src_text", ""),
            tgt_text=d.get("tgt_text", ""),
        )


def mixing_coefficient(t: int, total_steps: int, beta: float) -> float:
    """Mixing weight at reverse step t: beta at t=T, ramping to 1 at t=0."""
    if total_steps < 1:
        raise ValidationError("total_steps must be >= 1")
    if not 0 <= t <= total_steps:
        raise ValidationError(f"step {t} outside [0, {total_steps}]")
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"beta {beta} outside [0, 1]")
    return beta + (1.0 - beta) * (total_steps - t) / total_steps


def _check_shapes(y_src: PromptEmbedding, y_tgt: PromptEmbedding) -> None:
    if y_src.tokens.shape != y_tgt.tokens.shape:
        raise ValidationError(
            f"embedding shape mismatch: {y_src.tokens.shape} vs {y_tgt.tokens.shape}"
        )


def interpolate_replacement(
    y_src: PromptEmbedding, y_tgt: PromptEmbedding, beta_t: float
) -> PromptEmbedding:
    """Per-token affine blend over every context position, padding included."""
    _check_shapes(y_src, y_tgt)
    tokens = beta_t * y_tgt.tokens + (1.0 - beta_t) * y_src.tokens
    return PromptEmbedding(tokens=tokens, meaningful_len=y_tgt.meaningful_len, text=y_tgt.text)


def interpolate_insertion(
    y_src: PromptEmbedding,
    y_tgt: PromptEmbedding,
    plan: InterpolationPlan,
    beta_t: float,
) -> PromptEmbedding:
    """Three-branch blend for an inserted token span.

    Positions before the span copy the source, the span itself copies the
    target verbatim, and the suffix blends each target token with the
    source token at the un-shifted position.  Shifted source indices that
    run off the padded context clamp to the target token, which keeps the
    beta_t = 1 endpoint exact.
    """
    if plan.kind != EditKind.INSERTION:
        raise ValidationError(f"insertion interpolation got a {plan.kind.value} plan")
    _check_shapes(y_src, y_tgt)
    L = y_tgt.context_len
    if plan.span_end >= L:
        raise ValidationError(f"span end {plan.span_end} outside context of length {L}")
    ls, lf = plan.span_start, plan.span_end
    out = np.empty_like(y_tgt.tokens)
    out[:ls] = y_src.tokens[:ls]
    out[ls : lf + 1] = y_tgt.tokens[ls : lf + 1]
    for pos in range(lf + 1, L):
        src_pos = pos - lf + ls - 1
        if src_pos < L:
            out[pos] = beta_t * y_tgt.tokens[pos] + (1.0 - beta_t) * y_src.tokens[src_pos]
        else:
            out[pos] = y_tgt.tokens[pos]
    return PromptEmbedding(tokens=out, meaningful_len=y_tgt.meaningful_len, text=y_tgt.text)


def interpolate_removal(
    y_src: PromptEmbedding,
    y_tgt: PromptEmbedding,
    plan: InterpolationPlan,
    beta_t: float,
) -> PromptEmbedding:
    """Mirror of the insertion blend for a span removed from the source.

    The span indexes the removed tokens in the source prompt.  Prefix
    positions copy the target embedding; positions at and past the removal
    point blend the target token with the source token shifted forward by
    the span length, clamping to the target when the shifted index runs
    off the context.
    """
    if plan.kind != EditKind.REMOVAL:
        raise ValidationError(f"removal interpolation got a {plan.kind.value} plan")
    _check_shapes(y_src, y_tgt)
    L = y_tgt.context_len
    if plan.span_end >= L:
        raise ValidationError(f"span end {plan.span_end} outside context of length {L}")
    ls, lf = plan.span_start, plan.span_end
    n = lf - ls + 1
    out = np.empty_like(y_tgt.tokens)
    out[:ls] = y_tgt.tokens[:ls]
    for pos in range(ls, L):
        src_pos = pos + n
        if src_pos < L:
            out[pos] = beta_t * y_tgt.tokens[pos] + (1.0 - beta_t) * y_src.tokens[src_pos]
        else:
            out[pos] = y_tgt.tokens[pos]
    return PromptEmbedding(tokens=out, meaningful_len=y_tgt.meaningful_len, text=y_tgt.text)


def interpolate(
    y_src: PromptEmbedding,
    y_tgt: PromptEmbedding,
    plan: InterpolationPlan,
    t: int,
) -> PromptEmbedding:
    """Dispatch to the task-specific blend with the step-t coefficient."""
    beta_t = mixing_coefficient(t, plan.total_steps, plan.beta)
    if plan.kind == EditKind.REPLACEMENT:
        return interpolate_replacement(y_src, y_tgt, beta_t)
    if plan.kind == EditKind.INSERTION:
        return interpolate_insertion(y_src, y_tgt, plan, beta_t)
    return interpolate_removal(y_src, y_tgt, plan, beta_t)


def plan_from_prompts(
    p_src: str,
    p_tgt: str,
    tokenizer,
    beta: float | None = None,
    total_steps: int = 50,
) -> InterpolationPlan:
    """Diff two prompts into a plan.

    Equal-length prompts with positional substitutions become a
    replacement; a single contiguous inserted (removed) run becomes an
    insertion (removal) whose span is expressed in embedding positions via
    the tokenizer's position offset.  Anything else is rejected: the caller
    must supply an explicit plan.
    """
    src_tokens = list(tokenizer.tokenize(p_src))
    tgt_tokens = list(tokenizer.tokenize(p_tgt))
    offset = getattr(tokenizer, "position_offset", 0)
    if src_tokens == tgt_tokens:
        raise UnsupportedEditError("prompts are identical; supply an explicit plan")

    if len(src_tokens) == len(tgt_tokens):
        kind = EditKind.REPLACEMENT
        span = (SPAN_UNUSED, SPAN_UNUSED)
    else:
        ops = [
            op
            for op in difflib.SequenceMatcher(a=src_tokens, b=tgt_tokens, autojunk=False)
            .get_opcodes()
            if op[0] != "equal"
        ]
        if len(ops) != 1:
            raise UnsupportedEditError(
                "multiple edited runs detected; supply an explicit plan"
            )
        tag, i1, i2, j1, j2 = ops[0]
        if tag == "insert" or (tag == "replace" and (j2 - j1) > (i2 - i1)):
            # treat a longer replacement run as insertion of the extra tokens
            if tag == "replace":
                raise UnsupportedEditError(
                    "replacement with length change; supply an explicit plan"
                )
            kind = EditKind.INSERTION
            span = (j1 + offset, j2 - 1 + offset)
        elif tag == "delete":
            kind = EditKind.REMOVAL
            span = (i1 + offset, i2 - 1 + offset)
        else:
            raise UnsupportedEditError(
                f"unsupported edit pattern {tag!r}; supply an explicit plan"
            )

    if beta is None:
        beta = 0.3 if kind == EditKind.REPLACEMENT else 0.8
    return InterpolationPlan(
        kind=kind,
        span_start=span[0],
        span_end=span[1],
        beta=beta,
        total_steps=total_steps,
        src_text=p_src,
        tgt_text=p_tgt,
    )
