import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picedit.adapters import WhitespaceTokenizer
from picedit.errors import UnsupportedEditError, ValidationError
from picedit.prompts import (
    SPAN_UNUSED,
    EditKind,
    InterpolationPlan,
    PromptEmbedding,
    interpolate,
    interpolate_insertion,
    interpolate_removal,
    interpolate_replacement,
    mixing_coefficient,
    plan_from_prompts,
)


def emb(values, meaningful=None, text=""):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return PromptEmbedding(tokens=arr, meaningful_len=meaningful or arr.shape[0], text=text)


def test_mixing_coefficient_endpoints_and_midpoint():
    assert mixing_coefficient(50, 50, 0.3) == 0.3
    assert mixing_coefficient(0, 50, 0.3) == 1.0
    assert mixing_coefficient(25, 50, 0.3) == pytest.approx(0.65, abs=1e-15)


def test_mixing_coefficient_validation():
    with pytest.raises(ValidationError):
        mixing_coefficient(51, 50, 0.3)
    with pytest.raises(ValidationError):
        mixing_coefficient(-1, 50, 0.3)
    with pytest.raises(ValidationError):
        mixing_coefficient(10, 50, 1.5)


@settings(max_examples=200, deadline=None)
@given(
    t=st.integers(min_value=0, max_value=50),
    beta=st.floats(0.0, 1.0, allow_nan=False),
)
def test_mixing_coefficient_range_and_monotone(t, beta):
    v = mixing_coefficient(t, 50, beta)
    assert beta - 1e-12 <= v <= 1.0 + 1e-12
    if t > 0:
        assert mixing_coefficient(t - 1, 50, beta) >= v - 1e-12


def test_replacement_is_affine_blend():
    src = emb([0.0, 2.0, 4.0])
    tgt = emb([1.0, 1.0, 1.0])
    out = interpolate_replacement(src, tgt, 0.25)
    assert np.allclose(out.tokens[:, 0], [0.25, 1.75, 3.25])


def test_replacement_endpoints_exact():
    src = emb([0.3, -1.2])
    tgt = emb([2.0, 0.7])
    assert np.array_equal(interpolate_replacement(src, tgt, 0.0).tokens, src.tokens)
    assert np.array_equal(interpolate_replacement(src, tgt, 1.0).tokens, tgt.tokens)


def test_replacement_shape_mismatch():
    with pytest.raises(ValidationError):
        interpolate_replacement(emb([1.0, 2.0]), emb([1.0, 2.0, 3.0]), 0.5)


def test_insertion_branch_structure():
    # source a0 a1 a2 a3, target a0 a1 b0 b1 a2 a3 with span [2, 3]
    src = emb([10.0, 11.0, 12.0, 13.0, 0.0, 0.0])
    tgt = emb([10.0, 11.0, 20.0, 21.0, 12.0, 13.0])
    plan = InterpolationPlan(
        kind=EditKind.INSERTION, span_start=2, span_end=3, beta=0.8, total_steps=50
    )
    b = 0.5
    out = interpolate_insertion(src, tgt, plan, b)
    # prefix copies the source, span copies the target verbatim
    assert np.array_equal(out.tokens[:2], src.tokens[:2])
    assert np.array_equal(out.tokens[2:4], tgt.tokens[2:4])
    # suffix blends with the un-shifted source position
    assert out.tokens[4, 0] == pytest.approx(b * 12.0 + (1 - b) * 12.0)
    assert out.tokens[5, 0] == pytest.approx(b * 13.0 + (1 - b) * 13.0)


def test_insertion_suffix_alignment_indices():
    # distinct values so the shifted index is observable: suffix position
    # pos must read source position pos - span_len
    src = emb([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    tgt = emb([100.0, 101.0, 102.0, 103.0, 104.0, 105.0])
    plan = InterpolationPlan(
        kind=EditKind.INSERTION, span_start=2, span_end=3, beta=0.8, total_steps=50
    )
    out = interpolate_insertion(src, tgt, plan, 0.25)
    assert out.tokens[4, 0] == pytest.approx(0.25 * 104.0 + 0.75 * 2.0)
    assert out.tokens[5, 0] == pytest.approx(0.25 * 105.0 + 0.75 * 3.0)


def test_insertion_clamps_past_context_end():
    src = emb([0.0, 1.0, 2.0])
    tgt = emb([50.0, 51.0, 52.0])
    plan = InterpolationPlan(
        kind=EditKind.INSERTION, span_start=0, span_end=1, beta=0.8, total_steps=50
    )
    out = interpolate_insertion(src, tgt, plan, 0.5)
    # suffix position 2 maps to source position 0
    assert out.tokens[2, 0] == pytest.approx(0.5 * 52.0 + 0.5 * 0.0)
    plan2 = InterpolationPlan(
        kind=EditKind.INSERTION, span_start=1, span_end=2, beta=0.8, total_steps=50
    )
    out2 = interpolate_insertion(src, tgt, plan2, 0.5)
    assert np.array_equal(out2.tokens[1:], tgt.tokens[1:])


def test_insertion_endpoint_is_target():
    src = emb([0.0, 1.0, 2.0, 3.0])
    tgt = emb([9.0, 8.0, 7.0, 6.0])
    plan = InterpolationPlan(
        kind=EditKind.INSERTION, span_start=1, span_end=1, beta=0.8, total_steps=50
    )
    out = interpolate_insertion(src, tgt, plan, 1.0)
    assert np.array_equal(out.tokens[1:], tgt.tokens[1:])
    # prefix stays source even at the endpoint; upstream of the span the
    # prompts agree token for token in practice
    assert np.array_equal(out.tokens[:1], src.tokens[:1])


def test_removal_branch_structure():
    src = emb([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    tgt = emb([100.0, 101.0, 102.0, 103.0, 104.0, 105.0])
    plan = InterpolationPlan(
        kind=EditKind.REMOVAL, span_start=1, span_end=2, beta=0.8, total_steps=50
    )
    out = interpolate_removal(src, tgt, plan, 0.25)
    # prefix copies the target exactly
    assert np.array_equal(out.tokens[:1], tgt.tokens[:1])
    # positions at and past the removal point read source shifted by span length
    assert out.tokens[1, 0] == pytest.approx(0.25 * 101.0 + 0.75 * 3.0)
    assert out.tokens[2, 0] == pytest.approx(0.25 * 102.0 + 0.75 * 4.0)
    assert out.tokens[3, 0] == pytest.approx(0.25 * 103.0 + 0.75 * 5.0)
    # shifted indices past the context clamp to the target
    assert np.array_equal(out.tokens[4:], tgt.tokens[4:])


def test_removal_endpoint_is_target():
    rng = np.random.default_rng(3)
    src = emb(rng.standard_normal(6))
    tgt = emb(rng.standard_normal(6))
    plan = InterpolationPlan(
        kind=EditKind.REMOVAL, span_start=2, span_end=3, beta=0.8, total_steps=50
    )
    out = interpolate_removal(src, tgt, plan, 1.0)
    assert np.array_equal(out.tokens, tgt.tokens)


def test_interpolate_dispatch_uses_step_coefficient():
    src = emb([0.0, 0.0])
    tgt = emb([1.0, 1.0])
    plan = InterpolationPlan(kind=EditKind.REPLACEMENT, beta=0.3, total_steps=50)
    out = interpolate(src, tgt, plan, 25)
    assert np.allclose(out.tokens, 0.65)
    out_top = interpolate(src, tgt, plan, 50)
    assert np.allclose(out_top.tokens, 0.3)


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    kind=st.sampled_from([EditKind.REPLACEMENT, EditKind.INSERTION, EditKind.REMOVAL]),
)
def test_all_kinds_reach_target_at_t0(seed, kind):
    rng = np.random.default_rng(seed)
    src = emb(rng.standard_normal(8))
    tgt = emb(rng.standard_normal(8))
    span = (SPAN_UNUSED, SPAN_UNUSED) if kind == EditKind.REPLACEMENT else (2, 4)
    plan = InterpolationPlan(
        kind=kind, span_start=span[0], span_end=span[1], beta=0.3, total_steps=50
    )
    out = interpolate(src, tgt, plan, 0)
    if kind == EditKind.INSERTION:
        # insertion keeps the (identical in practice) source prefix
        assert np.array_equal(out.tokens[2:], tgt.tokens[2:])
    else:
        assert np.array_equal(out.tokens, tgt.tokens)


def test_plan_validation():
    with pytest.raises(ValidationError):
        InterpolationPlan(kind=EditKind.INSERTION, span_start=3, span_end=1)
    with pytest.raises(ValidationError):
        InterpolationPlan(kind=EditKind.REPLACEMENT, beta=1.5)
    with pytest.raises(ValidationError):
        interpolate_insertion(
            emb([0.0, 1.0]),
            emb([2.0, 3.0]),
            InterpolationPlan(kind=EditKind.INSERTION, span_start=1, span_end=5),
            0.5,
        )


def test_plan_json_round_trip():
    plan = InterpolationPlan(
        kind=EditKind.INSERTION,
        span_start=2,
        span_end=4,
        beta=0.8,
        total_steps=50,
        src_text="a dog",
        tgt_text="a cute fluffy dog",
    )
    assert InterpolationPlan.from_json(plan.to_json()) == plan


def test_plan_from_prompts_replacement():
    plan = plan_from_prompts(
        "a dog on the grass", "a cat on the grass", WhitespaceTokenizer()
    )
    assert plan.kind == EditKind.REPLACEMENT
    assert plan.beta == 0.3
    assert plan.span_start == SPAN_UNUSED


def test_plan_from_prompts_insertion():
    plan = plan_from_prompts("a dog on the grass", "a cute fluffy dog on the grass",
                             WhitespaceTokenizer())
    assert plan.kind == EditKind.INSERTION
    assert (plan.span_start, plan.span_end) == (1, 2)
    assert plan.beta == 0.8


def test_plan_from_prompts_removal():
    plan = plan_from_prompts("a cute fluffy dog on the grass", "a dog on the grass",
                             WhitespaceTokenizer())
    assert plan.kind == EditKind.REMOVAL
    assert (plan.span_start, plan.span_end) == (1, 2)


def test_plan_from_prompts_honours_position_offset():
    class OffsetTokenizer(WhitespaceTokenizer):
        position_offset = 1  # e.g. a start-of-text token

    plan = plan_from_prompts("a dog", "a small dog", OffsetTokenizer())
    assert (plan.span_start, plan.span_end) == (2, 2)


def test_plan_from_prompts_rejects_ambiguous():
    tok = WhitespaceTokenizer()
    with pytest.raises(UnsupportedEditError):
        plan_from_prompts("a dog", "a dog", tok)
    with pytest.raises(UnsupportedEditError):
        plan_from_prompts("a dog chases a cat", "a big dog chases a small cat", tok)
    with pytest.raises(UnsupportedEditError):
        plan_from_prompts("a dog", "two small dogs", tok)


def test_prompt_embedding_validation():
    with pytest.raises(ValidationError):
        PromptEmbedding(tokens=np.zeros(4), meaningful_len=2)
    with pytest.raises(ValidationError):
        PromptEmbedding(tokens=np.zeros((4, 2)), meaningful_len=5)
    with pytest.raises(ValidationError):
        PromptEmbedding(tokens=np.full((2, 2), np.nan), meaningful_len=1)
