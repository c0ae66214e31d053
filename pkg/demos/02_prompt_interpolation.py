"""Walk the time-dependent prompt blend for the three edit families.

The mixing coefficient starts at beta when the reverse process begins and
ramps linearly to 1 at the clean end, so early steps stay close to the
source prompt and late steps commit to the target.
"""

import numpy as np

from picedit.adapters import WhitespaceTokenizer
from picedit.prompts import (
    EditKind,
    InterpolationPlan,
    PromptEmbedding,
    interpolate,
    mixing_coefficient,
    plan_from_prompts,
)

T = 50
print("mixing coefficient over the reverse process (beta = 0.3):")
for t in (50, 40, 25, 10, 0):
    print(f"  t={t:3d}  beta_t = {mixing_coefficient(t, T, 0.3):.3f}")
print()

# one-dimensional token values make the blend easy to read
src = PromptEmbedding(tokens=np.arange(6.0)[:, None], meaningful_len=6, text="src")
tgt = PromptEmbedding(tokens=(np.arange(6.0) + 100.0)[:, None], meaningful_len=6, text="tgt")

print("replacement: every position is an affine blend")
plan = InterpolationPlan(kind=EditKind.REPLACEMENT, beta=0.3, total_steps=T)
for t in (50, 25, 0):
    out = interpolate(src, tgt, plan, t)
    print(f"  t={t:3d} ", np.round(out.tokens[:, 0], 2))
print()

print("insertion of a 2-token span at positions 2..3:")
print("  prefix copies the source, the span copies the target,")
print("  the suffix blends with the source shifted back by the span length")
plan = InterpolationPlan(kind=EditKind.INSERTION, span_start=2, span_end=3, beta=0.8, total_steps=T)
for t in (50, 25, 0):
    out = interpolate(src, tgt, plan, t)
    print(f"  t={t:3d} ", np.round(out.tokens[:, 0], 2))
print()

print("removal of source positions 2..3 mirrors the insertion:")
plan = InterpolationPlan(kind=EditKind.REMOVAL, span_start=2, span_end=3, beta=0.8, total_steps=T)
for t in (50, 25, 0):
    out = interpolate(src, tgt, plan, t)
    print(f"  t={t:3d} ", np.round(out.tokens[:, 0], 2))
print()

print("plans can also be diffed straight from prompt strings:")
tok = WhitespaceTokenizer()
for a, b in (
    ("a dog on the grass", "a cat on the grass"),
    ("a dog on the grass", "a cute fluffy dog on the grass"),
    ("a cute fluffy dog on the grass", "a dog on the grass"),
):
    plan = plan_from_prompts(a, b, tok)
    print(f"  {a!r} -> {b!r}")
    print(f"    kind={plan.kind.value}  span=({plan.span_start}, {plan.span_end})  beta={plan.beta}")
