"""Training-free text-driven image editing via deterministic inversion,
noise-corrected reverse sampling, and progressive prompt interpolation."""

from .correction import (
    CallLedger,
    EditConfig,
    Variant,
    corrected_noise,
    correction_term,
    naive_reverse,
    pic_reverse,
    reconstruct_source,
    run_variant,
)
from .prompts import (
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
from .schedule import (
    DiffusionSchedule,
    LatentState,
    TrajectoryCache,
    build_schedule,
    forward_step,
    invert_source,
    predict_x0,
    reverse_step,
)

__version__ = "0.1.0"

__all__ = [
    "CallLedger",
    "DiffusionSchedule",
    "EditConfig",
    "EditKind",
    "InterpolationPlan",
    "LatentState",
    "PromptEmbedding",
    "TrajectoryCache",
    "Variant",
    "build_schedule",
    "corrected_noise",
    "correction_term",
    "forward_step",
    "interpolate",
    "interpolate_insertion",
    "interpolate_removal",
    "interpolate_replacement",
    "invert_source",
    "mixing_coefficient",
    "naive_reverse",
    "pic_reverse",
    "plan_from_prompts",
    "predict_x0",
    "reconstruct_source",
    "reverse_step",
    "run_variant",
]
