"""Corrected noise prediction and the end-to-end edit reverse process.

During the first ``tau`` reverse steps the plain target-prompt prediction
is replaced by the cached source prediction plus a weighted correction:
the difference between the prediction under the time-interpolated prompt
and the prediction under the source prompt, both evaluated on the current
target latent.  After the window the plain reverse process continues with
the target prompt.  The ablation variants (plain reverse, interpolation
only, correction only) share the same loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, NumericalFailureError, ValidationError
from .prompts import InterpolationPlan, PromptEmbedding, interpolate
from .schedule import DiffusionSchedule, LatentState, TrajectoryCache, reverse_step

GAMMA_SWEEP_GRID = (0.5, 1.0, 1.5, 2.0, 2.5)


class Variant(str, Enum):
    PIC = "PIC"
    DDIM = "DDIM"
    DDIM_PI = "DDIM_PI"
    DDIM_NC = "DDIM_NC"


@dataclass(frozen=True)
class EditConfig:
    """Sampler hyperparameters for one edit run."""

    gamma: float = 1.0
    tau: int = 25
    beta: float = 0.3
    num_steps: int = 50
    guidance_scale: float = 1.0
    seed: int = 0
    variant: Variant = Variant.PIC

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError(f"gamma {self.gamma} must be >= 0")
        if not 0 <= self.tau <= self.num_steps:
            raise ConfigurationError(f"tau {self.tau} outside [0, {self.num_steps}]")
        if self.guidance_scale < 1.0:
            raise ConfigurationError(f"guidance scale {self.guidance_scale} must be >= 1")


@dataclass
class CallLedger:
    """Denoiser evaluation counts, pre-guidance-doubling.

    ``corrected_calls`` counts evaluations on target latents inside the
    correction window; the single uncached top-step source evaluation is
    tracked separately so the window accounting stays exactly 2*tau.
    """

    forward_calls: int = 0
    corrected_calls: int = 0
    plain_calls: int = 0
    extra_source_calls: int = 0

    def to_dict(self) -> dict:
        return {
            "forward_calls": self.forward_calls,
            "corrected_calls": self.corrected_calls,
            "plain_calls": self.plain_calls,
            "extra_source_calls": self.extra_source_calls,
        }


def correction_term(eps_interp: np.ndarray, eps_src_cond: np.ndarray) -> np.ndarray:
    """Difference between the interpolated-prompt and source-prompt predictions."""
    eps_interp = np.asarray(eps_interp, dtype=np.float64)
    eps_src_cond = np.asarray(eps_src_cond, dtype=np.float64)
    if eps_interp.shape != eps_src_cond.shape:
        raise ValidationError(
            f"shape mismatch: {eps_interp.shape} vs {eps_src_cond.shape}"
        )
    return eps_interp - eps_src_cond


def corrected_noise(eps_src_saved: np.ndarray, delta: np.ndarray, gamma: float) -> np.ndarray:
    """Cached source prediction plus the weighted correction term."""
    eps_src_saved = np.asarray(eps_src_saved, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if eps_src_saved.shape != delta.shape:
        raise ValidationError(f"shape mismatch: {eps_src_saved.shape} vs {delta.shape}")
    return eps_src_saved + gamma * delta


def naive_reverse(
    x_start: np.ndarray,
    t_start: int,
    y: PromptEmbedding,
    model,
    sched: DiffusionSchedule,
    ledger: CallLedger | None = None,
) -> np.ndarray:
    """Plain deterministic reverse from step t_start down to 0."""
    x = LatentState(data=np.asarray(x_start, dtype=np.float64), t=t_start)
    for t in range(t_start, 0, -1):
        eps = np.asarray(model.predict(x.data, t, y), dtype=np.float64)
        if ledger is not None:
            ledger.plain_calls += 1
        if not np.all(np.isfinite(eps)):
            raise NumericalFailureError("non-finite noise prediction", step=t, branch="plain")
        x = reverse_step(x, eps, sched)
    return x.data


def reconstruct_source(cache: TrajectoryCache, model=None, y_src=None) -> np.ndarray:
    """Reverse the inversion using the cached source predictions.

    At each reverse step t the cached prediction with the same time index
    is applied; only the top step, which the forward loop never evaluated,
    uses a fresh prediction.  Because the cached index is one step ahead of
    the exact algebraic inverse, reconstruction is approximate with error
    shrinking as the step count grows.
    """
    T = cache.num_steps
    x = LatentState(data=cache.latents[T], t=T)
    for t in range(T, 0, -1):
        eps = cache.source_eps(t, model=model, y_src=y_src)
        x = reverse_step(x, eps, cache.schedule)
    return x.data


def pic_reverse(
    cache: TrajectoryCache,
    y_src: PromptEmbedding,
    y_tgt: PromptEmbedding,
    plan: InterpolationPlan,
    config: EditConfig,
    model,
    sched: DiffusionSchedule,
    record_trajectory: list | None = None,
) -> tuple[np.ndarray, CallLedger]:
    """Corrected reverse process starting from the inverted source latent."""
    return run_variant(
        Variant.PIC, cache, y_src, y_tgt, plan, config, model, sched, record_trajectory
    )


def run_variant(
    variant: Variant,
    cache: TrajectoryCache,
    y_src: PromptEmbedding,
    y_tgt: PromptEmbedding,
    plan: InterpolationPlan,
    config: EditConfig,
    model,
    sched: DiffusionSchedule,
    record_trajectory: list | None = None,
) -> tuple[np.ndarray, CallLedger]:
    """Shared reverse loop for PIC and its ablations.

    DDIM ignores the window entirely; DDIM_PI swaps the target-prompt
    prediction for the interpolated one inside the window; DDIM_NC applies
    the correction with the target prompt in place of the interpolated
    one; PIC applies the full corrected prediction.
    """
    variant = Variant(variant)
    T = sched.num_steps
    if cache.num_steps != T or config.num_steps != T or plan.total_steps != T:
        raise ValidationError(
            f"step-count mismatch: cache {cache.num_steps}, config {config.num_steps}, "
            f"plan {plan.total_steps}, schedule {T}"
        )
    ledger = CallLedger(forward_calls=T)
    tau = 0 if variant == Variant.DDIM else config.tau
    x = LatentState(data=cache.latents[T], t=T)

    for t in range(T, T - tau, -1):
        if variant == Variant.DDIM_PI:
            y_t = interpolate(y_src, y_tgt, plan, t)
            eps_hat = np.asarray(model.predict(x.data, t, y_t), dtype=np.float64)
            ledger.corrected_calls += 1
        else:
            eps_saved = cache.source_eps(t, model=model, y_src=y_src)
            if config.gamma == 0.0:
                # the correction vanishes; skip both target-latent evaluations
                eps_hat = eps_saved
            else:
                cond = y_tgt if variant == Variant.DDIM_NC else interpolate(
                    y_src, y_tgt, plan, t
                )
                eps_interp = np.asarray(model.predict(x.data, t, cond), dtype=np.float64)
                eps_src_cond = np.asarray(model.predict(x.data, t, y_src), dtype=np.float64)
                ledger.corrected_calls += 2
                delta = correction_term(eps_interp, eps_src_cond)
                eps_hat = corrected_noise(eps_saved, delta, config.gamma)
        if not np.all(np.isfinite(eps_hat)):
            raise NumericalFailureError(
                "non-finite corrected prediction", step=t, branch="window"
            )
        x = reverse_step(x, eps_hat, sched)
        if record_trajectory is not None:
            record_trajectory.append(x)

    for t in range(T - tau, 0, -1):
        eps = np.asarray(model.predict(x.data, t, y_tgt), dtype=np.float64)
        ledger.plain_calls += 1
        if not np.all(np.isfinite(eps)):
            raise NumericalFailureError("non-finite noise prediction", step=t, branch="plain")
        x = reverse_step(x, eps, sched)
        if record_trajectory is not None:
            record_trajectory.append(x)

    ledger.extra_source_calls = cache.top_eps_evals
    return x.data, ledger


@dataclass
class RunTimings:
    """Wall-clock accounting per pipeline phase, for the run manifest."""

    invert_s: float = 0.0
    reverse_s: float = 0.0
    decode_s: float = 0.0

    def to_dict(self):
        return {"invert_s": self.invert_s, "reverse_s": self.reverse_s, "decode_s": self.decode_s}


class phase_timer:
    def __init__(self, timings: RunTimings, attr: str):
        self.timings = timings
        self.attr = attr

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        setattr(
            self.timings, self.attr, getattr(self.timings, self.attr) + time.perf_counter() - self._t0
        )
        return False
