"""Deterministic DDIM coefficient schedule and the forward/reverse steps.

The schedule stores T+1 cumulative noise coefficients indexed by inference
step, with index 0 pinned to the clean-image endpoint (coefficient 1), so
that a reverse step landing on t=0 needs no special casing.  All schedule
arithmetic is done in float64 regardless of the latent dtype: the
forward/reverse round trip is used as a test oracle and must not be
polluted by coefficient roundoff.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalFailureError, ValidationError

SCHEDULE_KINDS = ("linear", "scaled_linear")

# beta range used by the latent-diffusion v1.x training schedule
_BETA_START = 0.00085
_BETA_END = 0.012
_LINEAR_BETA_START = 1e-4
_LINEAR_BETA_END = 0.02


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative noise coefficients on the inference grid.

    ``alphas[t]`` is the cumulative product of (1 - beta) after
    ``train_grid[t]`` training steps; ``alphas[0] == 1``.
    """

    alphas: np.ndarray
    num_steps: int
    train_grid: np.ndarray
    kind: str = "scaled_linear"

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "train_grid", np.asarray(self.train_grid, dtype=np.int64))
        if alphas.shape != (self.num_steps + 1,):
            raise ConfigurationError(
                f"schedule needs {self.num_steps + 1} coefficients, got {alphas.shape}"
            )
        if not np.all(np.diff(alphas) < 0):
            raise ConfigurationError("cumulative coefficients must decrease strictly")
        if alphas[0] > 1.0 or alphas[-1] <= 0.0:
            raise ConfigurationError("cumulative coefficients must lie in (0, 1]")

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.num_steps:
            raise ValidationError(f"step index {t} outside [0, {self.num_steps}]")
        return float(self.alphas[t])

    def to_dict(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "kind": self.kind,
            "alphas": self.alphas.tolist(),
            "train_grid": self.train_grid.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionSchedule":
        return cls(
            alphas=np.asarray(d["alphas"]),
            num_steps=int(d["num_steps"]),
            train_grid=np.asarray(d["train_grid"]),
            kind=d.get("kind", "scaled_linear"),
        )


def training_betas(num_train_steps: int, kind: str) -> np.ndarray:
    if kind == "linear":
        return np.linspace(_LINEAR_BETA_START, _LINEAR_BETA_END, num_train_steps, dtype=np.float64)
    if kind == "scaled_linear":
        return (
            np.linspace(_BETA_START**0.5, _BETA_END**0.5, num_train_steps, dtype=np.float64) ** 2
        )
    raise ConfigurationError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")


def build_schedule(
    num_train_steps: int,
    num_inference_steps: int,
    schedule_kind: str = "scaled_linear",
    betas: np.ndarray | None = None,
) -> DiffusionSchedule:
    """Subsample the training-grid cumulative products onto T+1 inference steps.

    The grid is trailing-aligned: inference step T maps to the full
    ``num_train_steps``-step cumulative product, keeping the noisiest latent
    near the pure-noise regime.  ``betas`` overrides the built-in beta table
    (used by the toy oracle, which wants a gentler noising).
    """
    if num_inference_steps < 1 or num_inference_steps > num_train_steps:
        raise ConfigurationError(
            f"need 1 <= num_inference_steps <= num_train_steps, "
            f"got {num_inference_steps} / {num_train_steps}"
        )
    if betas is None:
        betas = training_betas(num_train_steps, schedule_kind)
    else:
        betas = np.asarray(betas, dtype=np.float64)
        if betas.shape != (num_train_steps,):
            raise ConfigurationError("betas length must equal num_train_steps")
    # cumulative[s] = prod of the first s (1 - beta) factors; cumulative[0] = 1
    cumulative = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    grid = np.round(
        np.arange(num_inference_steps + 1) * num_train_steps / num_inference_steps
    ).astype(np.int64)
    return DiffusionSchedule(
        alphas=cumulative[grid],
        num_steps=num_inference_steps,
        train_grid=grid,
        kind=schedule_kind,
    )


@dataclass(frozen=True)
class LatentState:
    """A latent tensor tagged with its inference step index."""

    data: np.ndarray
    t: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if not np.all(np.isfinite(data)):
            raise ValidationError("latent contains non-finite entries")
        if self.t < 0:
            raise ValidationError(f"negative step index {self.t}")


def predict_x0(x: LatentState, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """Clean-image estimate from a latent and its noise prediction."""
    a_t = sched.alpha(x.t)
    if a_t <= 0.0:
        raise ConfigurationError(f"singular schedule: coefficient {a_t} at step {x.t}")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x.data.shape:
        raise ValidationError(f"shape mismatch: latent {x.data.shape} vs noise {eps.shape}")
    return (x.data - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)


def forward_step(x: LatentState, eps: np.ndarray, sched: DiffusionSchedule) -> LatentState:
    """One deterministic noising step t -> t+1."""
    if x.t >= sched.num_steps:
        raise ValidationError(f"forward step from t={x.t} overruns the schedule")
    a_next = sched.alpha(x.t + 1)
    x0 = predict_x0(x, eps, sched)
    data = np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * np.asarray(eps, dtype=np.float64)
    return LatentState(data=data, t=x.t + 1)


def reverse_step(x: LatentState, eps: np.ndarray, sched: DiffusionSchedule) -> LatentState:
    """One deterministic denoising step t -> t-1.

    The same noise tensor is applied in both the clean-image estimate and
    the additive term; callers substituting a corrected prediction replace
    both occurrences at once.
    """
    if x.t < 1:
        raise ValidationError("reverse step from t=0 underruns the schedule")
    a_prev = sched.alpha(x.t - 1)
    x0 = predict_x0(x, eps, sched)
    data = np.sqrt(a_prev) * x0 + np.sqrt(1.0 - a_prev) * np.asarray(eps, dtype=np.float64)
    return LatentState(data=data, t=x.t - 1)


def embedding_fingerprint(tokens: np.ndarray) -> str:
    arr = np.ascontiguousarray(np.asarray(tokens, dtype=np.float64))
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


@dataclass
class TrajectoryCache:
    """Latents and source-conditioned noise predictions from an inversion.

    ``latents[t]`` holds the source latent at inference step t for
    t = 0..T; ``source_noise[t]`` holds the prediction evaluated on
    ``latents[t]`` for t = 0..T-1.  The top step has no cached prediction
    (the forward loop stops at T-1); ``source_eps`` evaluates it lazily
    and memoizes the result.
    """

    latents: list
    source_noise: list
    prompt_fingerprint: str
    schedule: DiffusionSchedule
    _top_eps: np.ndarray | None = field(default=None, repr=False)
    top_eps_evals: int = field(default=0, repr=False)

    @property
    def num_steps(self) -> int:
        return len(self.latents) - 1

    def source_eps(self, t: int, model=None, y_src=None) -> np.ndarray:
        """Source-conditioned prediction at reverse step t (cache index t)."""
        T = self.num_steps
        if 0 <= t < T:
            return self.source_noise[t]
        if t != T:
            raise ValidationError(f"step index {t} outside cache range [0, {T}]")
        if self._top_eps is None:
            if model is None:
                raise ValidationError("top-step prediction needs a denoiser handle")
            self._top_eps = np.asarray(model.predict(self.latents[T], T, y_src), dtype=np.float64)
            self.top_eps_evals += 1
        return self._top_eps

    def validate_replay(self, steps=None) -> None:
        """Re-run the forward recursion over stored noises; must match bitwise."""
        T = self.num_steps
        if steps is None:
            steps = range(T)
        for t in steps:
            state = LatentState(data=self.latents[t], t=t)
            nxt = forward_step(state, self.source_noise[t], self.schedule)
            if not np.array_equal(nxt.data, self.latents[t + 1]):
                raise ValidationError(f"cache replay mismatch at step {t}")

    def save(self, directory: str) -> None:
        """Persist as meta.json plus one .npy file per stored array.

        Writes into a temp directory and renames, so concurrent writers of
        the same fingerprint are safe.
        """
        T = self.num_steps
        parent = os.path.dirname(os.path.abspath(directory)) or "."
        os.makedirs(parent, exist_ok=True)
        tmp = tempfile.mkdtemp(prefix=".cache-", dir=parent)
        try:
            meta = {
                "schema_version": 1,
                "num_steps": T,
                "prompt_fingerprint": self.prompt_fingerprint,
                "latent_shape": list(np.asarray(self.latents[0]).shape),
                "schedule": self.schedule.to_dict(),
            }
            with open(os.path.join(tmp, "meta.json"), "w") as f:
                json.dump(meta, f, indent=2)
            for t, lat in enumerate(self.latents):
                np.save(os.path.join(tmp, f"latent_{t:04d}.npy"), np.asarray(lat))
            for t, eps in enumerate(self.source_noise):
                np.save(os.path.join(tmp, f"noise_{t:04d}.npy"), np.asarray(eps))
            if os.path.isdir(directory):
                import shutil

                shutil.rmtree(directory)
            os.rename(tmp, directory)
        finally:
            if os.path.isdir(tmp):
                import shutil

                shutil.rmtree(tmp)

    @classmethod
    def load(cls, directory: str, validate_samples: int = 4) -> "TrajectoryCache":
        with open(os.path.join(directory, "meta.json")) as f:
            meta = json.load(f)
        T = int(meta["num_steps"])
        latents = [np.load(os.path.join(directory, f"latent_{t:04d}.npy")) for t in range(T + 1)]
        noises = [np.load(os.path.join(directory, f"noise_{t:04d}.npy")) for t in range(T)]
        cache = cls(
            latents=latents,
            source_noise=noises,
            prompt_fingerprint=meta["prompt_fingerprint"],
            schedule=DiffusionSchedule.from_dict(meta["schedule"]),
        )
        if T > 0 and validate_samples > 0:
            picks = np.unique(np.linspace(0, T - 1, min(validate_samples, T)).astype(int))
            cache.validate_replay(steps=picks)
        return cache


def invert_source(x0: np.ndarray, y_src, model, sched: DiffusionSchedule) -> TrajectoryCache:
    """Run the deterministic noising loop, caching latents and predictions."""
    x = LatentState(data=np.asarray(x0, dtype=np.float64), t=0)
    latents = [x.data]
    noises = []
    for t in range(sched.num_steps):
        eps = np.asarray(model.predict(x.data, t, y_src), dtype=np.float64)
        if not np.all(np.isfinite(eps)):
            raise NumericalFailureError("non-finite noise prediction", step=t, branch="forward")
        x = forward_step(x, eps, sched)
        latents.append(x.data)
        noises.append(eps)
    fingerprint = embedding_fingerprint(y_src.tokens if hasattr(y_src, "tokens") else y_src)
    return TrajectoryCache(
        latents=latents,
        source_noise=noises,
        prompt_fingerprint=fingerprint,
        schedule=sched,
    )
