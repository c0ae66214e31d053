"""User-facing pipeline: configuration, edit runs, caching, evaluation.

Commands never mutate their inputs; every artifact lands under the output
or cache directory, written via create-then-rename so failed runs leave no
partial outputs behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adapters import (
    CallCountingDenoiser,
    GuidedDenoiser,
    build_target_prompt,
    caption_source,
    encode_prompt,
    load_backbone,
)
from .correction import (
    GAMMA_SWEEP_GRID,
    EditConfig,
    RunTimings,
    Variant,
    phase_timer,
    run_variant,
)
from .errors import ConfigurationError, ValidationError
from .metrics import (
    CenterBoxDetector,
    HashImageEmbedder,
    HashTextSimEmbedder,
    MetricsReport,
    PatchAffinityAttention,
    PatchPerceptualDistance,
    background_distance,
    clip_similarity,
    structure_distance,
)
from .prompts import InterpolationPlan, plan_from_prompts
from .schedule import TrajectoryCache, build_schedule, embedding_fingerprint, invert_source

SCHEMA_VERSION = 1
CACHE_ROOT_ENV = "PICEDIT_CACHE_ROOT"

# the six tasks used for preset configs: name -> (mode, a, b, beta)
TASK_PRESETS = {
    "dog2cat": ("replace", "dog", "cat", 0.3),
    "cat2dog": ("replace", "cat", "dog", 0.3),
    "horse2zebra": ("replace", "horse", "zebra", 0.3),
    "zebra2horse": ("replace", "zebra", "horse", 0.3),
    "tree2palm": ("replace", "tree", "palm", 0.3),
    "dog2dogglasses": ("insert", "dog", "with glasses", 0.8),
}


@dataclass
class RunConfig:
    """Flat run configuration; file values can be overridden by CLI flags."""

    backbone: str = "toy"
    integration: str = "none"
    variant: str = "PIC"
    gamma: float = 1.0
    tau: int = 25
    beta: float | None = None
    steps: int = 50
    guidance_scale: float = 1.0
    seed: int = 0
    schedule_kind: str = "scaled_linear"
    num_train_steps: int = 1000
    task: str = ""
    src_prompt: str = ""
    tgt_prompt: str = ""
    input: str = ""
    output_dir: str = "outputs"
    cache_dir: str = ""
    force: bool = False
    auto_invert: bool = True

    def __post_init__(self):
        if self.integration not in ("none", "ptp", "pnp", "p2p"):
            raise ConfigurationError(f"unknown integration key {self.integration!r}")
        Variant(self.variant)

    def resolved_beta(self, plan_kind: str) -> float:
        if self.beta is not None:
            return self.beta
        return 0.3 if plan_kind == "replacement" else 0.8

    def resolved_cache_dir(self) -> str:
        if self.cache_dir:
            return self.cache_dir
        root = os.environ.get(CACHE_ROOT_ENV, "caches")
        return os.path.join(root, self.fingerprint()[:12])

    def edit_config(self) -> EditConfig:
        return EditConfig(
            gamma=self.gamma,
            tau=self.tau,
            beta=self.beta if self.beta is not None else 0.3,
            num_steps=self.steps,
            guidance_scale=self.guidance_scale,
            seed=self.seed,
            variant=Variant(self.variant),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as f:
            if path.endswith((".yaml", ".yml")):
                import yaml

                data = yaml.safe_load(f)
            else:
                data = json.load(f)
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must hold a mapping")
        return cls(**data)

    def with_overrides(self, **kwargs) -> "RunConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)

    def fingerprint(self) -> str:
        keys = {
            "backbone": self.backbone,
            "steps": self.steps,
            "schedule_kind": self.schedule_kind,
            "num_train_steps": self.num_train_steps,
            "src_prompt": self.src_prompt,
            "input": _file_digest(self.input) if self.input and os.path.exists(self.input) else self.input,
            "guidance_scale": self.guidance_scale,
        }
        return hashlib.sha256(json.dumps(keys, sort_keys=True).encode()).hexdigest()


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def load_image(path: str, side: int) -> np.ndarray:
    """Load an image as a side x side grayscale array in [-1, 1].

    ``.npy`` inputs are taken as latents directly.
    """
    if path.endswith(".npy"):
        arr = np.load(path).astype(np.float64)
        if arr.shape != (side, side):
            raise ValidationError(f"latent input shape {arr.shape}, expected {(side, side)}")
        return arr
    from PIL import Image

    with Image.open(path) as img:
        gray = img.convert("L").resize((side, side))
    return np.asarray(gray, dtype=np.float64) / 127.5 - 1.0


def save_image(arr: np.ndarray, path: str) -> None:
    from PIL import Image

    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    img = Image.fromarray((scaled * 255).astype(np.uint8), mode="L")
    tmp = path + ".tmp"
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def _write_json_atomic(payload: dict, path: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    with os.fdopen(fd, "w") as f:
        json.dump(payload, f, indent=2)
    os.replace(tmp, path)


def _prepare_run(config: RunConfig):
    backbone = load_backbone(config.backbone)
    sched = build_schedule(config.num_train_steps, config.steps, config.schedule_kind)
    denoiser = CallCountingDenoiser(backbone.make_denoiser(sched))
    if config.guidance_scale != 1.0:
        null_embedding = encode_prompt("", backbone.text_encoder)
        model = GuidedDenoiser(denoiser, null_embedding, scale=config.guidance_scale)
    else:
        model = denoiser
    return backbone, sched, denoiser, model


def _resolve_prompts(config: RunConfig, backbone):
    p_src = caption_source(None, captioner=backbone.captioner, user_prompt=config.src_prompt)
    if config.tgt_prompt:
        p_tgt = config.tgt_prompt
    elif config.task:
        if config.task not in TASK_PRESETS:
            raise ConfigurationError(
                f"unknown task {config.task!r}; presets: {sorted(TASK_PRESETS)}"
            )
        mode, a, b, _beta = TASK_PRESETS[config.task]
        p_tgt = build_target_prompt(p_src, (mode, a, b))
    else:
        raise ConfigurationError("either tgt_prompt or task must be set")
    return p_src, p_tgt


def cmd_invert(config: RunConfig) -> str:
    """Invert the source image into a trajectory cache directory."""
    backbone, sched, denoiser, model = _prepare_run(config)
    cache_dir = config.resolved_cache_dir()
    run_fp = config.fingerprint()
    marker = os.path.join(cache_dir, "invert_manifest.json")
    if os.path.isdir(cache_dir) and os.path.exists(marker):
        with open(marker) as f:
            existing = json.load(f)
        if existing.get("run_fingerprint") == run_fp:
            return cache_dir  # cache hit: zero model calls
        if not config.force:
            raise ValidationError(
                f"cache at {cache_dir} was built from a different configuration; "
                "pass --force to rebuild"
            )
    p_src = caption_source(None, captioner=backbone.captioner, user_prompt=config.src_prompt)
    y_src = encode_prompt(p_src, backbone.text_encoder)
    side = backbone.codec.latent_shape[0]
    x0 = backbone.codec.encode(load_image(config.input, side))
    cache = invert_source(x0, y_src, model, sched)
    cache.save(cache_dir)
    _write_json_atomic(
        {
            "schema_version": SCHEMA_VERSION,
            "run_fingerprint": run_fp,
            "source_prompt": p_src,
            "config": config.to_dict(),
        },
        marker,
    )
    return cache_dir


def _load_or_build_cache(config: RunConfig, backbone, sched, model):
    cache_dir = config.resolved_cache_dir()
    if not os.path.isdir(cache_dir):
        if not config.auto_invert:
            raise ValidationError(f"no cache at {cache_dir} and auto-invert is disabled")
        cmd_invert(config)
    return TrajectoryCache.load(cache_dir), cache_dir


def _build_plan(config: RunConfig, backbone, p_src: str, p_tgt: str) -> InterpolationPlan:
    plan = plan_from_prompts(
        p_src, p_tgt, backbone.text_encoder.tokenizer, beta=config.beta, total_steps=config.steps
    )
    return plan


def cmd_edit(config: RunConfig) -> dict:
    """Run one edit end to end; returns the manifest dict."""
    backbone, sched, denoiser, model = _prepare_run(config)
    p_src, p_tgt = _resolve_prompts(config, backbone)
    config = config.with_overrides(src_prompt=p_src, tgt_prompt=p_tgt)
    timings = RunTimings()
    with phase_timer(timings, "invert_s"):
        cache, cache_dir = _load_or_build_cache(config, backbone, sched, model)
    y_src = encode_prompt(p_src, backbone.text_encoder)
    y_tgt = encode_prompt(p_tgt, backbone.text_encoder)
    if cache.prompt_fingerprint != embedding_fingerprint(y_src.tokens):
        raise ValidationError("cache was inverted with a different source prompt")
    plan = _build_plan(config, backbone, p_src, p_tgt)
    edit_cfg = EditConfig(
        gamma=config.gamma,
        tau=config.tau,
        beta=plan.beta,
        num_steps=config.steps,
        guidance_scale=config.guidance_scale,
        seed=config.seed,
        variant=Variant(config.variant),
    )
    calls_before = denoiser.calls
    with phase_timer(timings, "reverse_s"):
        latent, ledger = run_variant(
            Variant(config.variant), cache, y_src, y_tgt, plan, edit_cfg, model, sched
        )
    os.makedirs(config.output_dir, exist_ok=True)
    image_path = os.path.join(
        config.output_dir, f"{config.variant.lower()}_seed{config.seed}.png"
    )
    with phase_timer(timings, "decode_s"):
        save_image(backbone.codec.decode(latent), image_path)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "plan": json.loads(plan.to_json()),
        "cache_fingerprint": cache.prompt_fingerprint,
        "cache_dir": cache_dir,
        "call_ledger": ledger.to_dict(),
        "raw_denoiser_calls": denoiser.calls - calls_before,
        "timings": timings.to_dict(),
        "output_image": image_path,
        "truncated_prompts": bool(getattr(y_src, "truncated", False) or getattr(y_tgt, "truncated", False)),
    }
    _write_json_atomic(manifest, os.path.join(config.output_dir, f"manifest_{config.variant.lower()}.json"))
    return manifest


def cmd_ablate(config: RunConfig) -> dict:
    """Run the four variants against one shared cache and seed."""
    manifests = {}
    for variant in ("DDIM", "DDIM_PI", "DDIM_NC", "PIC"):
        manifests[variant] = cmd_edit(config.with_overrides(variant=variant))
    report = {
        "schema_version": SCHEMA_VERSION,
        "variants": {v: m["call_ledger"] for v, m in manifests.items()},
        "images": {v: m["output_image"] for v, m in manifests.items()},
    }
    if config.backbone == "toy":
        from .toy import averaged_ablation, two_domain_scenario

        scenario = two_domain_scenario(num_steps=config.steps, tau=config.tau)
        avg = averaged_ablation(scenario, config.edit_config(), num_seeds=100)
        bd = {v: avg[v]["background_distance"] for v in avg}
        report["surrogate_metrics"] = avg
        report["background_ordering_ok"] = (
            bd["PIC"] <= bd["DDIM_NC"] <= bd["DDIM_PI"] <= bd["DDIM"] and bd["PIC"] < bd["DDIM"]
        )
    os.makedirs(config.output_dir, exist_ok=True)
    _write_json_atomic(report, os.path.join(config.output_dir, "ablation_report.json"))
    return report


def cmd_sweep(config: RunConfig, grid=GAMMA_SWEEP_GRID) -> dict:
    """Correction-weight sweep: one output per grid value plus a contact sheet."""
    outputs = {}
    for gamma in grid:
        sub = config.with_overrides(
            gamma=gamma, output_dir=os.path.join(config.output_dir, f"gamma_{gamma}")
        )
        outputs[gamma] = cmd_edit(sub)
    sheet_path = os.path.join(config.output_dir, "gamma_contact_sheet.png")
    _contact_sheet([m["output_image"] for m in outputs.values()], sheet_path)
    report = {
        "schema_version": SCHEMA_VERSION,
        "grid": list(grid),
        "manifests": {str(g): m["output_image"] for g, m in outputs.items()},
        "contact_sheet": sheet_path,
    }
    _write_json_atomic(report, os.path.join(config.output_dir, "sweep_report.json"))
    return report


def _contact_sheet(paths: list[str], out_path: str) -> None:
    from PIL import Image

    images = [Image.open(p) for p in paths]
    h = max(im.height for im in images)
    w = sum(im.width for im in images) + 2 * (len(images) - 1)
    sheet = Image.new("L", (w, h), color=255)
    x = 0
    for im in images:
        sheet.paste(im, (x, 0))
        x += im.width + 2
    tmp = out_path + ".tmp"
    sheet.save(tmp, format="PNG")
    os.replace(tmp, out_path)


def default_metric_handles() -> dict:
    return {
        "image_embedder": HashImageEmbedder(),
        "text_embedder": HashTextSimEmbedder(),
        "detector": CenterBoxDetector(),
        "perceptual": PatchPerceptualDistance(),
        "attention": PatchAffinityAttention(),
    }


def cmd_evaluate(
    source_dir: str,
    translated_dir: str,
    target_prompt: str,
    output_dir: str,
    task: str = "task",
    handles: dict | None = None,
) -> MetricsReport:
    """Score every paired image; unpaired files are listed and skipped."""
    handles = handles or default_metric_handles()
    report = MetricsReport(task=task)
    src_files = sorted(f for f in os.listdir(source_dir) if not f.startswith("."))
    skipped = []
    for name in src_files:
        tgt_path = os.path.join(translated_dir, name)
        if not os.path.exists(tgt_path):
            skipped.append(name)
            continue
        src = _load_any(os.path.join(source_dir, name))
        tgt = _load_any(tgt_path)
        cs = clip_similarity(tgt, target_prompt, handles["image_embedder"], handles["text_embedder"])
        bd, flagged = background_distance(src, tgt, handles["detector"], handles["perceptual"])
        sd = structure_distance(src, tgt, handles["attention"])
        report.add(name, cs=cs, bd=bd, sd=sd, flagged=flagged)
    os.makedirs(output_dir, exist_ok=True)
    report.write_json(os.path.join(output_dir, f"metrics_{task}.json"))
    report.write_csv(os.path.join(output_dir, f"metrics_{task}.csv"))
    if skipped:
        _write_json_atomic(
            {"skipped_unpaired": skipped}, os.path.join(output_dir, f"skipped_{task}.json")
        )
    return report


def _load_any(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path).astype(np.float64)
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
