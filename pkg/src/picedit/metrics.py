"""Edit-quality metrics: prompt similarity, background distance, structure
distance, plus task-image selection and report aggregation.

All three metrics run against injected handles (embedder, detector,
perceptual distance, attention extractor) so the same code serves both the
CPU stubs used in tests and real pretrained networks configured with local
weights.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def clip_similarity(image, target_prompt: str, image_embedder, text_embedder) -> float:
    """Cosine similarity between the image embedding and the prompt embedding."""
    iv = np.asarray(image_embedder.embed_image(image), dtype=np.float64)
    tv = np.asarray(text_embedder.embed_text(target_prompt), dtype=np.float64)
    denom = np.linalg.norm(iv) * np.linalg.norm(tv)
    if denom == 0.0:
        return 0.0
    return float(np.dot(iv, tv) / denom)


def background_distance(
    src_image: np.ndarray,
    tgt_image: np.ndarray,
    detector,
    perceptual,
    object_label: str | None = None,
    dilation: int = 2,
) -> tuple[float, bool]:
    """Perceptual distance restricted to the background of the edit.

    The detected object region (mask preferred, box otherwise) is dilated
    by a small margin and complemented to form the background mask.  When
    detection fails the full-image distance is returned with a flag so the
    caller can mark the row instead of silently biasing averages.
    """
    src_image = np.asarray(src_image, dtype=np.float64)
    tgt_image = np.asarray(tgt_image, dtype=np.float64)
    if src_image.shape != tgt_image.shape:
        raise ValidationError(
            f"image shape mismatch: {src_image.shape} vs {tgt_image.shape}"
        )
    detection = detector.detect(src_image, object_label)
    if detection is None:
        return float(perceptual.distance(src_image, tgt_image)), True
    mask = _detection_mask(detection, src_image.shape[:2])
    if dilation > 0:
        mask = _dilate(mask, dilation)
    background = ~mask
    return float(perceptual.distance(src_image, tgt_image, mask=background)), False


def _detection_mask(detection, shape) -> np.ndarray:
    if isinstance(detection, dict) and "mask" in detection:
        return np.asarray(detection["mask"], dtype=bool)
    if isinstance(detection, dict) and "box" in detection:
        y0, x0, y1, x1 = detection["box"]
        mask = np.zeros(shape, dtype=bool)
        mask[y0:y1, x0:x1] = True
        return mask
    return np.asarray(detection, dtype=bool)


def _dilate(mask: np.ndarray, margin: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(margin):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def structure_distance(src_image, tgt_image, attention_extractor) -> float:
    """Frobenius norm of the difference between self-attention maps.

    Normalized by the square root of the map size so values are comparable
    across resolutions.
    """
    a = np.asarray(attention_extractor.self_attention(src_image), dtype=np.float64)
    b = np.asarray(attention_extractor.self_attention(tgt_image), dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"attention shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b) / np.sqrt(a.size))


def select_task_images(pool: list, domain_prompt: str, k: int, image_embedder, text_embedder):
    """Top-k pool entries by similarity to the source-domain prompt.

    ``pool`` is a list of (image_id, image) pairs.  Ties break on the
    image id, so the selected set is stable under pool shuffling.
    """
    if not pool:
        raise ValidationError("image pool is empty")
    scored = [
        (clip_similarity(img, domain_prompt, image_embedder, text_embedder), img_id, img)
        for img_id, img in pool
    ]
    scored.sort(key=lambda row: (-row[0], row[1]))
    if k > len(pool):
        return scored, True
    return scored[:k], False


@dataclass
class MetricsReport:
    """Per-image metric rows plus their arithmetic means."""

    task: str
    per_image: list = field(default_factory=list)
    config_fingerprint: str = ""

    def add(self, image_id: str, cs: float, bd: float, sd: float, flagged: bool = False):
        if not -1.0 <= cs <= 1.0:
            raise ValidationError(f"similarity {cs} outside [-1, 1]")
        if bd < 0 or sd < 0:
            raise ValidationError("distances must be non-negative")
        self.per_image.append(
            {"image_id": image_id, "cs": cs, "bd": bd, "sd": sd, "flagged": flagged}
        )

    @property
    def averages(self) -> dict:
        if not self.per_image:
            return {"cs": None, "bd": None, "sd": None}
        n = len(self.per_image)
        return {
            "cs": sum(r["cs"] for r in self.per_image) / n,
            "bd": sum(r["bd"] for r in self.per_image) / n,
            "sd": sum(r["sd"] for r in self.per_image) / n,
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "task": self.task,
            "config_fingerprint": self.config_fingerprint,
            "per_image": self.per_image,
            "averages": self.averages,
        }

    def write_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["image_id", "cs", "bd", "sd", "flagged"])
            for r in self.per_image:
                writer.writerow([r["image_id"], r["cs"], r["bd"], r["sd"], r["flagged"]])

    def summary_line(self) -> str:
        avg = self.averages
        if avg["cs"] is None:
            return f"{self.task:<28s}  (empty)"
        return (
            f"{self.task:<28s}  CS {avg['cs']:+.4f}  BD {avg['bd']:.4f}  SD {avg['sd']:.4f}"
        )


# ---------------------------------------------------------------------------
# CPU handles used by tests, fixtures, and the toy pipeline


class HashImageEmbedder:
    """Deterministic image embedder: coarse downsampled intensities."""

    def __init__(self, dim: int = 16):
        self.dim = dim

    def embed_image(self, image) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float64).ravel()
        pad = (-arr.size) % self.dim
        if pad:
            arr = np.concatenate([arr, np.zeros(pad)])
        return arr.reshape(self.dim, -1).mean(axis=1)


class HashTextSimEmbedder:
    """Deterministic text embedder matching HashImageEmbedder's dimension."""

    def __init__(self, dim: int = 16):
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        import hashlib

        digest = hashlib.sha256(text.encode()).digest()
        raw = np.frombuffer((digest * ((8 * self.dim) // len(digest) + 1))[: 8 * self.dim], dtype=np.uint64)
        return raw.astype(np.float64) / 2**64 - 0.5


class PatchPerceptualDistance:
    """Mean squared patch distance; honors an optional background mask."""

    def __init__(self, patch: int = 4):
        self.patch = patch

    def distance(self, a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        diff = (a - b) ** 2
        if diff.ndim == 3:
            diff = diff.mean(axis=-1)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if not mask.any():
                return 0.0
            return float(diff[mask].mean())
        return float(diff.mean())


class CenterBoxDetector:
    """Stub detector: a fixed centered box covering the given fraction."""

    def __init__(self, fraction: float = 0.5):
        self.fraction = fraction

    def detect(self, image, label=None):
        h, w = np.asarray(image).shape[:2]
        dh = int(h * self.fraction / 2)
        dw = int(w * self.fraction / 2)
        return {"box": (h // 2 - dh, w // 2 - dw, h // 2 + dh, w // 2 + dw)}


class NullDetector:
    """Stub detector that never finds anything; exercises the fallback path."""

    def detect(self, image, label=None):
        return None


class PatchAffinityAttention:
    """Self-attention stand-in: softmax affinities between image patches."""

    def __init__(self, grid: int = 4):
        self.grid = grid

    def self_attention(self, image) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr.mean(axis=-1)
        h, w = arr.shape
        gh, gw = h // self.grid, w // self.grid
        feats = []
        for i in range(self.grid):
            for j in range(self.grid):
                patch = arr[i * gh : (i + 1) * gh, j * gw : (j + 1) * gw]
                feats.append([patch.mean(), patch.std()])
        feats = np.asarray(feats)
        scores = -np.linalg.norm(feats[:, None, :] - feats[None, :, :], axis=-1)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=-1, keepdims=True)
