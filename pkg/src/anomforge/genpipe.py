"""Anomaly injection: pair masked base images with size-compatible
out-of-place objects, inpaint candidates in a cropped window, and paste
accepted regions back into the untouched original.

Every pixel outside the mask of an output image is bit-identical to the
base image, and every output's ground-truth label comes from the task
that produced it, never from the pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from anomforge.errors import ProviderError, ValidationError
from anomforge.filtering import PENDING, SimilarityScoreSet
from anomforge.ontology import Ontology, anomalous_objects_for
from anomforge.providers import base as providers
from anomforge.providers.base import RasterImage, Rect
from anomforge.seeds import derive_seed

log = logging.getLogger(__name__)

DEFAULT_CANDIDATES = 10
DEFAULT_PER_PAIR = 4
DEFAULT_PROMPT_TEMPLATE = "a photo of a {label}"


@dataclass(frozen=True)
class CropPolicy:
    """How far to widen the mask into an inpainting window.

    The mask rectangle grows by ``factor`` about its center in each
    dimension, then to at least ``min_size`` on each side when the image
    allows, and finally clamps to the image bounds.
    """

    factor: float = 2.0
    min_size: int = 256

    def __post_init__(self) -> None:
        if self.factor < 1.0:
            raise ValidationError(f"crop factor must be >= 1, got {self.factor}")
        if self.min_size < 0:
            raise ValidationError(f"crop min_size must be >= 0, got {self.min_size}")


@dataclass(frozen=True)
class MaskSpec:
    image_id: str
    bbox: Rect
    size_class: str

    def __post_init__(self) -> None:
        from anomforge.ontology import SIZE_CLASSES

        if self.size_class not in SIZE_CLASSES:
            raise ValidationError(f"mask size_class {self.size_class!r} invalid")


@dataclass(frozen=True)
class GenerationTask:
    task_id: str
    image_id: str
    scene: str
    mask: MaskSpec
    target: str
    seed: int


@dataclass(frozen=True)
class CandidateRecord:
    """One inpainting candidate: the extracted region plus its fate."""

    task: GenerationTask
    candidate_index: int
    crop_window: Rect
    region_image: RasterImage | None
    scores: SimilarityScoreSet | None = None
    decision: str = PENDING
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.decision == "accepted" and self.scores is None:
            raise ValidationError("accepted records must carry scores")

    def decided(self, scores, decision, reason=None) -> "CandidateRecord":
        return replace(self, scores=scores, decision=decision, reason=reason)


def _slug(label: str) -> str:
    return label.replace(" ", "-").replace("/", "-")


def plan_tasks(
    ontology: Ontology,
    image_scenes: Mapping[str, str],
    masks: list[MaskSpec],
    per_pair: int = DEFAULT_PER_PAIR,
    seed: int = 0,
) -> list[GenerationTask]:
    """Choose anomaly targets for every (image, mask) pair.

    Targets are sampled uniformly without replacement from the objects
    anomalous in the image's scene at the mask's size class; a pair with
    no compatible target contributes nothing and logs a warning.  The
    sampling is keyed to (seed, image, mask index) so plans replay
    exactly regardless of call order.
    """
    if per_pair < 0:
        raise ValidationError(f"per_pair must be >= 0, got {per_pair}")
    tasks: list[GenerationTask] = []
    mask_index: dict[str, int] = {}
    for mask in masks:
        if mask.image_id not in image_scenes:
            raise ValidationError(f"mask references unknown image {mask.image_id!r}")
        idx = mask_index.get(mask.image_id, 0)
        mask_index[mask.image_id] = idx + 1
        scene = image_scenes[mask.image_id]
        pool = anomalous_objects_for(ontology, scene, mask.size_class)
        if not pool:
            log.warning(
                "no %s-sized anomalies for scene %r; skipping mask %d of image %s",
                mask.size_class,
                scene,
                idx,
                mask.image_id,
            )
            continue
        count = min(per_pair, len(pool))
        if count == 0:
            continue
        rng = np.random.default_rng(derive_seed(seed, "plan", mask.image_id, idx))
        chosen = rng.choice(len(pool), size=count, replace=False)
        for offset in sorted(int(c) for c in chosen):
            target = pool[offset].label
            task_id = f"{mask.image_id}-m{idx}-{_slug(target)}"
            tasks.append(
                GenerationTask(
                    task_id=task_id,
                    image_id=mask.image_id,
                    scene=scene,
                    mask=mask,
                    target=target,
                    seed=derive_seed(seed, "task", task_id) % (2**31),
                )
            )
    return tasks


def crop_window(image: RasterImage, mask: Rect, policy: CropPolicy = CropPolicy()) -> tuple[RasterImage, tuple[int, int]]:
    """Cut the window around a mask that the inpainter will see.

    Returns the window image and the (x, y) offset of its top-left
    corner in full-image coordinates; the mask always lies fully inside
    the window.
    """
    if not mask.within(image.width, image.height):
        raise ValidationError(f"mask {mask} outside {image.width}x{image.height} image")
    want_w = max(int(round(mask.w * policy.factor)), mask.w, min(policy.min_size, image.width))
    want_h = max(int(round(mask.h * policy.factor)), mask.h, min(policy.min_size, image.height))
    want_w = min(want_w, image.width)
    want_h = min(want_h, image.height)

    cx = mask.x + mask.w / 2
    cy = mask.y + mask.h / 2
    x = int(round(cx - want_w / 2))
    y = int(round(cy - want_h / 2))
    x = max(0, min(x, image.width - want_w))
    y = max(0, min(y, image.height - want_h))
    # the centering round could push a window edge across the mask; snap back
    x = min(x, mask.x)
    y = min(y, mask.y)
    x = max(x, mask.x + mask.w - want_w)
    y = max(y, mask.y + mask.h - want_h)

    window = Rect(x, y, want_w, want_h)
    return image.crop(window), (x, y)


def build_prompt(target: str, template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    return template.format(label=target)


def generate_candidates(
    task: GenerationTask,
    image: RasterImage,
    inpainter: providers.InpaintingProvider,
    n: int = DEFAULT_CANDIDATES,
    policy: CropPolicy = CropPolicy(),
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
) -> list[CandidateRecord]:
    """Inpaint ``n`` candidates for a task and extract their masked regions.

    All records are returned pending; a provider failure raises with the
    task attached and persists nothing.
    """
    window, (ox, oy) = crop_window(image, task.mask.bbox, policy)
    local_mask = task.mask.bbox.translate(-ox, -oy)
    prompt = build_prompt(task.target, prompt_template)
    try:
        outputs = providers.inpaint(inpainter, window, local_mask, prompt, n, task.seed)
    except ProviderError as exc:
        raise ProviderError(f"task {task.task_id}: {exc}") from exc
    records = []
    window_rect = Rect(ox, oy, window.width, window.height)
    for i, output in enumerate(outputs):
        records.append(
            CandidateRecord(
                task=task,
                candidate_index=i,
                crop_window=window_rect,
                region_image=output.crop(local_mask),
            )
        )
    return records


def inject(base: RasterImage, record: CandidateRecord) -> RasterImage:
    """Paste an accepted candidate's region into the base image's mask."""
    if record.decision != "accepted":
        raise ValidationError(f"cannot inject a record with decision {record.decision!r}")
    if record.region_image is None:
        raise ValidationError("record carries no region image")
    mask = record.task.mask.bbox
    if (record.region_image.width, record.region_image.height) != (mask.w, mask.h):
        raise ValidationError(
            f"region is {record.region_image.width}x{record.region_image.height}, mask is {mask.w}x{mask.h}"
        )
    return base.paste(mask, record.region_image)
