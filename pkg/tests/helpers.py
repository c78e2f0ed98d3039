"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from anomforge.ontology import Ontology, load_builtin_ontology
from anomforge.providers.base import RasterImage, Rect, Region
from anomforge.providers.mock import FixtureRegionProvider, MockEmbeddingProvider

MOCK_SEED = 7
MOCK_DIM = 64

REGION_SLOTS = (Rect(4, 4, 24, 24), Rect(64, 4, 24, 24), Rect(4, 64, 24, 24), Rect(64, 64, 24, 24))


def builtin_ontology() -> Ontology:
    return load_builtin_ontology()


@dataclass(frozen=True)
class PlantedImage:
    image_id: str
    image: RasterImage
    regions: list[Region]
    planted_label: str
    planted_slot: int
    scene_label: str


def _stamp(image: RasterImage, rect: Rect, color: tuple[int, int, int], tag: int) -> RasterImage:
    """Fill a rectangle with `color`, marking one pixel with `tag` so
    equally-colored regions still differ at the byte level."""
    arr = image.to_array().copy()
    arr[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w] = color
    arr[rect.y, rect.x] = (tag % 256, 250, 249)
    return RasterImage.from_array(arr)


def build_planted_fixture(
    ontology: Ontology,
    embedder: MockEmbeddingProvider,
    n_images: int = 20,
    size: int = 96,
) -> list[PlantedImage]:
    """Images whose background carries one class and one planted region
    another, disjoint class; all four annotated regions are stamped so
    their pixel content (and hence their mock noise draw) is distinct.

    The planted slot rotates across images and each image pairs a
    different (scene, planted) label combination.
    """
    labels = ontology.object_labels
    images = []
    for i in range(n_images):
        scene_label = labels[(3 * i) % len(labels)]
        planted_label = labels[(3 * i + 7) % len(labels)]
        if planted_label == scene_label:
            planted_label = labels[(3 * i + 8) % len(labels)]
        slot = i % len(REGION_SLOTS)
        image = RasterImage.solid(size, size, embedder.color_of(scene_label))
        for j, rect in enumerate(REGION_SLOTS):
            color = embedder.color_of(planted_label if j == slot else scene_label)
            image = _stamp(image, rect, color, tag=i * 10 + j)
        regions = [Region(bbox=rect, confidence=0.9 - 0.01 * j) for j, rect in enumerate(REGION_SLOTS)]
        images.append(
            PlantedImage(
                image_id=f"planted-{i:02d}",
                image=image,
                regions=regions,
                planted_label=planted_label,
                planted_slot=slot,
                scene_label=scene_label,
            )
        )
    return images


def region_provider_for(fixture: list[PlantedImage]) -> FixtureRegionProvider:
    annotations = {
        item.image.content_key(): [{**r.bbox.to_dict(), "confidence": r.confidence} for r in item.regions]
        for item in fixture
    }
    return FixtureRegionProvider(annotations)


def write_gen_inputs(
    root: Path,
    ontology: Ontology,
    embedder: MockEmbeddingProvider,
    scene_backgrounds: dict[str, str] | None = None,
    size: int = 96,
    mask: dict | None = None,
) -> tuple[Path, Path]:
    """Write a base-image directory (+ scenes.json) and a masks file.

    Each scene gets one solid base image colored as a non-anomalous
    label for that scene.  Returns (images_dir, masks_path).
    """
    scene_backgrounds = scene_backgrounds or {"bathroom": "towel", "kitchen": "spoon"}
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    scenes = {}
    masks = []
    mask = mask or {"x": 8, "y": 8, "w": 24, "h": 24}
    for i, (scene, background) in enumerate(sorted(scene_backgrounds.items())):
        image_id = f"base{i}"
        RasterImage.solid(size, size, embedder.color_of(background)).save_png(images_dir / f"{image_id}.png")
        scenes[image_id] = scene
        masks.append({"image_id": image_id, "bbox": mask, "size_class": "small"})
        masks.append({"image_id": image_id, "bbox": {"x": 48, "y": 48, "w": 32, "h": 32}, "size_class": "large"})
    (images_dir / "scenes.json").write_text(json.dumps(scenes, sort_keys=True))
    masks_path = root / "masks.json"
    masks_path.write_text(json.dumps(masks))
    return images_dir, masks_path


def write_config(
    root: Path,
    ontology_path: Path,
    seed: int = MOCK_SEED,
    noise: float = 0.0,
    candidates: int = 3,
    per_pair: int = 2,
    extra_providers: dict | None = None,
    **overrides,
) -> Path:
    config = {
        "ontology": str(ontology_path),
        "seed": seed,
        "providers": {
            "embedding": {"mode": "mock", "dim": MOCK_DIM, "noise": noise},
            "vqa": {"mode": "mock", "kind": "fixed", "answer": "a mock answer"},
        },
        "generation": {"candidates": candidates, "per_pair": per_pair, "crop": {"factor": 2.0, "min_size": 48}},
    }
    if extra_providers:
        config["providers"].update(extra_providers)
    config.update(overrides)
    path = root / "config.json"
    path.write_text(json.dumps(config, indent=2))
    return path
