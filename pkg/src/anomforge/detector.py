"""Similarity-based contextual anomaly detector.

Three similarity functions score how well each proposed region fits the
rest of the image:

  irv  image-region visual:    dot(image embedding, region embedding)
  rrv  region-region visual:   mean over all regions r' of dot(r, r'),
                               the region itself included
  kb   knowledge-based:        retrieve the top-k most similar class
                               descriptions per region, concatenate them
                               (descending similarity, newline-separated),
                               embed the text, then average pairwise dots
                               of those description embeddings, self
                               included

Scores from the selected functions are standardized across regions and
averaged; the region with the lowest combined score is called the
anomaly and classified by nearest class embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from anomforge.errors import ValidationError
from anomforge.ontology import Ontology, embedding_text_for
from anomforge.providers import base as providers
from anomforge.providers.base import EmbeddingVector, RasterImage, Region

FUNCTION_SETS = {
    "all": ("irv", "rrv", "kb"),
    "visual": ("irv", "rrv"),
    "knowledge": ("kb",),
}

DEFAULT_KB_DEPTH = 5


@dataclass(frozen=True)
class RegionScores:
    region: Region
    irv: float | None
    rrv: float | None
    kb: float | None
    combined: float

    def __post_init__(self) -> None:
        if self.irv is None and self.rrv is None and self.kb is None:
            raise ValidationError("a region must carry at least one similarity score")


@dataclass(frozen=True)
class DetectionResult:
    """Regions ranked ascending by combined score (lowest = most anomalous)."""

    ranked: tuple[tuple[Region, str, float], ...]
    function_set: str

    def __post_init__(self) -> None:
        if not self.ranked:
            raise ValidationError("detection produced no ranked regions")
        scores = [entry[2] for entry in self.ranked]
        if any(b < a - 1e-12 for a, b in zip(scores, scores[1:])):
            raise ValidationError("ranked scores must be non-decreasing")

    def predicted_labels(self, top_n: int) -> list[str]:
        return [label for _, label, _ in self.ranked[:top_n]]


def irv_scores(image_emb: EmbeddingVector, region_embs: list[EmbeddingVector]) -> list[float]:
    """Image-to-region similarity for every region."""
    if not region_embs:
        raise ValidationError("no region embeddings")
    return [image_emb.dot(emb) for emb in region_embs]


def rrv_scores(region_embs: list[EmbeddingVector]) -> list[float]:
    """Mean region-to-region similarity, the region itself included."""
    if not region_embs:
        raise ValidationError("no region embeddings")
    mat = np.stack([emb.values for emb in region_embs])
    dots = mat @ mat.T
    return [float(v) for v in dots.mean(axis=1)]


def retrieve_descriptions(
    region_emb: EmbeddingVector,
    class_embs: Mapping[str, EmbeddingVector],
    descriptions: Mapping[str, str],
    k_kb: int,
) -> str:
    """Top-k class descriptions for a region, concatenated for embedding.

    Classes rank by dot(region, class) with ties broken lexicographically;
    descriptions join by single newlines in descending-similarity order.
    """
    if k_kb < 1:
        raise ValidationError(f"k_kb must be >= 1, got {k_kb}")
    if not class_embs:
        raise ValidationError("class embedding table is empty")
    scored = sorted(class_embs, key=lambda label: (-region_emb.dot(class_embs[label]), label))
    return "\n".join(descriptions[label] for label in scored[:k_kb])


def kb_scores(
    region_embs: list[EmbeddingVector],
    class_embs: Mapping[str, EmbeddingVector],
    descriptions: Mapping[str, str],
    k_kb: int,
    embed_text: Callable[[str], EmbeddingVector],
) -> list[float]:
    """Knowledge similarity: how close each region's retrieved context is
    to every other region's, self included."""
    if not region_embs:
        raise ValidationError("no region embeddings")
    texts = [retrieve_descriptions(emb, class_embs, descriptions, k_kb) for emb in region_embs]
    desc_embs = [embed_text(text) for text in texts]
    mat = np.stack([emb.values for emb in desc_embs])
    dots = mat @ mat.T
    return [float(v) for v in dots.mean(axis=1)]


def _standardize(values: list[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    std = arr.std()
    if std == 0.0:
        return np.zeros_like(arr)
    return (arr - arr.mean()) / std


def combine(scores: Mapping[str, list[float]], function_set: str) -> list[float]:
    """Fuse per-function scores: standardize each across regions, then mean.

    A function with zero variance contributes 0 everywhere, so a
    single-region image or a constant function cannot blow up the fuse.
    """
    if function_set not in FUNCTION_SETS:
        raise ValidationError(f"unknown function set {function_set!r}; expected one of {sorted(FUNCTION_SETS)}")
    selected = FUNCTION_SETS[function_set]
    missing = [name for name in selected if name not in scores]
    if missing:
        raise ValidationError(f"function set {function_set!r} needs scores for {missing}")
    lengths = {len(scores[name]) for name in selected}
    if len(lengths) != 1:
        raise ValidationError(f"score lists disagree on region count: {sorted(lengths)}")
    stacked = np.stack([_standardize(scores[name]) for name in selected])
    return [float(v) for v in stacked.mean(axis=0)]


def classify_region(region_emb: EmbeddingVector, class_embs: Mapping[str, EmbeddingVector]) -> str:
    """Nearest class label by embedding similarity, ties lexicographic."""
    if not class_embs:
        raise ValidationError("class embedding table is empty")
    return min(class_embs, key=lambda label: (-region_emb.dot(class_embs[label]), label))


def class_embeddings(embedder: providers.EmbeddingProvider, ontology: Ontology) -> dict[str, EmbeddingVector]:
    """Embed every object class once, as "label: description"."""
    return {
        obj.label: providers.embed_text(embedder, embedding_text_for(obj.label, obj.description))
        for obj in ontology.objects
    }


def detect(
    image: RasterImage,
    embedder: providers.EmbeddingProvider,
    region_provider: providers.RegionProvider,
    ontology: Ontology,
    function_set: str = "all",
    top_n: int = 3,
    k_kb: int = DEFAULT_KB_DEPTH,
    class_embs: Mapping[str, EmbeddingVector] | None = None,
) -> DetectionResult:
    """Find the most contextually anomalous regions of one image.

    Precomputed ``class_embs`` may be passed when detecting over many
    images with the same ontology.
    """
    if top_n < 1:
        raise ValidationError(f"top_n must be >= 1, got {top_n}")
    regions = providers.propose_regions(region_provider, image)
    region_embs = [providers.embed_image(embedder, image.crop(region.bbox)) for region in regions]
    if class_embs is None:
        class_embs = class_embeddings(embedder, ontology)
    descriptions = {obj.label: obj.description for obj in ontology.objects}

    scores: dict[str, list[float]] = {}
    selected = FUNCTION_SETS.get(function_set)
    if selected is None:
        raise ValidationError(f"unknown function set {function_set!r}; expected one of {sorted(FUNCTION_SETS)}")
    if "irv" in selected:
        image_emb = providers.embed_image(embedder, image)
        scores["irv"] = irv_scores(image_emb, region_embs)
    if "rrv" in selected:
        scores["rrv"] = rrv_scores(region_embs)
    if "kb" in selected:
        scores["kb"] = kb_scores(
            region_embs,
            class_embs,
            descriptions,
            k_kb,
            lambda text: providers.embed_text(embedder, text),
        )

    combined = combine(scores, function_set)
    order = sorted(range(len(regions)), key=lambda i: (combined[i], i))
    ranked = tuple(
        (regions[i], classify_region(region_embs[i], class_embs), combined[i]) for i in order[:top_n]
    )
    return DetectionResult(ranked=ranked, function_set=function_set)
