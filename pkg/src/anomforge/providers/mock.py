"""Deterministic in-process providers used for tests and desk-scale runs.

The mocks share one convention: every ontology object label owns a
unit "class vector" and a distinct RGB fill color.  The inpainting mock
paints a masked region with the target's color; the embedding mock
recovers the label from an image's dominant color and returns the class
vector, optionally perturbed by seeded Gaussian noise and renormalized.
With zero noise, embedding a generated region and embedding the
target's "label: description" text give the same vector exactly, which
pins the filter's ceiling behavior.

Class vectors mix a per-category anchor with a per-label component
(mix weight ``CATEGORY_MIX``) so that labels sit nearest their own
broad category's text vector; this is what makes broad-category
matching solvable at 100% by an oracle responder.  All randomness is
derived per input, never from shared generator state, so providers are
pure and safe under concurrency.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from anomforge.errors import ProviderError, ValidationError
from anomforge.ontology import Ontology, embedding_text_for
from anomforge.providers.base import EmbeddingVector, RasterImage, Rect, Region
from anomforge.seeds import derive_seed

CATEGORY_MIX = 0.55  # weight of the category anchor inside each class vector
TABOO_SUBSPACE = 8  # trailing coordinates reserved for taboo directions


def _unit_vector(seed: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def _object_subspace_vector(seed: int, dim: int) -> np.ndarray:
    """Unit vector confined to the leading dim - TABOO_SUBSPACE coordinates."""
    vec = np.zeros(dim)
    head = _unit_vector(seed, dim - TABOO_SUBSPACE)
    vec[: dim - TABOO_SUBSPACE] = head
    return vec


def _taboo_subspace_vector(seed: int, dim: int) -> np.ndarray:
    """Unit vector confined to the trailing TABOO_SUBSPACE coordinates.

    Keeping taboo directions orthogonal to every object direction means a
    clean generation never scores a taboo label above an object label,
    while noisy generations pick up taboo components and can be rejected,
    mirroring how limb artifacts behave in the real embedding space.
    """
    vec = np.zeros(dim)
    tail = _unit_vector(seed, TABOO_SUBSPACE)
    vec[dim - TABOO_SUBSPACE :] = tail
    return vec


def label_color(index: int) -> tuple[int, int, int]:
    """Injective (for index < 256) RGB color keyed to a label's ordinal."""
    return (index % 256, (171 + 37 * index) % 256, (53 + 101 * index) % 256)


def dominant_color(image: RasterImage) -> tuple[int, int, int]:
    """Most frequent pixel color; ties broken by smallest RGB triple."""
    arr = image.to_array().reshape(-1, 3)
    counts = Counter(map(tuple, arr.tolist()))
    best = max(counts.items(), key=lambda kv: (kv[1], tuple(-c for c in kv[0])))
    return best[0]


class MockEmbeddingProvider:
    """Seeded stand-in for a joint visual-language embedding model.

    Text resolution order: object label, category label, taboo label,
    each matched against the bare label, "label: description", or the
    description alone; anything unresolved hashes to a reproducible
    random direction.  Images resolve through the label color table.

    ``noise`` is the epsilon dial: image embeddings become
    normalize(class_vector + noise * g) with g seeded by the image
    bytes, so difficulty is adjustable without losing determinism.
    ``image_label_override`` forces every image to embed as the given
    label (adversarial configurations for filter tests).
    """

    def __init__(
        self,
        ontology: Ontology,
        seed: int = 0,
        dim: int = 64,
        noise: float = 0.0,
        image_label_override: str | None = None,
    ) -> None:
        if dim < TABOO_SUBSPACE + 2:
            raise ValidationError(f"mock embedding dim must be >= {TABOO_SUBSPACE + 2}, got {dim}")
        if noise < 0:
            raise ValidationError(f"mock noise must be >= 0, got {noise}")
        self.ontology = ontology
        self.seed = seed
        self.dim = dim
        self.noise = noise
        self.image_label_override = image_label_override

        self._category_vectors: dict[str, np.ndarray] = {}
        for cat in ontology.broad_categories:
            self._category_vectors[cat.label] = _object_subspace_vector(
                derive_seed(seed, "category", cat.label), dim
            )

        self._label_vectors: dict[str, np.ndarray] = {}
        for obj in ontology.objects:
            own = _object_subspace_vector(derive_seed(seed, "label", obj.label), dim)
            anchor = self._category_vectors[obj.broad_category]
            mixed = CATEGORY_MIX * anchor + math.sqrt(1.0 - CATEGORY_MIX**2) * own
            self._label_vectors[obj.label] = mixed / np.linalg.norm(mixed)
        for taboo_label in ontology.taboo:
            self._label_vectors[taboo_label] = _taboo_subspace_vector(derive_seed(seed, "label", taboo_label), dim)

        self._colors = {
            label: label_color(i) for i, label in enumerate(sorted(obj.label for obj in ontology.objects))
        }
        self._color_to_label = {color: label for label, color in self._colors.items()}

        # canonical text -> vector
        self._text_table: dict[str, np.ndarray] = {}
        for obj in ontology.objects:
            vec = self._label_vectors[obj.label]
            self._text_table[obj.label] = vec
            self._text_table[embedding_text_for(obj.label, obj.description)] = vec
            self._text_table[obj.description] = vec
        for label, desc in ontology.taboo.items():
            vec = self._label_vectors[label]
            self._text_table.setdefault(label, vec)
            self._text_table.setdefault(embedding_text_for(label, desc), vec)
            self._text_table.setdefault(desc, vec)
        for cat in ontology.broad_categories:
            vec = self._category_vectors[cat.label]
            self._text_table.setdefault(cat.label, vec)
            self._text_table.setdefault(embedding_text_for(cat.label, cat.description), vec)
            self._text_table.setdefault(cat.description, vec)

    # -- lookups used by fixtures and tests ----------------------------------

    def class_vector(self, label: str) -> np.ndarray:
        try:
            return self._label_vectors[label]
        except KeyError:
            raise ValidationError(f"no mock class vector for label {label!r}") from None

    def category_vector(self, label: str) -> np.ndarray:
        try:
            return self._category_vectors[label]
        except KeyError:
            raise ValidationError(f"no mock category vector for {label!r}") from None

    def color_of(self, label: str) -> tuple[int, int, int]:
        try:
            return self._colors[label]
        except KeyError:
            raise ValidationError(f"no mock fill color for label {label!r}") from None

    # -- provider surface -----------------------------------------------------

    def embed_text(self, text: str) -> EmbeddingVector:
        key = text.strip()
        if not key:
            raise ValidationError("cannot embed empty text")
        vec = self._text_table.get(key)
        if vec is None:
            vec = _unit_vector(derive_seed(self.seed, "text", key), self.dim)
        return EmbeddingVector.of(vec)

    def embed_image(self, image: RasterImage) -> EmbeddingVector:
        if self.image_label_override is not None:
            base = self._label_vectors.get(self.image_label_override)
            if base is None:
                raise ProviderError(f"override label {self.image_label_override!r} has no mock vector")
        else:
            base = None
            label = self._color_to_label.get(dominant_color(image))
            if label is not None:
                base = self._label_vectors[label]
        if base is None:
            vec = _unit_vector(derive_seed(self.seed, "image", image.content_key()), self.dim)
            return EmbeddingVector.of(vec)
        if self.noise > 0.0:
            g = _unit_vector(derive_seed(self.seed, "image-noise", image.content_key()), self.dim)
            mixed = base + self.noise * g
            base = mixed / np.linalg.norm(mixed)
        return EmbeddingVector.of(base)


class MockInpaintingProvider:
    """Fills the masked rectangle with the target label's keyed color.

    The prompt is scanned for the longest known label; candidate i gets
    one corner pixel stamped with its index so the n outputs differ
    while the dominant color (and thus the decoded label) is preserved.
    Pixels outside the mask are untouched.
    """

    def __init__(self, ontology: Ontology) -> None:
        self.ontology = ontology
        self._colors = {
            label: label_color(i) for i, label in enumerate(sorted(o.label for o in ontology.objects))
        }

    def _label_from_prompt(self, prompt: str) -> str:
        lowered = prompt.lower()
        matches = [label for label in self._colors if label in lowered]
        if not matches:
            raise ProviderError(f"mock inpainter found no known object label in prompt {prompt!r}")
        return max(matches, key=len)

    def inpaint(self, image: RasterImage, mask: Rect, prompt: str, n: int, seed: int) -> list[RasterImage]:
        label = self._label_from_prompt(prompt)
        color = self._colors[label]
        results = []
        for i in range(n):
            arr = image.to_array().copy()
            arr[mask.y : mask.y + mask.h, mask.x : mask.x + mask.w] = color
            arr[mask.y, mask.x] = ((seed + i) % 256, 255, 254)
            results.append(RasterImage.from_array(arr))
        return results


class FixtureRegionProvider:
    """Serves hand-annotated boxes, keyed by exact image content.

    The annotation document maps an image's content key (see
    ``RasterImage.content_key``) to a list of ``{x, y, w, h,
    confidence}`` boxes.  Zero-area boxes are rejected at load time.
    """

    def __init__(self, annotations: dict[str, list[dict]]) -> None:
        self._regions: dict[str, list[Region]] = {}
        for key, boxes in annotations.items():
            parsed = []
            for box in boxes:
                bbox = Rect.from_dict(box)  # raises on zero-area boxes
                parsed.append(Region(bbox=bbox, confidence=float(box.get("confidence", 1.0))))
            self._regions[key] = parsed

    @classmethod
    def from_file(cls, path) -> "FixtureRegionProvider":
        import json
        from pathlib import Path

        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValidationError("region annotation file must map content keys to box lists")
        return cls(data)

    def propose_regions(self, image: RasterImage) -> list[Region]:
        regions = self._regions.get(image.content_key())
        if not regions:
            raise ProviderError("no annotated regions for this image")
        return list(regions)


class EchoTruthVQAProvider:
    """Answers with the ground-truth label carried on a side channel.

    Upper-bound responder: the truth table maps image content keys to
    labels, so accuracy ceilings can be measured without a real model.
    """

    def __init__(self, truth: dict[str, str]) -> None:
        self._truth = dict(truth)

    def answer(self, image: RasterImage, prompt: str) -> str:
        try:
            return self._truth[image.content_key()]
        except KeyError:
            raise ProviderError("echo-truth mock has no label for this image") from None


class FixedAnswerVQAProvider:
    """Returns one configured string for every image."""

    def __init__(self, answer: str) -> None:
        self._answer = answer

    def answer(self, image: RasterImage, prompt: str) -> str:
        return self._answer


class MockDescriptionProvider:
    """Serves ontology descriptions; unknown phrases echo back unchanged."""

    def __init__(self, ontology: Ontology) -> None:
        self._table = {obj.label: obj.description for obj in ontology.objects}
        for cat in ontology.broad_categories:
            self._table.setdefault(cat.label, cat.description)
        for label, desc in ontology.taboo.items():
            self._table.setdefault(label, desc)

    def describe(self, text: str) -> str:
        key = text.strip()
        if not key:
            raise ValidationError("cannot describe empty text")
        return self._table.get(key, key)
