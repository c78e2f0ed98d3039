"""Evaluation harness: frame anomaly identification as a VQA task and
score free-form answers three ways.

  word_match    the truth label appears in the response as a discrete
                word sequence (lowercase, split on non-alphanumerics)
  class_match   zero-shot ranking of the response against every object
                class embedding; correct when the truth ranks top-n
  broad_match   the same ranking over the 10 broad categories

The latter two optionally append a generated description of the
response before embedding ("response: description"); when the
description provider merely echoes its input, nothing is appended.
Detector outputs are scored with the class-label matching frame.
"""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from anomforge.detector import DetectionResult
from anomforge.errors import ProviderError, ValidationError
from anomforge.ontology import Ontology, embedding_text_for
from anomforge.providers import base as providers
from anomforge.providers.base import RasterImage

DEFAULT_PROMPT = (
    "Question: A context-dependent anomaly is an object that is anomalous "
    "based only on the context in which it is found. What object is the "
    "context-dependent anomaly in this scene? Short answer: "
)

METRICS = ("word_match", "class_match", "broad_match")

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class EvalConfig:
    prompt: str = DEFAULT_PROMPT
    metric: str = "word_match"
    top_n: int = 1
    use_descriptions: bool = True

    def __post_init__(self) -> None:
        if not self.prompt or not self.prompt.strip():
            raise ValidationError("evaluation prompt must be non-empty")
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.top_n not in (1, 3):
            raise ValidationError(f"top_n must be 1 or 3, got {self.top_n}")


@dataclass(frozen=True)
class EvalReport:
    metric: str
    total: int
    errors: int
    top1_accuracy: float
    top3_accuracy: float | None = None
    per_class: dict[str, dict[str, int]] = field(default_factory=dict)
    confusion: dict | None = None  # {"categories": [...], "matrix": [[...]]}

    def __post_init__(self) -> None:
        if self.top3_accuracy is not None and self.top3_accuracy < self.top1_accuracy - 1e-12:
            raise ValidationError("top-3 accuracy cannot be below top-1 accuracy")

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "total": self.total,
            "errors": self.errors,
            "top1_accuracy": self.top1_accuracy,
            "top3_accuracy": self.top3_accuracy,
            "per_class": self.per_class,
            "confusion": self.confusion,
        }

    def save_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def save_confusion_csv(self, path: Path | str) -> None:
        if self.confusion is None:
            raise ValidationError("report carries no confusion matrix")
        categories = self.confusion["categories"]
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["true\\predicted"] + list(categories))
            for label, row in zip(categories, self.confusion["matrix"]):
                writer.writerow([label] + list(row))


def build_prompt(override: str | None = None) -> str:
    """The question posed to VQA backends; override must be non-empty."""
    if override is None:
        return DEFAULT_PROMPT
    if not override.strip():
        raise ValidationError("prompt override must be non-empty")
    return override


def _tokens(text: str) -> list[str]:
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


def word_match(response: str, truth: str) -> bool:
    """True iff the truth label occurs in the response as whole words.

    Multi-word labels must appear as a contiguous token run, so
    "pineapple" does not match "apple" but "the fire hydrant is odd"
    matches "fire hydrant".
    """
    if not truth.strip():
        raise ValidationError("truth label must be non-empty")
    needle = _tokens(truth)
    haystack = _tokens(response)
    if not needle or len(needle) > len(haystack):
        return False
    return any(haystack[i : i + len(needle)] == needle for i in range(len(haystack) - len(needle) + 1))


def _augment(response: str, describer: providers.DescriptionProvider | None) -> str:
    """Append a generated description unless the provider just echoes."""
    response = response.strip()
    if describer is None:
        return response
    description = providers.describe(describer, response)
    if description.strip() == response:
        return response
    return embedding_text_for(response, description)


def _rank(
    response_emb: providers.EmbeddingVector,
    table: Mapping[str, providers.EmbeddingVector],
    top_n: int,
) -> list[str]:
    ranked = sorted(table, key=lambda label: (-response_emb.dot(table[label]), label))
    return ranked[:top_n]


def class_match(
    response: str,
    ontology: Ontology,
    embedder: providers.EmbeddingProvider,
    describer: providers.DescriptionProvider | None = None,
    top_n: int = 1,
    use_descriptions: bool = True,
    label_embs: Mapping[str, providers.EmbeddingVector] | None = None,
) -> list[str]:
    """Zero-shot rank object classes against a free-form response."""
    if not response.strip():
        raise ValidationError("cannot match an empty response")
    if label_embs is None:
        label_embs = {
            obj.label: providers.embed_text(embedder, embedding_text_for(obj.label, obj.description))
            for obj in ontology.objects
        }
    text = _augment(response, describer if use_descriptions else None)
    response_emb = providers.embed_text(embedder, text)
    return _rank(response_emb, label_embs, top_n)


def broad_match(
    response: str,
    ontology: Ontology,
    embedder: providers.EmbeddingProvider,
    describer: providers.DescriptionProvider | None = None,
    top_n: int = 1,
    use_descriptions: bool = True,
    category_embs: Mapping[str, providers.EmbeddingVector] | None = None,
) -> list[str]:
    """Zero-shot rank the 10 broad categories against a response."""
    if not response.strip():
        raise ValidationError("cannot match an empty response")
    if len(ontology.broad_categories) != 10:
        raise ValidationError("broad matching needs exactly 10 categories")
    if category_embs is None:
        category_embs = {
            cat.label: providers.embed_text(embedder, embedding_text_for(cat.label, cat.description))
            for cat in ontology.broad_categories
        }
    text = _augment(response, describer if use_descriptions else None)
    response_emb = providers.embed_text(embedder, text)
    return _rank(response_emb, category_embs, top_n)


@dataclass(frozen=True)
class EvalItem:
    """One accepted image to evaluate: identity, pixels, and truth label."""

    image_id: str
    image: RasterImage
    truth: str


def _accumulate(per_class: dict, truth: str, top1_hit: bool, top3_hit: bool) -> None:
    bucket = per_class.setdefault(truth, {"total": 0, "top1": 0, "top3": 0})
    bucket["total"] += 1
    bucket["top1"] += int(top1_hit)
    bucket["top3"] += int(top3_hit)


def evaluate(
    items: list[EvalItem],
    vqa: providers.VQAProvider,
    config: EvalConfig,
    ontology: Ontology,
    embedder: providers.EmbeddingProvider | None = None,
    describer: providers.DescriptionProvider | None = None,
    jobs: int = 1,
) -> EvalReport:
    """Query the VQA provider for every item and score per the metric.

    Items failing with a provider error are excluded from the accuracy
    denominator and reported in ``errors``.  Aggregation folds over
    items ordered by image id, so results never depend on completion
    order.
    """
    if not items:
        raise ValidationError("nothing to evaluate: no accepted images")
    if config.metric in ("class_match", "broad_match") and embedder is None:
        raise ValidationError(f"metric {config.metric} needs an embedding provider")

    ordered = sorted(items, key=lambda item: item.image_id)

    def ask(item: EvalItem) -> tuple[EvalItem, str | None]:
        try:
            return item, providers.vqa_answer(vqa, item.image, config.prompt)
        except ProviderError:
            return item, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            answers = list(pool.map(ask, ordered))
    else:
        answers = [ask(item) for item in ordered]

    label_embs = None
    category_embs = None
    if config.metric == "class_match":
        label_embs = {
            obj.label: providers.embed_text(embedder, embedding_text_for(obj.label, obj.description))
            for obj in ontology.objects
        }
    elif config.metric == "broad_match":
        category_embs = {
            cat.label: providers.embed_text(embedder, embedding_text_for(cat.label, cat.description))
            for cat in ontology.broad_categories
        }

    categories = ontology.category_labels
    cat_index = {label: i for i, label in enumerate(categories)}
    matrix = [[0] * len(categories) for _ in categories]

    total = 0
    errors = 0
    top1_hits = 0
    top3_hits = 0
    per_class: dict[str, dict[str, int]] = {}

    for item, response in answers:
        if response is None:
            errors += 1
            continue
        total += 1
        if config.metric == "word_match":
            hit = word_match(response, item.truth)
            top1, top3 = hit, hit
        elif config.metric == "class_match":
            ranked = class_match(
                response,
                ontology,
                embedder,
                describer,
                top_n=3,
                use_descriptions=config.use_descriptions,
                label_embs=label_embs,
            )
            top1 = bool(ranked) and ranked[0] == item.truth
            top3 = item.truth in ranked
        else:
            truth_cat = ontology.object(item.truth).broad_category
            ranked = broad_match(
                response,
                ontology,
                embedder,
                describer,
                top_n=3,
                use_descriptions=config.use_descriptions,
                category_embs=category_embs,
            )
            top1 = bool(ranked) and ranked[0] == truth_cat
            top3 = truth_cat in ranked
            matrix[cat_index[truth_cat]][cat_index[ranked[0]]] += 1
        top1_hits += int(top1)
        top3_hits += int(top3)
        _accumulate(per_class, item.truth, top1, top3)

    if total == 0:
        raise ValidationError("every evaluation item failed with a provider error")

    confusion = {"categories": list(categories), "matrix": matrix} if config.metric == "broad_match" else None
    report_top3 = (top3_hits / total) if config.metric != "word_match" and config.top_n == 3 else None
    return EvalReport(
        metric=config.metric,
        total=total,
        errors=errors,
        top1_accuracy=top1_hits / total,
        top3_accuracy=report_top3,
        per_class=per_class,
        confusion=confusion,
    )


def score_detector_results(
    results: Mapping[str, DetectionResult],
    truths: Mapping[str, str],
    top_n: int = 3,
) -> EvalReport:
    """Score detector rankings against manifest ground truth.

    An image counts as a top-n hit when its truth label appears among
    the predicted labels of the n lowest-scoring regions.  Every result
    must have a matching manifest truth.
    """
    if not results:
        raise ValidationError("no detection results to score")
    if top_n < 1:
        raise ValidationError(f"top_n must be >= 1, got {top_n}")
    unmatched = sorted(set(results) - set(truths))
    if unmatched:
        raise ValidationError(f"results reference images missing from the manifest: {unmatched[:5]}")

    total = 0
    top1_hits = 0
    topn_hits = 0
    per_class: dict[str, dict[str, int]] = {}
    for image_id in sorted(results):
        truth = truths[image_id]
        predicted = results[image_id].predicted_labels(top_n)
        top1 = bool(predicted) and predicted[0] == truth
        topn = truth in predicted
        total += 1
        top1_hits += int(top1)
        topn_hits += int(topn)
        _accumulate(per_class, truth, top1, topn)

    return EvalReport(
        metric="detector_class_match",
        total=total,
        errors=0,
        top1_accuracy=top1_hits / total,
        top3_accuracy=(topn_hits / total) if top_n >= 3 else None,
        per_class=per_class,
    )
