"""Consistency filter: keep a candidate only if its inpainted region still
looks like the requested object and not like a generation artifact.

Each candidate region is scored against every object label and every
taboo label by embedding similarity.  A candidate is accepted when the
target label ranks inside the top-k similarities and no taboo label
does.  Ties on score are broken by lexicographic label order so the
ranking never depends on insertion order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import math

from anomforge.errors import ProviderError, ValidationError
from anomforge.ontology import Ontology, embedding_text_for
from anomforge.providers import base as providers

DEFAULT_K = 5

ACCEPTED = "accepted"
REJECTED = "rejected"
PENDING = "pending"

REASON_TARGET = "target-not-top-k"


def reason_taboo(label: str) -> str:
    return f"taboo-in-top-k({label})"


@dataclass(frozen=True)
class SimilarityScoreSet:
    """Similarity of one candidate region to every label in the pool."""

    scores: dict[str, float]
    target: str
    k: int
    _ranked: tuple[str, ...] = field(repr=False, compare=False, default=())

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.target not in self.scores:
            raise ValidationError(f"target {self.target!r} missing from score set")
        for label, score in self.scores.items():
            if not math.isfinite(score):
                raise ValidationError(f"score for {label!r} is not finite")
        ranked = tuple(sorted(self.scores, key=lambda label: (-self.scores[label], label)))
        object.__setattr__(self, "_ranked", ranked)

    def ranked_labels(self) -> tuple[str, ...]:
        """All labels, best first, ties broken lexicographically."""
        return self._ranked


def score_candidate(
    region_emb: providers.EmbeddingVector,
    label_embs: Mapping[str, providers.EmbeddingVector],
    target: str,
    k: int,
) -> SimilarityScoreSet:
    """Dot the region embedding against every label embedding.

    Unit-norm inputs keep every score within [-1, 1]; values are clamped
    to absorb last-bit float drift.
    """
    if not label_embs:
        raise ValidationError("label embedding table is empty")
    if target not in label_embs:
        raise ValidationError(f"target {target!r} has no label embedding")
    scores = {}
    for label, emb in label_embs.items():
        scores[label] = max(-1.0, min(1.0, region_emb.dot(emb)))
    return SimilarityScoreSet(scores=scores, target=target, k=k)


def topk_indicator(scoreset: SimilarityScoreSet, label: str) -> bool:
    """True iff ``label`` is among the k best-scoring labels."""
    if label not in scoreset.scores:
        raise ValidationError(f"label {label!r} not present in score set")
    return label in scoreset.ranked_labels()[: scoreset.k]


@dataclass(frozen=True)
class Decision:
    decision: str  # accepted | rejected
    reason: str | None = None

    @property
    def accepted(self) -> bool:
        return self.decision == ACCEPTED


def accept(scoreset: SimilarityScoreSet, taboo: set[str] | frozenset[str]) -> Decision:
    """Apply the acceptance rule: target in top-k and no taboo in top-k.

    The target clause is checked first, so a candidate failing both
    reports ``target-not-top-k``; the decision itself is unaffected by
    the ordering.
    """
    missing = sorted(set(taboo) - set(scoreset.scores))
    if missing:
        raise ValidationError(f"taboo labels missing from score set: {missing}")
    if not topk_indicator(scoreset, scoreset.target):
        return Decision(REJECTED, REASON_TARGET)
    top = scoreset.ranked_labels()[: scoreset.k]
    for label in top:
        if label in taboo:
            return Decision(REJECTED, reason_taboo(label))
    return Decision(ACCEPTED)


def label_embeddings(embedder: providers.EmbeddingProvider, ontology: Ontology) -> dict[str, providers.EmbeddingVector]:
    """Embed every object and taboo label once, as "label: description"."""
    table: dict[str, providers.EmbeddingVector] = {}
    for obj in ontology.objects:
        table[obj.label] = providers.embed_text(embedder, embedding_text_for(obj.label, obj.description))
    for label in sorted(ontology.taboo):
        table[label] = providers.embed_text(embedder, embedding_text_for(label, ontology.taboo[label]))
    return table


def filter_dataset(
    records: list,
    embedder: providers.EmbeddingProvider,
    ontology: Ontology,
    k: int = DEFAULT_K,
    jobs: int = 1,
) -> list:
    """Score and decide every pending candidate record, in input order.

    Label embeddings are computed once and reused.  A provider failure on
    one record rejects that record with a provider-error reason and the
    rest proceed.  Returns the same records, updated.
    """
    taboo = frozenset(ontology.taboo)
    labels = label_embeddings(embedder, ontology)

    def decide(record):
        if record.decision != PENDING:
            return record
        try:
            region_emb = providers.embed_image(embedder, record.region_image)
            scoreset = score_candidate(region_emb, labels, record.task.target, k)
            verdict = accept(scoreset, taboo)
        except (ProviderError, ValidationError) as exc:
            return record.decided(scores=None, decision=REJECTED, reason=f"provider-error({exc})")
        return record.decided(scores=scoreset, decision=verdict.decision, reason=verdict.reason)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(decide, records))
    return [decide(record) for record in records]
