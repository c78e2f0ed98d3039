"""JSONL dataset manifest: one line per generated candidate, appended
atomically, carrying full provenance (task, seed, scores, decision,
stored image path).

Dataset directory layout:

    ds/
      manifest.jsonl          one line per candidate
      bases/<image_id>.png    untouched base images
      pending/<task>-<i>.png  candidate regions awaiting filtering
      images/<task>-<i>.png   final accepted anomalous images
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from anomforge.errors import StorageError, ValidationError
from anomforge.filtering import ACCEPTED, PENDING, REJECTED, SimilarityScoreSet
from anomforge.genpipe import CandidateRecord, GenerationTask, MaskSpec
from anomforge.ontology import Ontology
from anomforge.providers.base import Rect

MANIFEST_NAME = "manifest.jsonl"
BASES_DIR = "bases"
PENDING_DIR = "pending"
IMAGES_DIR = "images"


@dataclass(frozen=True)
class ManifestLine:
    """One candidate's ledger entry; paths are relative to the dataset dir."""

    task_id: str
    image_id: str
    scene: str
    mask: Rect
    size_class: str
    target: str
    seed: int
    candidate_index: int
    crop_window: Rect
    decision: str
    reason: str | None = None
    scores: dict | None = None  # {"k": int, "values": {label: score}}
    region_path: str | None = None
    image_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "image_id": self.image_id,
            "scene": self.scene,
            "mask": self.mask.to_dict(),
            "size_class": self.size_class,
            "target": self.target,
            "seed": self.seed,
            "candidate_index": self.candidate_index,
            "crop_window": self.crop_window.to_dict(),
            "decision": self.decision,
            "reason": self.reason,
            "scores": self.scores,
            "region_path": self.region_path,
            "image_path": self.image_path,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ManifestLine":
        try:
            return cls(
                task_id=data["task_id"],
                image_id=data["image_id"],
                scene=data["scene"],
                mask=Rect.from_dict(data["mask"]),
                size_class=data["size_class"],
                target=data["target"],
                seed=int(data["seed"]),
                candidate_index=int(data["candidate_index"]),
                crop_window=Rect.from_dict(data["crop_window"]),
                decision=data["decision"],
                reason=data.get("reason"),
                scores=data.get("scores"),
                region_path=data.get("region_path"),
                image_path=data.get("image_path"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed manifest line: {exc}") from exc

    @property
    def output_id(self) -> str:
        """Identity of this candidate's output image (task id + index)."""
        return f"{self.task_id}-{self.candidate_index}"

    def to_task(self) -> GenerationTask:
        return GenerationTask(
            task_id=self.task_id,
            image_id=self.image_id,
            scene=self.scene,
            mask=MaskSpec(image_id=self.image_id, bbox=self.mask, size_class=self.size_class),
            target=self.target,
            seed=self.seed,
        )


def line_from_record(
    record: CandidateRecord,
    region_path: str | None = None,
    image_path: str | None = None,
) -> ManifestLine:
    scores = None
    if record.scores is not None:
        scores = {
            "k": record.scores.k,
            "values": {label: record.scores.scores[label] for label in sorted(record.scores.scores)},
        }
    return ManifestLine(
        task_id=record.task.task_id,
        image_id=record.task.image_id,
        scene=record.task.scene,
        mask=record.task.mask.bbox,
        size_class=record.task.mask.size_class,
        target=record.task.target,
        seed=record.task.seed,
        candidate_index=record.candidate_index,
        crop_window=record.crop_window,
        decision=record.decision,
        reason=record.reason,
        scores=scores,
        region_path=region_path,
        image_path=image_path,
    )


def record_from_line(line: ManifestLine, region_image=None) -> CandidateRecord:
    scores = None
    if line.scores is not None:
        scores = SimilarityScoreSet(
            scores=dict(line.scores["values"]), target=line.target, k=int(line.scores["k"])
        )
    return CandidateRecord(
        task=line.to_task(),
        candidate_index=line.candidate_index,
        crop_window=line.crop_window,
        region_image=region_image,
        scores=scores,
        decision=line.decision,
        reason=line.reason,
    )


# ---------------------------------------------------------------------------
# File operations


def _encode(line: ManifestLine) -> str:
    return json.dumps(line.to_dict(), sort_keys=True, ensure_ascii=False)


def append_line(manifest_path: Path | str, line: ManifestLine) -> None:
    """Append one ledger line as a single flushed, fsynced write."""
    path = Path(manifest_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as handle:
            handle.write(_encode(line) + "\n")
            handle.flush()
            os.fsync(handle.fileno())
    except OSError as exc:
        raise StorageError(f"cannot append to manifest {path}: {exc}") from exc


def append_manifest(
    manifest_path: Path | str,
    record: CandidateRecord,
    final_image: str | None = None,
    ontology: Ontology | None = None,
) -> None:
    """Append a decided record; rejected records carry no image path.

    When an ontology is supplied, the line's label provenance is checked
    at write time: the target must be anomalous for the record's scene.
    """
    if record.decision == PENDING:
        raise ValidationError("cannot append a pending record; decide it first")
    if record.decision == ACCEPTED and not final_image:
        raise ValidationError("accepted records need a stored image path")
    if record.decision == REJECTED:
        final_image = None
    if ontology is not None:
        scene = ontology.scene(record.task.scene)
        if record.task.target not in scene.anomalous_objects:
            raise ValidationError(
                f"target {record.task.target!r} is not anomalous in scene {record.task.scene!r}"
            )
    append_line(manifest_path, line_from_record(record, image_path=final_image))


def read_manifest(manifest_path: Path | str) -> Iterator[ManifestLine]:
    path = Path(manifest_path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            for raw in handle:
                raw = raw.strip()
                if raw:
                    yield ManifestLine.from_dict(json.loads(raw))
    except OSError as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} holds invalid JSON: {exc}") from exc


def rewrite_manifest(manifest_path: Path | str, lines: list[ManifestLine]) -> None:
    """Atomically replace the manifest (write temp file, then rename)."""
    path = Path(manifest_path)
    tmp = path.with_suffix(".jsonl.tmp")
    try:
        with tmp.open("w", encoding="utf-8") as handle:
            for line in lines:
                handle.write(_encode(line) + "\n")
            handle.flush()
            os.fsync(handle.fileno())
        tmp.replace(path)
    except OSError as exc:
        raise StorageError(f"cannot rewrite manifest {path}: {exc}") from exc


def accepted_lines(manifest_path: Path | str) -> list[ManifestLine]:
    return [line for line in read_manifest(manifest_path) if line.decision == ACCEPTED]


def acceptance_stats(manifest_path: Path | str) -> tuple[int, int]:
    """(generated, accepted) counts over every candidate line."""
    generated = 0
    accepted = 0
    for line in read_manifest(manifest_path):
        generated += 1
        if line.decision == ACCEPTED:
            accepted += 1
    return generated, accepted


def truth_table(dataset_dir: Path | str) -> dict[str, str]:
    """Map accepted image content keys to their ground-truth labels.

    Feeds the echo-truth VQA mock so ceiling tests can run over any
    generated dataset.
    """
    from anomforge.providers.base import RasterImage

    root = Path(dataset_dir)
    table: dict[str, str] = {}
    for line in accepted_lines(root / MANIFEST_NAME):
        if not line.image_path:
            continue
        image = RasterImage.load_png(root / line.image_path)
        table[image.content_key()] = line.target
    return table
