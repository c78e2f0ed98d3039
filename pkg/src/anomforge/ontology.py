"""Object/scene vocabulary: which objects are anomalous where, at what size.

The ontology is a single JSON document with four arrays:

    {
      "objects": [
        {"label": "apple", "description": "a round fruit ...",
         "size_class": "small", "broad_category": "food"},
        ...
      ],
      "scenes": [
        {"name": "bathroom", "anomalous_objects": ["apple", ...]},
        ...
      ],
      "taboo": [
        {"label": "person", "description": "a human being ..."},
        ...                                  # bare strings also accepted
      ],
      "broad_categories": [
        {"label": "food", "description": "something edible ..."},
        ...                                  # exactly 10 entries
      ]
    }

Values are immutable after load and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from anomforge.errors import ValidationError

SIZE_CLASSES = ("small", "medium", "large")

DEFAULT_TABOO = {
    "person": "a human being shown in whole",
    "human face": "the front of a human head with eyes, nose, and mouth",
    "human arm": "a human upper limb from shoulder to hand",
    "human leg": "a human lower limb from hip to foot",
    "human hand": "a human hand with fingers and a palm",
}


@dataclass(frozen=True)
class ObjectClass:
    label: str
    description: str
    size_class: str
    broad_category: str


@dataclass(frozen=True)
class SceneType:
    name: str
    anomalous_objects: frozenset[str]


@dataclass(frozen=True)
class BroadCategory:
    label: str
    description: str


@dataclass(frozen=True)
class Ontology:
    objects: tuple[ObjectClass, ...]
    scenes: tuple[SceneType, ...]
    taboo: dict[str, str]  # taboo label -> description
    broad_categories: tuple[BroadCategory, ...]
    _by_label: dict[str, ObjectClass] = field(repr=False, compare=False, default_factory=dict)
    _by_scene: dict[str, SceneType] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_label", {o.label: o for o in self.objects})
        object.__setattr__(self, "_by_scene", {s.name: s for s in self.scenes})

    # -- lookups -------------------------------------------------------------

    @property
    def object_labels(self) -> list[str]:
        return sorted(self._by_label)

    @property
    def scene_names(self) -> list[str]:
        return sorted(self._by_scene)

    @property
    def category_labels(self) -> list[str]:
        return [c.label for c in self.broad_categories]

    def object(self, label: str) -> ObjectClass:
        try:
            return self._by_label[label]
        except KeyError:
            raise ValidationError(f"unknown object label {label!r}") from None

    def scene(self, name: str) -> SceneType:
        try:
            return self._by_scene[name]
        except KeyError:
            raise ValidationError(f"unknown scene {name!r}") from None

    def category(self, label: str) -> BroadCategory:
        for cat in self.broad_categories:
            if cat.label == label:
                return cat
        raise ValidationError(f"unknown broad category {label!r}")


def anomalous_objects_for(ontology: Ontology, scene: str, size: str) -> list[ObjectClass]:
    """Objects anomalous in ``scene`` whose size class is ``size``.

    Returned in lexicographic label order so downstream sampling is
    reproducible.
    """
    if size not in SIZE_CLASSES:
        raise ValidationError(f"unknown size class {size!r}; expected one of {SIZE_CLASSES}")
    scene_type = ontology.scene(scene)
    picks = [
        ontology.object(label)
        for label in sorted(scene_type.anomalous_objects)
        if ontology.object(label).size_class == size
    ]
    return picks


def description_of(ontology: Ontology, label: str) -> str:
    """The stored description for an object label, verbatim."""
    return ontology.object(label).description


def embedding_text_for(label: str, description: str) -> str:
    """Canonical "label: description" string used for all text embeddings."""
    return f"{label}: {description}"


# ---------------------------------------------------------------------------
# Loading / saving


def _parse_taboo(raw: object) -> dict[str, str]:
    if raw is None:
        return dict(DEFAULT_TABOO)
    if not isinstance(raw, list):
        raise ValidationError("'taboo' must be a list of labels or {label, description} objects")
    taboo: dict[str, str] = {}
    for entry in raw:
        if isinstance(entry, str):
            label, desc = entry, entry
        elif isinstance(entry, dict) and "label" in entry:
            label = str(entry["label"])
            desc = str(entry.get("description") or label)
        else:
            raise ValidationError(f"malformed taboo entry {entry!r}")
        if not label.strip():
            raise ValidationError("taboo labels must be non-empty")
        taboo[label] = desc
    return taboo


def ontology_from_dict(data: dict) -> Ontology:
    """Validate a parsed ontology document; raises on the first violated invariant."""
    if not isinstance(data, dict):
        raise ValidationError("ontology document must be a JSON object")

    raw_objects = data.get("objects")
    if not isinstance(raw_objects, list) or not raw_objects:
        raise ValidationError("'objects' must be a non-empty list")

    raw_categories = data.get("broad_categories")
    if not isinstance(raw_categories, list):
        raise ValidationError("'broad_categories' must be a list")
    categories: list[BroadCategory] = []
    for entry in raw_categories:
        if isinstance(entry, str):
            categories.append(BroadCategory(label=entry, description=entry))
            continue
        if not isinstance(entry, dict) or not str(entry.get("label", "")).strip():
            raise ValidationError(f"malformed broad category entry {entry!r}")
        categories.append(
            BroadCategory(label=str(entry["label"]), description=str(entry.get("description") or entry["label"]))
        )
    if len(categories) != 10:
        raise ValidationError(f"exactly 10 broad categories required, got {len(categories)}")
    category_labels = [c.label for c in categories]
    if len(set(category_labels)) != 10:
        raise ValidationError("broad category labels must be unique")

    objects: list[ObjectClass] = []
    seen_labels: set[str] = set()
    for entry in raw_objects:
        if not isinstance(entry, dict):
            raise ValidationError(f"malformed object entry {entry!r}")
        label = str(entry.get("label", ""))
        if not label.strip():
            raise ValidationError("object labels must be non-empty")
        if label in seen_labels:
            raise ValidationError(f"duplicate object label {label!r}")
        seen_labels.add(label)
        description = str(entry.get("description", ""))
        if not description.strip():
            raise ValidationError(f"object {label!r} is missing a description")
        size_class = entry.get("size_class")
        if size_class not in SIZE_CLASSES:
            raise ValidationError(f"object {label!r} has invalid size_class {size_class!r}")
        broad = entry.get("broad_category")
        if broad not in category_labels:
            raise ValidationError(f"object {label!r} has unknown broad_category {broad!r}")
        objects.append(
            ObjectClass(label=label, description=description, size_class=size_class, broad_category=broad)
        )

    raw_scenes = data.get("scenes")
    if not isinstance(raw_scenes, list):
        raise ValidationError("'scenes' must be a list")
    scenes: list[SceneType] = []
    seen_scenes: set[str] = set()
    for entry in raw_scenes:
        if not isinstance(entry, dict) or not str(entry.get("name", "")).strip():
            raise ValidationError(f"malformed scene entry {entry!r}")
        name = str(entry["name"])
        if name in seen_scenes:
            raise ValidationError(f"duplicate scene {name!r}")
        seen_scenes.add(name)
        members = entry.get("anomalous_objects")
        if not isinstance(members, list) or not members:
            raise ValidationError(f"scene {name!r} must list at least one anomalous object")
        for member in members:
            if member not in seen_labels:
                raise ValidationError(f"scene {name!r} references unknown object {member!r}")
        scenes.append(SceneType(name=name, anomalous_objects=frozenset(members)))

    taboo = _parse_taboo(data.get("taboo"))
    overlap = sorted(set(taboo) & seen_labels)
    if overlap:
        raise ValidationError(f"taboo labels overlap anomaly targets: {overlap}")

    return Ontology(
        objects=tuple(sorted(objects, key=lambda o: o.label)),
        scenes=tuple(sorted(scenes, key=lambda s: s.name)),
        taboo=taboo,
        broad_categories=tuple(categories),
    )


def ontology_to_dict(ontology: Ontology) -> dict:
    """Serializable form; round-trips through ``ontology_from_dict``."""
    return {
        "objects": [
            {
                "label": o.label,
                "description": o.description,
                "size_class": o.size_class,
                "broad_category": o.broad_category,
            }
            for o in ontology.objects
        ],
        "scenes": [
            {"name": s.name, "anomalous_objects": sorted(s.anomalous_objects)} for s in ontology.scenes
        ],
        "taboo": [{"label": label, "description": desc} for label, desc in sorted(ontology.taboo.items())],
        "broad_categories": [
            {"label": c.label, "description": c.description} for c in ontology.broad_categories
        ],
    }


def load_ontology(path: Path | str) -> Ontology:
    """Load and validate an ontology JSON file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read ontology file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"ontology file {path} is not valid JSON: {exc}") from exc
    return ontology_from_dict(data)


def save_ontology(ontology: Ontology, path: Path | str) -> None:
    Path(path).write_text(json.dumps(ontology_to_dict(ontology), indent=2) + "\n", encoding="utf-8")


def builtin_ontology_path() -> Path:
    """Path of the ontology shipped with the package (8 scenes, 48 objects)."""
    with resources.as_file(resources.files("anomforge").joinpath("data/ontology.json")) as handle:
        return Path(handle)


def load_builtin_ontology() -> Ontology:
    return load_ontology(builtin_ontology_path())
