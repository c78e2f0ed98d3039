"""Pipeline configuration: one JSON document, env-var escape hatches.

    {
      "ontology": "ontology.json",
      "seed": 7,
      "jobs": 1,
      "providers": {
        "embedding":   {"mode": "mock", "dim": 64, "noise": 0.0},
        "inpainting":  {"mode": "mock"},
        "region":      {"mode": "mock", "annotations": "regions.json"},
        "vqa":         {"mode": "mock", "kind": "fixed", "answer": "a chair"},
        "description": {"mode": "mock"}
      },
      "generation": {"candidates": 10, "per_pair": 4,
                     "crop": {"factor": 2.0, "min_size": 256},
                     "prompt_template": "a photo of a {label}"},
      "filter": {"k": 5},
      "detector": {"function_set": "all", "k_kb": 5, "top_n": 3},
      "eval": {"metric": "word_match", "top_n": 1,
               "use_descriptions": true, "prompt": null}
    }

Remote providers use {"mode": "remote", "url": ..., "dim": ...,
"trace": ...}; setting ANOMFORGE_EMBED_URL / _INPAINT_URL / _REGION_URL
/ _VQA_URL / _DESCRIBE_URL switches the matching provider to remote
regardless of the file.  Relative paths resolve against the config
file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from anomforge.errors import ValidationError
from anomforge.evalharness import METRICS, EvalConfig, build_prompt
from anomforge.detector import DEFAULT_KB_DEPTH, FUNCTION_SETS
from anomforge.filtering import DEFAULT_K
from anomforge.genpipe import DEFAULT_CANDIDATES, DEFAULT_PER_PAIR, DEFAULT_PROMPT_TEMPLATE, CropPolicy
from anomforge.ontology import Ontology, load_ontology
from anomforge.providers.mock import (
    EchoTruthVQAProvider,
    FixedAnswerVQAProvider,
    FixtureRegionProvider,
    MockDescriptionProvider,
    MockEmbeddingProvider,
    MockInpaintingProvider,
)
from anomforge.providers.remote import (
    RemoteDescriptionProvider,
    RemoteEmbeddingProvider,
    RemoteInpaintingProvider,
    RemoteRegionProvider,
    RemoteVQAProvider,
    env_url,
)

PROVIDER_KINDS = ("embedding", "inpainting", "region", "vqa", "description")


@dataclass(frozen=True)
class ProviderSpec:
    kind: str
    mode: str  # mock | remote
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("mock", "remote"):
            raise ValidationError(f"providers.{self.kind}.mode: expected 'mock' or 'remote', got {self.mode!r}")
        if self.mode == "remote" and not self.options.get("url"):
            raise ValidationError(f"providers.{self.kind}.url: required for remote mode")


@dataclass(frozen=True)
class GenerationSettings:
    candidates: int = DEFAULT_CANDIDATES
    per_pair: int = DEFAULT_PER_PAIR
    crop: CropPolicy = field(default_factory=CropPolicy)
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    def __post_init__(self) -> None:
        if self.candidates < 1:
            raise ValidationError(f"generation.candidates: must be >= 1, got {self.candidates}")
        if self.per_pair < 0:
            raise ValidationError(f"generation.per_pair: must be >= 0, got {self.per_pair}")


@dataclass(frozen=True)
class DetectorSettings:
    function_set: str = "all"
    k_kb: int = DEFAULT_KB_DEPTH
    top_n: int = 3

    def __post_init__(self) -> None:
        if self.function_set not in FUNCTION_SETS:
            raise ValidationError(
                f"detector.function_set: expected one of {sorted(FUNCTION_SETS)}, got {self.function_set!r}"
            )
        if self.k_kb < 1:
            raise ValidationError(f"detector.k_kb: must be >= 1, got {self.k_kb}")
        if self.top_n < 1:
            raise ValidationError(f"detector.top_n: must be >= 1, got {self.top_n}")


@dataclass(frozen=True)
class PipelineConfig:
    ontology_path: Path
    seed: int = 7
    jobs: int = 1
    providers: dict[str, ProviderSpec] = field(default_factory=dict)
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    filter_k: int = DEFAULT_K
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        if self.filter_k < 1:
            raise ValidationError(f"filter.k: must be >= 1, got {self.filter_k}")
        if self.jobs < 1:
            raise ValidationError(f"jobs: must be >= 1, got {self.jobs}")


def _provider_spec(kind: str, raw: dict | None, base_dir: Path) -> ProviderSpec:
    raw = dict(raw or {"mode": "mock"})
    url_override = env_url(kind)
    if url_override:
        raw = {"mode": "remote", "url": url_override}
    mode = raw.pop("mode", "mock")
    options = raw
    for key in ("annotations", "truth", "trace"):
        if options.get(key):
            options[key] = str((base_dir / options[key]).resolve()) if not Path(options[key]).is_absolute() else options[key]
    return ProviderSpec(kind=kind, mode=mode, options=options)


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config document must be a JSON object")
    return config_from_dict(data, base_dir=path.parent)


def config_from_dict(data: dict, base_dir: Path | str = ".") -> PipelineConfig:
    base_dir = Path(base_dir)
    ontology_raw = data.get("ontology")
    if not ontology_raw:
        raise ValidationError("ontology: required")
    ontology_path = Path(ontology_raw)
    if not ontology_path.is_absolute():
        ontology_path = (base_dir / ontology_path).resolve()

    providers_raw = data.get("providers", {})
    if not isinstance(providers_raw, dict):
        raise ValidationError("providers: must be an object")
    unknown = sorted(set(providers_raw) - set(PROVIDER_KINDS))
    if unknown:
        raise ValidationError(f"providers: unknown provider kinds {unknown}")
    specs = {kind: _provider_spec(kind, providers_raw.get(kind), base_dir) for kind in PROVIDER_KINDS}

    gen_raw = dict(data.get("generation", {}))
    crop_raw = dict(gen_raw.get("crop", {}))
    generation = GenerationSettings(
        candidates=int(gen_raw.get("candidates", DEFAULT_CANDIDATES)),
        per_pair=int(gen_raw.get("per_pair", DEFAULT_PER_PAIR)),
        crop=CropPolicy(
            factor=float(crop_raw.get("factor", 2.0)),
            min_size=int(crop_raw.get("min_size", 256)),
        ),
        prompt_template=str(gen_raw.get("prompt_template", DEFAULT_PROMPT_TEMPLATE)),
    )

    det_raw = dict(data.get("detector", {}))
    detector = DetectorSettings(
        function_set=str(det_raw.get("function_set", "all")),
        k_kb=int(det_raw.get("k_kb", DEFAULT_KB_DEPTH)),
        top_n=int(det_raw.get("top_n", 3)),
    )

    eval_raw = dict(data.get("eval", {}))
    metric = str(eval_raw.get("metric", "word_match"))
    if metric not in METRICS:
        raise ValidationError(f"eval.metric: expected one of {METRICS}, got {metric!r}")
    eval_config = EvalConfig(
        prompt=build_prompt(eval_raw.get("prompt")),
        metric=metric,
        top_n=int(eval_raw.get("top_n", 1)),
        use_descriptions=bool(eval_raw.get("use_descriptions", True)),
    )

    filter_raw = dict(data.get("filter", {}))
    return PipelineConfig(
        ontology_path=ontology_path,
        seed=int(data.get("seed", 7)),
        jobs=int(data.get("jobs", 1)),
        providers=specs,
        generation=generation,
        filter_k=int(filter_raw.get("k", DEFAULT_K)),
        detector=detector,
        eval=eval_config,
    )


@dataclass
class ProviderBundle:
    embedding: object
    inpainting: object
    region: object
    vqa: object
    description: object


def build_providers(config: PipelineConfig, ontology: Ontology) -> ProviderBundle:
    """Instantiate the five providers per their specs."""

    def build(kind: str):
        spec = config.providers.get(kind, ProviderSpec(kind=kind, mode="mock"))
        opts = spec.options
        if spec.mode == "remote":
            url, trace = opts["url"], opts.get("trace")
            if kind == "embedding":
                return RemoteEmbeddingProvider(url, dim=opts.get("dim"), trace_path=trace)
            if kind == "inpainting":
                return RemoteInpaintingProvider(url, trace_path=trace)
            if kind == "region":
                return RemoteRegionProvider(url, trace_path=trace)
            if kind == "vqa":
                return RemoteVQAProvider(url, trace_path=trace)
            return RemoteDescriptionProvider(url, trace_path=trace)
        if kind == "embedding":
            return MockEmbeddingProvider(
                ontology,
                seed=int(opts.get("seed", config.seed)),
                dim=int(opts.get("dim", 64)),
                noise=float(opts.get("noise", 0.0)),
                image_label_override=opts.get("image_label_override"),
            )
        if kind == "inpainting":
            return MockInpaintingProvider(ontology)
        if kind == "region":
            annotations = opts.get("annotations")
            if annotations:
                return FixtureRegionProvider.from_file(annotations)
            return FixtureRegionProvider({})
        if kind == "vqa":
            vqa_kind = opts.get("kind", "fixed")
            if vqa_kind == "fixed":
                return FixedAnswerVQAProvider(str(opts.get("answer", "an object")))
            if vqa_kind == "echo_truth":
                truth_path = opts.get("truth")
                if not truth_path:
                    raise ValidationError("providers.vqa.truth: required for echo_truth mock")
                truth = json.loads(Path(truth_path).read_text(encoding="utf-8"))
                return EchoTruthVQAProvider(truth)
            raise ValidationError(f"providers.vqa.kind: unknown mock kind {vqa_kind!r}")
        return MockDescriptionProvider(ontology)

    return ProviderBundle(**{kind: build(kind) for kind in PROVIDER_KINDS})


def load_ontology_for(config: PipelineConfig) -> Ontology:
    return load_ontology(config.ontology_path)
