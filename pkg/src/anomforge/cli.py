"""Command-line entry point: gen, filter, detect, eval, stats.

Stages communicate through files (dataset directory + manifest), so any
stage can be re-run in isolation.  Exit codes: 0 success, 1 usage,
2 validation, 3 provider failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from anomforge import detector as detector_mod
from anomforge import evalharness, filtering, genpipe, manifest
from anomforge.config import PipelineConfig, build_providers, load_config
from anomforge.errors import AnomforgeError, StorageError, ValidationError
from anomforge.evalharness import EvalConfig, EvalItem
from anomforge.genpipe import MaskSpec
from anomforge.manifest import BASES_DIR, IMAGES_DIR, MANIFEST_NAME, PENDING_DIR
from anomforge.ontology import load_ontology
from anomforge.providers.base import RasterImage, Rect

SCENES_FILE = "scenes.json"


def _load_images(images_dir: Path) -> tuple[dict[str, RasterImage], dict[str, str]]:
    """Read base images plus the scenes.json sidecar mapping id -> scene."""
    scenes_path = images_dir / SCENES_FILE
    if not scenes_path.exists():
        raise ValidationError(f"gen: missing {scenes_path} (map of image id to scene type)")
    scenes = json.loads(scenes_path.read_text(encoding="utf-8"))
    if not isinstance(scenes, dict) or not scenes:
        raise ValidationError(f"gen: {scenes_path} must be a non-empty object")
    images: dict[str, RasterImage] = {}
    for image_id in sorted(scenes):
        png = images_dir / f"{image_id}.png"
        if not png.exists():
            raise ValidationError(f"gen: scene map references missing image {png}")
        images[image_id] = RasterImage.load_png(png)
    return images, {k: str(v) for k, v in scenes.items()}


def _load_masks(path: Path, images: dict[str, RasterImage]) -> list[MaskSpec]:
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"gen: {path} must be a non-empty JSON list of masks")
    masks = []
    for i, entry in enumerate(raw):
        try:
            spec = MaskSpec(
                image_id=str(entry["image_id"]),
                bbox=Rect.from_dict(entry["bbox"]),
                size_class=str(entry["size_class"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"gen: masks[{i}] malformed: {exc}") from exc
        image = images.get(spec.image_id)
        if image is None:
            raise ValidationError(f"gen: masks[{i}] references unknown image {spec.image_id!r}")
        if not spec.bbox.within(image.width, image.height):
            raise ValidationError(f"gen: masks[{i}] {spec.bbox} outside image {spec.image_id!r}")
        masks.append(spec)
    return masks


def run_gen(config: PipelineConfig, images_dir: Path, masks_path: Path, out_dir: Path) -> int:
    ontology = load_ontology(config.ontology_path)
    bundle = build_providers(config, ontology)
    images, scenes = _load_images(images_dir)
    masks = _load_masks(masks_path, images)

    tasks = genpipe.plan_tasks(ontology, scenes, masks, per_pair=config.generation.per_pair, seed=config.seed)
    if not tasks:
        raise ValidationError("gen: task plan is empty (no size-compatible anomalies)")

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / PENDING_DIR).mkdir(exist_ok=True)
    (out_dir / BASES_DIR).mkdir(exist_ok=True)
    for image_id in sorted({t.image_id for t in tasks}):
        images[image_id].save_png(out_dir / BASES_DIR / f"{image_id}.png")

    def produce(task):
        return genpipe.generate_candidates(
            task,
            images[task.image_id],
            bundle.inpainting,
            n=config.generation.candidates,
            policy=config.generation.crop,
            prompt_template=config.generation.prompt_template,
        )

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            per_task = list(pool.map(produce, tasks))
    else:
        per_task = [produce(task) for task in tasks]

    manifest_path = out_dir / MANIFEST_NAME
    written = 0
    for records in per_task:  # manifest lines stay in task order regardless of jobs
        for record in records:
            region_rel = f"{PENDING_DIR}/{record.task.task_id}-{record.candidate_index}.png"
            record.region_image.save_png(out_dir / region_rel)
            manifest.append_line(manifest_path, manifest.line_from_record(record, region_path=region_rel))
            written += 1
    print(f"gen: planned {len(tasks)} tasks, wrote {written} pending candidates to {out_dir}")
    return 0


def run_filter(config: PipelineConfig, dataset_dir: Path, k: int | None = None) -> int:
    ontology = load_ontology(config.ontology_path)
    bundle = build_providers(config, ontology)
    manifest_path = dataset_dir / MANIFEST_NAME
    lines = list(manifest.read_manifest(manifest_path))
    if not lines:
        raise ValidationError(f"filter: manifest {manifest_path} is empty")

    k = k if k is not None else config.filter_k
    records = []
    for line in lines:
        region = None
        if line.decision == filtering.PENDING:
            if not line.region_path:
                raise ValidationError(f"filter: pending line {line.output_id} has no region image")
            region = RasterImage.load_png(dataset_dir / line.region_path)
        records.append(manifest.record_from_line(line, region_image=region))

    decided = filtering.filter_dataset(records, bundle.embedding, ontology, k=k, jobs=config.jobs)

    (dataset_dir / IMAGES_DIR).mkdir(exist_ok=True)
    new_lines = []
    accepted = 0
    for line, record in zip(lines, decided):
        if line.decision != filtering.PENDING:
            new_lines.append(line)
            continue
        # label provenance check at write time
        if record.task.target not in ontology.scene(record.task.scene).anomalous_objects:
            raise ValidationError(
                f"filter: target {record.task.target!r} not anomalous in scene {record.task.scene!r}"
            )
        image_rel = None
        if record.decision == filtering.ACCEPTED:
            base = RasterImage.load_png(dataset_dir / BASES_DIR / f"{record.task.image_id}.png")
            final = genpipe.inject(base, record)
            image_rel = f"{IMAGES_DIR}/{line.output_id}.png"
            final.save_png(dataset_dir / image_rel)
            accepted += 1
        if line.region_path:
            (dataset_dir / line.region_path).unlink(missing_ok=True)
        new_lines.append(manifest.line_from_record(record, region_path=None, image_path=image_rel))
    manifest.rewrite_manifest(manifest_path, new_lines)
    print(f"filter: decided {len(lines)} candidates, accepted {accepted} (k={k})")
    return 0


def run_detect(config: PipelineConfig, dataset_dir: Path, out_path: Path, function_set: str | None = None, top_n: int | None = None) -> int:
    ontology = load_ontology(config.ontology_path)
    bundle = build_providers(config, ontology)
    function_set = function_set or config.detector.function_set
    top_n = top_n if top_n is not None else config.detector.top_n

    lines = manifest.accepted_lines(dataset_dir / MANIFEST_NAME)
    if not lines:
        raise ValidationError("detect: no accepted images in manifest")
    class_embs = detector_mod.class_embeddings(bundle.embedding, ontology)

    def analyze(line):
        image = RasterImage.load_png(dataset_dir / line.image_path)
        result = detector_mod.detect(
            image,
            bundle.embedding,
            bundle.region,
            ontology,
            function_set=function_set,
            top_n=top_n,
            k_kb=config.detector.k_kb,
            class_embs=class_embs,
        )
        return line, result

    ordered = sorted(lines, key=lambda line: line.output_id)
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            analyzed = list(pool.map(analyze, ordered))
    else:
        analyzed = [analyze(line) for line in ordered]

    results = {}
    truths = {}
    with out_path.open("w", encoding="utf-8") as handle:
        for line, result in analyzed:
            results[line.output_id] = result
            truths[line.output_id] = line.target
            handle.write(
                json.dumps(
                    {
                        "image_id": line.output_id,
                        "function_set": function_set,
                        "ranked": [
                            {"bbox": region.bbox.to_dict(), "label": label, "score": score}
                            for region, label, score in result.ranked
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    report = evalharness.score_detector_results(results, truths, top_n=top_n)
    top3 = f" top3={report.top3_accuracy:.4f}" if report.top3_accuracy is not None else ""
    print(f"detect: {report.total} images, functions={function_set}, top1={report.top1_accuracy:.4f}{top3}")
    return 0


def run_eval(config: PipelineConfig, dataset_dir: Path, out_path: Path, metric: str | None = None, top_n: int | None = None) -> int:
    ontology = load_ontology(config.ontology_path)
    bundle = build_providers(config, ontology)
    eval_config = EvalConfig(
        prompt=config.eval.prompt,
        metric=metric or config.eval.metric,
        top_n=top_n if top_n is not None else config.eval.top_n,
        use_descriptions=config.eval.use_descriptions,
    )

    lines = manifest.accepted_lines(dataset_dir / MANIFEST_NAME)
    if not lines:
        raise ValidationError("eval: no accepted images in manifest")
    items = [
        EvalItem(
            image_id=line.output_id,
            image=RasterImage.load_png(dataset_dir / line.image_path),
            truth=line.target,
        )
        for line in lines
    ]
    report = evalharness.evaluate(
        items,
        bundle.vqa,
        eval_config,
        ontology,
        embedder=bundle.embedding,
        describer=bundle.description,
        jobs=config.jobs,
    )
    report.save_json(out_path)
    if report.confusion is not None:
        report.save_confusion_csv(out_path.with_suffix(".confusion.csv"))
    top3 = f" top3={report.top3_accuracy:.4f}" if report.top3_accuracy is not None else ""
    print(
        f"eval: metric={report.metric} scored={report.total} errors={report.errors} "
        f"top1={report.top1_accuracy:.4f}{top3} -> {out_path}"
    )
    return 0


def run_stats(dataset_dir: Path) -> int:
    generated, accepted = manifest.acceptance_stats(dataset_dir / MANIFEST_NAME)
    if generated == 0:
        raise ValidationError("stats: manifest holds no candidates")
    rate = 100.0 * accepted / generated
    print(f"stats: generated={generated} accepted={accepted} acceptance rate {rate:.1f}%")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anomforge", description=__doc__)
    parser.add_argument("--config", help="pipeline config JSON (required by all but stats)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, help="worker pool size (default from config, then 1)")
    sub = parser.add_subparsers(dest="command")

    gen = sub.add_parser("gen", help="generate pending anomaly candidates")
    gen.add_argument("--ontology", help="override the config ontology path")
    gen.add_argument("--images", required=True, help="directory of base PNGs plus scenes.json")
    gen.add_argument("--masks", required=True, help="JSON list of mask specs")
    gen.add_argument("--out", required=True, help="dataset directory to create")
    gen.add_argument("--candidates", type=int, help="inpainting candidates per task")
    gen.add_argument("--per-pair", type=int, help="anomaly targets per (image, mask) pair")

    flt = sub.add_parser("filter", help="score pending candidates and decide them")
    flt.add_argument("--dataset", required=True)
    flt.add_argument("--k", type=int, help="top-k acceptance threshold")

    det = sub.add_parser("detect", help="run the similarity detector over accepted images")
    det.add_argument("--dataset", required=True)
    det.add_argument("--functions", choices=sorted(detector_mod.FUNCTION_SETS), help="similarity function set")
    det.add_argument("--top", type=int, help="regions to report per image")
    det.add_argument("--out", required=True, help="results JSONL path")

    evl = sub.add_parser("eval", help="evaluate a VQA backend on accepted images")
    evl.add_argument("--dataset", required=True)
    evl.add_argument("--metric", choices=["word", "class", "broad"], help="metric shorthand")
    evl.add_argument("--top", type=int, choices=[1, 3], help="top-n for matching metrics")
    evl.add_argument("--out", required=True, help="report JSON path")

    stats = sub.add_parser("stats", help="print manifest acceptance statistics")
    stats.add_argument("--dataset", required=True)
    return parser


_METRIC_SHORTHAND = {"word": "word_match", "class": "class_match", "broad": "broad_match"}


def _resolve_config(args) -> PipelineConfig:
    if not args.config:
        raise ValidationError(f"{args.command}: --config is required")
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "ontology", None):
        overrides["ontology_path"] = Path(args.ontology).resolve()
    if getattr(args, "candidates", None) is not None or getattr(args, "per_pair", None) is not None:
        from dataclasses import replace as dc_replace

        gen = config.generation
        if args.candidates is not None:
            gen = dc_replace(gen, candidates=args.candidates)
        if args.per_pair is not None:
            gen = dc_replace(gen, per_pair=args.per_pair)
        overrides["generation"] = gen
    if overrides:
        from dataclasses import replace as dc_replace

        config = dc_replace(config, **overrides)
    return config


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "stats":
            return run_stats(Path(args.dataset))
        config = _resolve_config(args)
        if args.command == "gen":
            return run_gen(config, Path(args.images), Path(args.masks), Path(args.out))
        if args.command == "filter":
            return run_filter(config, Path(args.dataset), k=args.k)
        if args.command == "detect":
            return run_detect(
                config, Path(args.dataset), Path(args.out), function_set=args.functions, top_n=args.top
            )
        if args.command == "eval":
            metric = _METRIC_SHORTHAND.get(args.metric) if args.metric else None
            return run_eval(config, Path(args.dataset), Path(args.out), metric=metric, top_n=args.top)
        parser.print_usage(sys.stderr)
        return 1
    except AnomforgeError as exc:
        print(f"anomforge {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"anomforge {args.command}: I/O failure: {exc}", file=sys.stderr)
        return StorageError.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
