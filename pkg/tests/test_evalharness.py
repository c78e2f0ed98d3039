import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anomforge.detector import DetectionResult
from anomforge.errors import ValidationError
from anomforge.evalharness import (
    DEFAULT_PROMPT,
    EvalConfig,
    EvalItem,
    broad_match,
    build_prompt,
    class_match,
    evaluate,
    score_detector_results,
    word_match,
)
from anomforge.ontology import embedding_text_for
from anomforge.providers import (
    EchoTruthVQAProvider,
    FixedAnswerVQAProvider,
    MockDescriptionProvider,
    MockEmbeddingProvider,
    RasterImage,
    Rect,
    Region,
)
from anomforge.providers.base import EmbeddingVector

from helpers import MOCK_DIM, MOCK_SEED, builtin_ontology


@pytest.fixture(scope="module")
def ontology():
    return builtin_ontology()


@pytest.fixture(scope="module")
def embedder(ontology):
    return MockEmbeddingProvider(ontology, seed=MOCK_SEED, dim=MOCK_DIM)


@pytest.fixture(scope="module")
def describer(ontology):
    return MockDescriptionProvider(ontology)


# -- prompt ---------------------------------------------------------------------


def test_default_prompt_is_verbatim():
    assert build_prompt() == (
        "Question: A context-dependent anomaly is an object that is anomalous "
        "based only on the context in which it is found. What object is the "
        "context-dependent anomaly in this scene? Short answer: "
    )
    assert build_prompt() == DEFAULT_PROMPT


def test_prompt_override_verbatim():
    assert build_prompt("What is wrong here?") == "What is wrong here?"


def test_empty_prompt_override_rejected():
    with pytest.raises(ValidationError):
        build_prompt("   ")


# -- word_match --------------------------------------------------------------------


def test_word_match_direct_containment():
    assert word_match("There is an apple on the sink", "apple")


def test_word_match_rejects_substrings():
    assert not word_match("a pineapple", "apple")


def test_word_match_multiword_labels():
    assert word_match("the fire hydrant is odd", "fire hydrant")
    assert not word_match("the fire is near a hydrant eventually", "fire hydrant")


def test_word_match_case_and_punctuation_insensitive():
    assert word_match("APPLE!", "apple")
    assert word_match("An Apple.", "apple") == word_match("an apple", "apple")


def test_word_match_empty_response_is_false():
    assert not word_match("", "apple")


@given(st.text(max_size=80))
@settings(max_examples=200, deadline=None)
def test_word_match_invariant_under_case(response):
    assert word_match(response, "apple") == word_match(response.upper(), "apple")


# -- class_match -------------------------------------------------------------------


def test_truth_text_ranks_first(ontology, embedder, describer):
    obj = ontology.object("apple")
    response = embedding_text_for(obj.label, obj.description)
    ranked = class_match(response, ontology, embedder, describer, top_n=1, use_descriptions=False)
    assert ranked == ["apple"]


def test_label_response_with_descriptions_ranks_first(ontology, embedder, describer):
    ranked = class_match("apple", ontology, embedder, describer, top_n=1, use_descriptions=True)
    assert ranked == ["apple"]


def test_top3_contains_top1(ontology, embedder, describer):
    top1 = class_match("crocodile", ontology, embedder, describer, top_n=1)
    top3 = class_match("crocodile", ontology, embedder, describer, top_n=3)
    assert top3[:1] == top1 and len(top3) == 3


def test_trailing_whitespace_never_changes_ranking(ontology, embedder, describer):
    a = class_match("a mysterious thing", ontology, embedder, describer, top_n=3)
    b = class_match("a mysterious thing   \n", ontology, embedder, describer, top_n=3)
    assert a == b


def test_class_match_agrees_with_bruteforce_sort(ontology):
    # four classes, two-dimensional hand-built embeddings
    table = {
        "a": EmbeddingVector.of([1.0, 0.0]),
        "b": EmbeddingVector.of([0.0, 1.0]),
        "c": EmbeddingVector.of([0.6, 0.8]),
        "d": EmbeddingVector.of([-1.0, 0.0]),
    }

    class TwoDim:
        dim = 2

        def embed_text(self, text):
            return EmbeddingVector.of([0.8, 0.6])

        def embed_image(self, image):
            raise AssertionError

    ranked = class_match("whatever", ontology, TwoDim(), None, top_n=4, label_embs=table)
    query = np.array([0.8, 0.6])
    expected = sorted(table, key=lambda l: (-(query @ table[l].values), l))
    assert ranked == expected


def test_empty_response_rejected(ontology, embedder):
    with pytest.raises(ValidationError):
        class_match("  ", ontology, embedder)


# -- broad_match ----------------------------------------------------------------------


def test_category_description_response_ranks_category_first(ontology, embedder, describer):
    category = ontology.broad_categories[1]
    ranked = broad_match(category.description, ontology, embedder, describer, top_n=1)
    assert ranked == [category.label]


def test_broad_top3_superset_of_top1(ontology, embedder, describer):
    top1 = broad_match("a strange machine", ontology, embedder, describer, top_n=1)
    top3 = broad_match("a strange machine", ontology, embedder, describer, top_n=3)
    assert top3[:1] == top1


def test_random_responses_hit_one_in_ten(ontology, embedder, describer):
    rng = np.random.default_rng(MOCK_SEED)
    labels = ontology.object_labels
    trials = 2000
    hits = 0
    for i in range(trials):
        truth = labels[int(rng.integers(len(labels)))]
        truth_cat = ontology.object(truth).broad_category
        response = f"trial-{i}-{rng.integers(1 << 30)}"
        ranked = broad_match(response, ontology, embedder, describer, top_n=1)
        hits += ranked[0] == truth_cat
    assert hits / trials == pytest.approx(0.1, abs=0.03)


# -- evaluate -----------------------------------------------------------------------------


def make_items(ontology, embedder, labels):
    items = []
    for i, label in enumerate(labels):
        image = RasterImage.solid(16, 16, embedder.color_of(label))
        arr = image.to_array().copy()
        arr[0, 0] = (i % 256, 7, 7)  # distinct pixels so content keys differ
        image = RasterImage.from_array(arr)
        items.append(EvalItem(image_id=f"img-{i:02d}", image=image, truth=label))
    return items


def echo_provider(items):
    return EchoTruthVQAProvider({item.image.content_key(): item.truth for item in items})


def test_echo_truth_is_ceiling_on_all_metrics(ontology, embedder, describer):
    labels = ["apple", "crocodile", "panda", "violin", "spoon", "drum", "washing machine"]
    items = make_items(ontology, embedder, labels)
    vqa = echo_provider(items)
    for metric in ("word_match", "class_match", "broad_match"):
        config = EvalConfig(metric=metric, top_n=3 if metric != "word_match" else 1)
        report = evaluate(items, vqa, config, ontology, embedder=embedder, describer=describer)
        assert report.top1_accuracy == 1.0, metric
        assert report.errors == 0
        if metric != "word_match":
            assert report.top3_accuracy == 1.0


def test_never_matching_answer_is_floor(ontology, embedder, describer):
    items = make_items(ontology, embedder, ["apple", "panda"])
    vqa = FixedAnswerVQAProvider("zzyzx")
    report = evaluate(items, vqa, EvalConfig(metric="word_match"), ontology, embedder=embedder)
    assert report.top1_accuracy == 0.0


def test_fixed_answer_word_accuracy_counts_matching_truths(ontology, embedder):
    labels = ["apple", "apple", "panda", "violin"]
    items = make_items(ontology, embedder, labels)
    vqa = FixedAnswerVQAProvider("I think it is an apple")
    report = evaluate(items, vqa, EvalConfig(metric="word_match"), ontology, embedder=embedder)
    assert report.top1_accuracy == pytest.approx(2 / 4)
    assert report.per_class["apple"] == {"total": 2, "top1": 2, "top3": 2}


def test_provider_errors_excluded_from_denominator(ontology, embedder):
    items = make_items(ontology, embedder, ["apple", "panda", "violin"])
    sick_key = items[1].image.content_key()

    class Flaky:
        def answer(self, image, prompt):
            if image.content_key() == sick_key:
                return "   "  # whitespace -> empty-response provider error
            return "apple"

    report = evaluate(items, Flaky(), EvalConfig(metric="word_match"), ontology, embedder=embedder)
    assert report.total == 2
    assert report.errors == 1
    assert report.top1_accuracy == pytest.approx(1 / 2)


def test_all_items_failing_is_an_error(ontology, embedder):
    items = make_items(ontology, embedder, ["apple"])

    class Dead:
        def answer(self, image, prompt):
            return ""

    with pytest.raises(ValidationError, match="provider error"):
        evaluate(items, Dead(), EvalConfig(metric="word_match"), ontology, embedder=embedder)


def test_empty_item_list_rejected(ontology, embedder):
    with pytest.raises(ValidationError, match="accepted"):
        evaluate([], FixedAnswerVQAProvider("x"), EvalConfig(), ontology, embedder=embedder)


def test_confusion_matrix_rows_sum_to_truth_totals(ontology, embedder, describer):
    labels = ["apple", "apple", "panda", "violin", "spoon", "drum"]
    items = make_items(ontology, embedder, labels)
    vqa = echo_provider(items)
    report = evaluate(
        items, vqa, EvalConfig(metric="broad_match", top_n=3), ontology, embedder=embedder, describer=describer
    )
    categories = report.confusion["categories"]
    matrix = report.confusion["matrix"]
    assert sum(sum(row) for row in matrix) == report.total
    truth_counts = {}
    for label in labels:
        cat = ontology.object(label).broad_category
        truth_counts[cat] = truth_counts.get(cat, 0) + 1
    for label, row in zip(categories, matrix):
        assert sum(row) == truth_counts.get(label, 0)


def test_word_match_report_has_no_top3(ontology, embedder):
    items = make_items(ontology, embedder, ["apple"])
    report = evaluate(items, echo_provider(items), EvalConfig(metric="word_match"), ontology, embedder=embedder)
    assert report.top3_accuracy is None


def test_report_round_trips_to_json(ontology, embedder, describer, tmp_path):
    items = make_items(ontology, embedder, ["apple", "panda"])
    report = evaluate(
        items,
        echo_provider(items),
        EvalConfig(metric="broad_match", top_n=3),
        ontology,
        embedder=embedder,
        describer=describer,
    )
    report.save_json(tmp_path / "report.json")
    report.save_confusion_csv(tmp_path / "confusion.csv")
    import csv as csv_mod
    import json

    data = json.loads((tmp_path / "report.json").read_text())
    assert data["metric"] == "broad_match"
    with (tmp_path / "confusion.csv").open() as handle:
        rows = list(csv_mod.reader(handle))
    assert len(rows) == 11  # header + 10 categories


def test_evaluate_concurrency_matches_serial(ontology, embedder, describer):
    labels = ["apple", "panda", "violin", "drum", "spoon"]
    items = make_items(ontology, embedder, labels)
    vqa = echo_provider(items)
    config = EvalConfig(metric="class_match", top_n=3)
    serial = evaluate(items, vqa, config, ontology, embedder=embedder, describer=describer, jobs=1)
    threaded = evaluate(items, vqa, config, ontology, embedder=embedder, describer=describer, jobs=4)
    assert serial == threaded


# -- score_detector_results -----------------------------------------------------------------


def ranked_result(labels_scores):
    region = Region(bbox=Rect(0, 0, 4, 4), confidence=1.0)
    ranked = tuple((region, label, score) for label, score in labels_scores)
    return DetectionResult(ranked=ranked, function_set="visual")


def test_detector_scoring_top1_and_top3():
    results = {
        "a": ranked_result([("apple", -1.0), ("panda", 0.0), ("drum", 1.0)]),
        "b": ranked_result([("panda", -1.0), ("apple", 0.0), ("drum", 1.0)]),
        "c": ranked_result([("drum", -1.0), ("violin", 0.0), ("spoon", 1.0)]),
    }
    truths = {"a": "apple", "b": "apple", "c": "apple"}
    report = score_detector_results(results, truths, top_n=3)
    assert report.total == 3
    assert report.top1_accuracy == pytest.approx(1 / 3)
    assert report.top3_accuracy == pytest.approx(2 / 3)
    assert report.top3_accuracy >= report.top1_accuracy


def test_detector_scoring_requires_matching_ids():
    results = {"a": ranked_result([("apple", 0.0)])}
    with pytest.raises(ValidationError, match="missing"):
        score_detector_results(results, {"b": "apple"}, top_n=1)


def test_detector_scoring_rejects_empty():
    with pytest.raises(ValidationError):
        score_detector_results({}, {}, top_n=1)
