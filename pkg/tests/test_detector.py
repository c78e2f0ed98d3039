import math

import numpy as np
import pytest

from anomforge.detector import (
    classify_region,
    combine,
    detect,
    irv_scores,
    kb_scores,
    retrieve_descriptions,
    rrv_scores,
)
from anomforge.errors import ProviderError, ValidationError
from anomforge.ontology import ontology_from_dict
from anomforge.providers import MockEmbeddingProvider, RasterImage, Rect
from anomforge.providers.base import EmbeddingVector
from anomforge.providers.mock import FixtureRegionProvider

from helpers import (
    MOCK_DIM,
    MOCK_SEED,
    build_planted_fixture,
    builtin_ontology,
    region_provider_for,
)

SQRT_HALF = math.sqrt(0.5)


def ev(*values):
    return EmbeddingVector.of(list(values))


# -- IRV ------------------------------------------------------------------------


def test_irv_self_similarity():
    assert irv_scores(ev(1, 0), [ev(1, 0)]) == [pytest.approx(1.0)]


def test_irv_orthogonal_is_zero():
    assert irv_scores(ev(1, 0), [ev(0, 1)]) == [pytest.approx(0.0)]


def test_irv_hand_built_values():
    scores = irv_scores(ev(1, 0), [ev(1, 0), ev(0, 1), ev(SQRT_HALF, SQRT_HALF)])
    assert scores == [pytest.approx(1.0), pytest.approx(0.0), pytest.approx(SQRT_HALF)]


def test_irv_empty_regions_error():
    with pytest.raises(ValidationError):
        irv_scores(ev(1, 0), [])


def test_irv_dim_mismatch():
    with pytest.raises(ValidationError):
        irv_scores(ev(1, 0), [ev(1, 0, 0)])


# -- RRV ------------------------------------------------------------------------


def test_rrv_single_region_is_one():
    assert rrv_scores([ev(1, 0)]) == [pytest.approx(1.0)]


def test_rrv_identical_regions_all_one():
    scores = rrv_scores([ev(0, 1)] * 4)
    assert scores == [pytest.approx(1.0)] * 4


def test_rrv_hand_built_two_thirds():
    scores = rrv_scores([ev(1, 0), ev(1, 0), ev(0, 1)])
    assert scores == [pytest.approx(2 / 3), pytest.approx(2 / 3), pytest.approx(1 / 3)]


def test_rrv_permutation_equivariant():
    vecs = [ev(1, 0), ev(0.6, 0.8), ev(0, 1), ev(-1, 0)]
    base = rrv_scores(vecs)
    perm = [2, 0, 3, 1]
    shuffled = rrv_scores([vecs[i] for i in perm])
    assert shuffled == [pytest.approx(base[i]) for i in perm]


# -- KB -------------------------------------------------------------------------


def test_kb_identical_retrievals_score_one():
    # all regions share the same embedding so retrieval sets coincide
    class_embs = {"a": ev(1, 0), "b": ev(0, 1)}
    descs = {"a": "desc a", "b": "desc b"}
    texts = {}

    def embed(text):
        texts.setdefault(text, ev(SQRT_HALF, SQRT_HALF))
        return texts[text]

    scores = kb_scores([ev(1, 0)] * 3, class_embs, descs, k_kb=2, embed_text=embed)
    assert scores == [pytest.approx(1.0)] * 3
    assert len(texts) == 1  # identical d for all regions


def test_kb_single_region_is_one():
    scores = kb_scores([ev(1, 0)], {"a": ev(1, 0)}, {"a": "d"}, k_kb=1, embed_text=lambda t: ev(0, 1))
    assert scores == [pytest.approx(1.0)]


def test_retrieve_orders_descending_with_newlines():
    class_embs = {"far": ev(0, 1), "near": ev(1, 0), "mid": ev(SQRT_HALF, SQRT_HALF)}
    descs = {"far": "F", "near": "N", "mid": "M"}
    d = retrieve_descriptions(ev(1, 0), class_embs, descs, k_kb=2)
    assert d == "N\nM"


def test_kb_matches_hand_traced_oracle():
    # three regions, four classes, two-dimensional embeddings, k_kb = 2
    region_vecs = [ev(1, 0), ev(0, 1), ev(SQRT_HALF, SQRT_HALF)]
    class_embs = {
        "a": ev(1, 0),
        "b": ev(0, 1),
        "c": ev(SQRT_HALF, SQRT_HALF),
        "d": ev(-1, 0),
    }
    descs = {k: f"desc {k}" for k in class_embs}
    text_vectors = {
        "desc a\ndesc c": ev(0.8, 0.6),
        "desc b\ndesc c": ev(0.6, 0.8),
        "desc c\ndesc a": ev(1, 0),
        "desc c\ndesc b": ev(0, 1),
    }

    def embed(text):
        return text_vectors[text]

    # independent trace: retrieval, concat, embed, mean of pairwise dots
    def oracle():
        d_texts = []
        for r in region_vecs:
            ranked = sorted(class_embs, key=lambda c: (-(r.values @ class_embs[c].values), c))
            d_texts.append("\n".join(descs[c] for c in ranked[:2]))
        e_d = [text_vectors[t] for t in d_texts]
        out = []
        for i in range(len(e_d)):
            total = 0.0
            for j in range(len(e_d)):
                total += float(e_d[i].values @ e_d[j].values)
            out.append(total / len(e_d))
        return out

    got = kb_scores(region_vecs, class_embs, descs, k_kb=2, embed_text=embed)
    expected = oracle()
    assert got == [pytest.approx(e, abs=1e-9) for e in expected]


# -- combine ----------------------------------------------------------------------


def test_single_function_preserves_ranking():
    scores = {"kb": [0.9, 0.1, 0.5]}
    combined = combine(scores, "knowledge")
    assert np.argsort(combined).tolist() == np.argsort(scores["kb"]).tolist()


def test_agreeing_functions_preserve_shared_ranking():
    scores = {"irv": [0.9, 0.5, 0.1], "rrv": [0.8, 0.6, 0.4]}
    combined = combine(scores, "visual")
    assert np.argsort(combined).tolist() == [2, 1, 0]
    # standardized identical-ranking inputs coincide exactly on a 3-point grid
    assert combined == [pytest.approx(v) for v in combine({"irv": scores["irv"], "rrv": scores["irv"]}, "visual")]


def test_constant_functions_combine_to_zero():
    combined = combine({"irv": [0.5, 0.5], "rrv": [0.2, 0.2], "kb": [0.4, 0.4]}, "all")
    assert combined == [pytest.approx(0.0), pytest.approx(0.0)]


def test_unknown_function_set_rejected():
    with pytest.raises(ValidationError):
        combine({"irv": [1.0]}, "psychic")


def test_mismatched_lengths_rejected():
    with pytest.raises(ValidationError):
        combine({"irv": [1.0, 2.0], "rrv": [1.0]}, "visual")


# -- classify_region -----------------------------------------------------------------


def test_classify_exact_match():
    table = {"apple": ev(1, 0), "panda": ev(0, 1)}
    assert classify_region(ev(1, 0), table) == "apple"


def test_classify_matches_bruteforce_argmax():
    rng = np.random.default_rng(11)
    labels = [f"c{i}" for i in range(6)]
    for _ in range(200):
        table = {l: ev(*rng.normal(size=2)) for l in labels}
        query = ev(*rng.normal(size=2))
        best = max(labels, key=lambda l: (query.values @ table[l].values, [-ord(ch) for ch in l]))
        assert classify_region(query, table) == best


def test_classify_mock_identity():
    ontology = builtin_ontology()
    embedder = MockEmbeddingProvider(ontology, seed=MOCK_SEED, dim=MOCK_DIM)
    from anomforge.detector import class_embeddings

    table = class_embeddings(embedder, ontology)
    region = EmbeddingVector.of(embedder.class_vector("chainsaw"))
    assert classify_region(region, table) == "chainsaw"


# -- detect (full trace oracle on hand-built embeddings) ------------------------------


class TableEmbedder:
    """Embedding provider backed by explicit lookup tables."""

    def __init__(self, dim, image_table, text_table, default):
        self.dim = dim
        self._images = image_table
        self._texts = text_table
        self._default = default

    def embed_image(self, image):
        return self._images.get(image.content_key(), self._default)

    def embed_text(self, text):
        return self._texts.get(text, self._default)


def tiny_ontology():
    categories = [
        "animal", "food", "tool", "musical instrument", "vehicle/outdoor equipment",
        "appliance", "medical item", "child's toy", "sports equipment", "household item",
    ]
    objects = [
        {"label": lab, "description": f"desc {lab}", "size_class": "small", "broad_category": "food"}
        for lab in ("w", "x", "y", "z")
    ]
    return ontology_from_dict(
        {
            "objects": objects,
            "scenes": [{"name": "room", "anomalous_objects": ["w", "x", "y", "z"]}],
            "taboo": ["person"],
            "broad_categories": categories,
        }
    )


def test_detect_matches_independent_trace():
    ontology = tiny_ontology()
    size = 40
    boxes = [Rect(0, 0, 10, 10), Rect(20, 0, 10, 10), Rect(0, 20, 10, 10), Rect(20, 20, 10, 10)]
    image = RasterImage.solid(size, size, (9, 9, 9))
    arr = image.to_array().copy()
    for i, b in enumerate(boxes):
        arr[b.y : b.y + b.h, b.x : b.x + b.w] = (40 + i, 0, 0)
    image = RasterImage.from_array(arr)

    rng = np.random.default_rng(2)
    region_vecs = [EmbeddingVector.of(v / np.linalg.norm(v)) for v in rng.normal(size=(4, 3))]
    image_vec = EmbeddingVector.of(np.array([1.0, 0.0, 0.0]))
    class_vecs = {
        lab: EmbeddingVector.of(v / np.linalg.norm(v))
        for lab, v in zip(("w", "x", "y", "z"), rng.normal(size=(4, 3)))
    }

    image_table = {image.content_key(): image_vec}
    for b, vec in zip(boxes, region_vecs):
        image_table[image.crop(b).content_key()] = vec

    text_table = {f"{lab}: desc {lab}": class_vecs[lab] for lab in class_vecs}
    # description concatenations hash to fixed vectors derived from content
    def d_vector(text):
        h = abs(hash(text)) % 997
        local = np.random.default_rng(h).normal(size=3)
        return EmbeddingVector.of(local / np.linalg.norm(local))

    class HashingEmbedder(TableEmbedder):
        def embed_text(self, text):
            if text in self._texts:
                return self._texts[text]
            return d_vector(text)

    embedder = HashingEmbedder(3, image_table, text_table, EmbeddingVector.of([1.0, 0, 0]))
    regions = FixtureRegionProvider(
        {image.content_key(): [{**b.to_dict(), "confidence": 0.9 - 0.01 * i} for i, b in enumerate(boxes)]}
    )

    result = detect(image, embedder, regions, ontology, function_set="all", top_n=4, k_kb=2)

    # independent trace of the three formulas + standardization fuse
    descs = {lab: f"desc {lab}" for lab in class_vecs}
    irv = [float(image_vec.values @ r.values) for r in region_vecs]
    rrv = [float(np.mean([r.values @ o.values for o in region_vecs])) for r in region_vecs]
    d_texts = []
    for r in region_vecs:
        ranked = sorted(class_vecs, key=lambda c: (-(r.values @ class_vecs[c].values), c))
        d_texts.append("\n".join(descs[c] for c in ranked[:2]))
    e_d = [d_vector(t).normalized() for t in d_texts]
    kb = [float(np.mean([e.values @ o.values for o in e_d])) for e in e_d]

    def std(xs):
        arr = np.asarray(xs)
        s = arr.std()
        return np.zeros_like(arr) if s == 0 else (arr - arr.mean()) / s

    fused = (std(irv) + std(rrv) + std(kb)) / 3
    order = sorted(range(4), key=lambda i: (fused[i], i))
    got_scores = [score for _, _, score in result.ranked]
    assert got_scores == [pytest.approx(fused[i], abs=1e-9) for i in order]
    predicted = [
        max(class_vecs, key=lambda c: (region_vecs[i].values @ class_vecs[c].values)) for i in order
    ]
    assert [label for _, label, _ in result.ranked] == predicted


# -- detect on the planted fixture ------------------------------------------------------


def test_planted_region_found_and_classified():
    ontology = builtin_ontology()
    embedder = MockEmbeddingProvider(ontology, seed=MOCK_SEED, dim=MOCK_DIM, noise=0.0)
    fixture = build_planted_fixture(ontology, embedder, n_images=6)
    provider = region_provider_for(fixture)
    for item in fixture:
        for function_set in ("visual", "all"):
            result = detect(item.image, embedder, provider, ontology, function_set=function_set, top_n=1)
            region, label, score = result.ranked[0]
            assert region.bbox == item.regions[item.planted_slot].bbox
            assert label == item.planted_label


def test_single_region_image_is_rank_one():
    ontology = builtin_ontology()
    embedder = MockEmbeddingProvider(ontology, seed=MOCK_SEED, dim=MOCK_DIM)
    image = RasterImage.solid(32, 32, embedder.color_of("apple"))
    provider = FixtureRegionProvider(
        {image.content_key(): [{"x": 4, "y": 4, "w": 8, "h": 8, "confidence": 1.0}]}
    )
    result = detect(image, embedder, provider, ontology, function_set="visual", top_n=3)
    assert len(result.ranked) == 1
    assert result.ranked[0][2] == pytest.approx(0.0)  # zero-variance guard


def test_top_n_clamps_to_region_count():
    ontology = builtin_ontology()
    embedder = MockEmbeddingProvider(ontology, seed=MOCK_SEED, dim=MOCK_DIM)
    fixture = build_planted_fixture(ontology, embedder, n_images=1)
    provider = region_provider_for(fixture)
    result = detect(fixture[0].image, embedder, provider, ontology, function_set="visual", top_n=99)
    assert len(result.ranked) == len(fixture[0].regions)


def test_zero_regions_is_provider_error():
    ontology = builtin_ontology()
    embedder = MockEmbeddingProvider(ontology, seed=MOCK_SEED, dim=MOCK_DIM)
    with pytest.raises(ProviderError):
        detect(
            RasterImage.solid(8, 8, (0, 0, 0)),
            embedder,
            FixtureRegionProvider({}),
            ontology,
        )


def test_ranked_scores_nondecreasing_and_bounded():
    ontology = builtin_ontology()
    embedder = MockEmbeddingProvider(ontology, seed=MOCK_SEED, dim=MOCK_DIM, noise=0.8)
    fixture = build_planted_fixture(ontology, embedder, n_images=5)
    provider = region_provider_for(fixture)
    for item in fixture:
        for function_set in ("visual", "knowledge", "all"):
            result = detect(item.image, embedder, provider, ontology, function_set=function_set, top_n=4)
            scores = [s for _, _, s in result.ranked]
            assert scores == sorted(scores)


def test_raw_function_scores_bounded_for_unit_vectors():
    from anomforge.detector import class_embeddings
    from anomforge.providers.base import embed_image, embed_text

    ontology = builtin_ontology()
    embedder = MockEmbeddingProvider(ontology, seed=MOCK_SEED, dim=MOCK_DIM, noise=1.5)
    fixture = build_planted_fixture(ontology, embedder, n_images=4)
    class_embs = class_embeddings(embedder, ontology)
    descs = {o.label: o.description for o in ontology.objects}
    for item in fixture:
        region_embs = [embed_image(embedder, item.image.crop(r.bbox)) for r in item.regions]
        image_emb = embed_image(embedder, item.image)
        values = (
            irv_scores(image_emb, region_embs)
            + rrv_scores(region_embs)
            + kb_scores(region_embs, class_embs, descs, 5, lambda t: embed_text(embedder, t))
        )
        for value in values:
            assert -1.0 - 1e-9 <= value <= 1.0 + 1e-9


def test_positive_rescaling_leaves_ranking_unchanged():
    # scaling every region embedding by one positive scalar before
    # normalization cannot change the ranked order
    ontology = tiny_ontology()
    rng = np.random.default_rng(4)
    vecs = rng.normal(size=(4, 3))
    normalized = [EmbeddingVector.of(v / np.linalg.norm(v)) for v in vecs]
    scaled = [EmbeddingVector.of((7.5 * v) / np.linalg.norm(7.5 * v)) for v in vecs]
    assert rrv_scores(normalized) == [pytest.approx(s) for s in rrv_scores(scaled)]
    image_vec = EmbeddingVector.of(np.array([0.0, 1.0, 0.0]))
    assert irv_scores(image_vec, normalized) == [pytest.approx(s) for s in irv_scores(image_vec, scaled)]
