import numpy as np
import pytest
import torch

from reldet.boxes import Box, iou
from reldet.datagen import generate_scene
from reldet.decoder import RelationOutput
from reldet.detector import DTYPE, DetectorOutput
from reldet.inference import (
    InferConfig,
    ScoredTriplet,
    assemble,
    detect_relationships,
    pair_overlap,
    pnms,
    retrieve_by_image,
    triplets_to_json,
    triplet_class_strings,
)


def make_triplet(sub, obj, cls, score, q=0, emb=None):
    if emb is None:
        emb = np.zeros(4)
    return ScoredTriplet(sub, obj, emb, cls, score, q)


def random_triplets(rng, n, num_classes=3, clustered=True):
    out = []
    # clustered boxes so suppression actually fires
    centers = [(0.3, 0.3), (0.7, 0.6)] if clustered else None
    for q in range(n):
        if clustered:
            cx, cy = centers[int(rng.integers(0, len(centers)))]
            sub = Box(cx + rng.uniform(-0.05, 0.05), cy + rng.uniform(-0.05, 0.05), 0.2, 0.2)
            ox, oy = centers[int(rng.integers(0, len(centers)))]
            obj = Box(ox + rng.uniform(-0.05, 0.05), oy + rng.uniform(-0.05, 0.05), 0.2, 0.2)
        else:
            sub = Box(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.15, 0.15)
            obj = Box(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.15, 0.15)
        out.append(
            make_triplet(sub, obj, int(rng.integers(0, num_classes)), float(rng.random()), q)
        )
    return out


def reference_pnms(triplets, threshold, per_class):
    """Independent O(K^2) greedy reference built on index arrays."""
    order = sorted(range(len(triplets)), key=lambda i: (-triplets[i].score, triplets[i].query_index, triplets[i].class_index))
    kept_idx = []
    for i in order:
        ok = True
        for j in kept_idx:
            if per_class and triplets[j].class_index != triplets[i].class_index:
                continue
            ov = min(
                iou(triplets[i].subject_box, triplets[j].subject_box),
                iou(triplets[i].object_box, triplets[j].object_box),
            )
            if ov > threshold:
                ok = False
                break
        if ok:
            kept_idx.append(i)
    return [triplets[i] for i in kept_idx]


class TestPnms:
    def test_duplicate_suppressed_same_class(self):
        a = make_triplet(Box(0.3, 0.3, 0.2, 0.2), Box(0.7, 0.7, 0.2, 0.2), 0, 0.9, 0)
        b = make_triplet(Box(0.3, 0.3, 0.2, 0.2), Box(0.7, 0.7, 0.2, 0.2), 0, 0.8, 1)
        kept = pnms([a, b], InferConfig(pnms_threshold=0.7))
        assert kept == [a]

    def test_identical_triplets_different_classes_survive_per_class(self):
        a = make_triplet(Box(0.3, 0.3, 0.2, 0.2), Box(0.7, 0.7, 0.2, 0.2), 0, 0.9, 0)
        b = make_triplet(Box(0.3, 0.3, 0.2, 0.2), Box(0.7, 0.7, 0.2, 0.2), 1, 0.8, 1)
        assert len(pnms([a, b], InferConfig(per_class=True))) == 2
        assert len(pnms([a, b], InferConfig(per_class=False))) == 1

    def test_matches_reference_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            triplets = random_triplets(rng, int(rng.integers(2, 30)))
            for per_class in (True, False):
                cfg = InferConfig(pnms_threshold=0.7, per_class=per_class)
                assert pnms(triplets, cfg) == reference_pnms(triplets, 0.7, per_class)

    def test_threshold_one_is_identity_without_duplicates(self):
        rng = np.random.default_rng(1)
        triplets = random_triplets(rng, 20, clustered=False)
        cfg = InferConfig(pnms_threshold=1.0)
        kept = pnms(triplets, cfg)
        assert sorted(kept, key=lambda t: t.query_index) == sorted(
            triplets, key=lambda t: t.query_index
        )

    def test_per_class_keeps_at_least_vanilla(self):
        rng = np.random.default_rng(2)
        for trial in range(200):
            triplets = random_triplets(rng, int(rng.integers(2, 25)))
            per_class = pnms(triplets, InferConfig(per_class=True))
            vanilla = pnms(triplets, InferConfig(per_class=False))
            assert len(per_class) >= len(vanilla)

    def test_output_is_subset_scores_non_increasing_with_certificate(self):
        rng = np.random.default_rng(3)
        for trial in range(50):
            triplets = random_triplets(rng, 20)
            cfg = InferConfig(pnms_threshold=0.7)
            kept = pnms(triplets, cfg)
            assert all(k in triplets for k in kept)
            scores = [k.score for k in kept]
            assert scores == sorted(scores, reverse=True)
            kept_set = {id(k) for k in kept}
            for t in triplets:
                if id(t) in kept_set:
                    continue
                earlier = [
                    k for k in kept
                    if (k.score, -k.query_index) > (t.score, -t.query_index)
                    and k.class_index == t.class_index
                ]
                assert any(pair_overlap(t, k) > cfg.pnms_threshold for k in earlier)


def build_relation_output(m, k, scores, temperature=0.07):
    return RelationOutput(
        relation_embeddings=torch.from_numpy(np.eye(m, 4 + m)).to(DTYPE),
        subject_logits=torch.from_numpy(np.tile(np.arange(3.0, 0.0, -1.0), (m, 1))).to(DTYPE),
        object_logits=torch.from_numpy(np.tile(np.arange(1.0, 4.0), (m, 1))).to(DTYPE),
        class_logits=torch.from_numpy(scores / temperature).to(DTYPE),
        temperature_cls=torch.tensor(temperature, dtype=DTYPE),
        temperature_index=torch.tensor(temperature, dtype=DTYPE),
    )


def build_detector_output(n=3):
    boxes = torch.tensor([[0.2, 0.2, 0.1, 0.1], [0.5, 0.5, 0.1, 0.1], [0.8, 0.8, 0.1, 0.1]],
                         dtype=DTYPE)[:n]
    return DetectorOutput(
        instance_embeddings=torch.from_numpy(np.eye(n, 8)).to(DTYPE),
        boxes=boxes,
        class_logits=torch.zeros((n, 0), dtype=DTYPE),
        temperature=torch.tensor(0.07, dtype=DTYPE),
    )


class TestAssemble:
    def test_top_scoring_pair_ranks_first(self):
        scores = np.array([[0.1, 0.9], [0.3, 0.2]])
        out = assemble(build_detector_output(), build_relation_output(2, 2, scores), 2, top_k=4)
        assert (out[0].query_index, out[0].class_index) == (0, 1)
        assert out[0].score == pytest.approx(0.9)
        # subject index argmax of [3,2,1] -> 0; object argmax of [1,2,3] -> 2
        assert out[0].subject_box == Box(0.2, 0.2, 0.1, 0.1)
        assert out[0].object_box == Box(0.8, 0.8, 0.1, 0.1)

    def test_top_k_one(self):
        scores = np.array([[0.1, 0.9], [0.3, 0.2]])
        out = assemble(build_detector_output(), build_relation_output(2, 2, scores), 2, top_k=1)
        assert len(out) == 1

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(0)
        scores = rng.random((5, 7))
        out = assemble(build_detector_output(), build_relation_output(5, 7, scores), 7, top_k=35)
        flat = sorted(
            ((scores[j, c], j, c) for j in range(5) for c in range(7)),
            key=lambda x: (-x[0], x[1], x[2]),
        )
        assert len(out) == 35
        for got, (s, j, c) in zip(out, flat):
            assert (got.query_index, got.class_index) == (j, c)
            assert got.score == pytest.approx(s)

    def test_score_invariant_to_relation_embedding_scale(self):
        # scores come from cosine similarity, so scaling r leaves them fixed
        rng = np.random.default_rng(1)
        r = rng.normal(size=(3, 6))
        q = rng.normal(size=(4, 6))
        q /= np.linalg.norm(q, axis=1, keepdims=True)

        def cos_scores(rr):
            rn = rr / np.linalg.norm(rr, axis=1, keepdims=True)
            return rn @ q.T

        assert np.allclose(cos_scores(r), cos_scores(3.7 * r))


class TestEndToEndInference:
    @pytest.fixture(scope="class")
    def model(self):
        from reldet.model import VRDModel, make_model_config
        from reldet.language import unify_label_spaces
        from reldet.datagen import vocabulary

        cfg = make_model_config(
            image_size=64, patch_size=16, depth=1, width=32, heads=2,
            num_queries=6, decoder_layers=1, text_dim=32,
        )
        model = VRDModel(cfg)
        objects, predicates = vocabulary("A")
        triplets = [("red circle", "above", "blue square"), ("blue square", "below", "red circle")]
        model.label_space = unify_label_spaces([(objects, triplets)])
        return model

    def test_detect_relationships_runs_and_is_deterministic(self, model):
        rec = generate_scene(5, "A")
        classes = list(model.label_space.relation_triplets)
        out1 = detect_relationships(model, rec, classes, InferConfig(top_k=10))
        out2 = detect_relationships(model, rec, classes, InferConfig(top_k=10))
        assert len(out1) == len(out2)
        for a, b in zip(out1, out2):
            assert (a.subject_box, a.object_box, a.class_index, a.score, a.query_index) == (
                b.subject_box, b.object_box, b.class_index, b.score, b.query_index
            )
            assert np.array_equal(a.relation_embedding, b.relation_embedding)
        assert all(isinstance(t, ScoredTriplet) for t in out1)

    def test_retrieval_self_match_ranks_first(self, model):
        rec = generate_scene(5, "A")
        corpus = [generate_scene(9, "A"), rec, generate_scene(11, "A")]
        classes = list(model.label_space.relation_triplets)
        ranked = retrieve_by_image(model, rec, corpus, classes, InferConfig(top_k=10))
        assert ranked[0][0] == 1  # the query scene itself
        assert ranked[0][2] == pytest.approx(1.0, abs=1e-9)

    def test_retrieval_score_floor_error(self, model):
        rec = generate_scene(5, "A")
        classes = list(model.label_space.relation_triplets)
        with pytest.raises(ValueError, match="no query embedding"):
            retrieve_by_image(model, rec, [rec], classes, InferConfig(top_k=5), score_floor=1.0)

    def test_triplets_to_json_schema(self, model):
        rec = generate_scene(5, "A")
        classes = list(model.label_space.relation_triplets)
        strings = triplet_class_strings(classes)
        out = detect_relationships(model, rec, classes, InferConfig(top_k=3))
        payload = triplets_to_json(out, strings)
        for entry in payload:
            assert set(entry) == {"sub_box", "obj_box", "class_string", "score"}
            assert len(entry["sub_box"]) == 4 and len(entry["obj_box"]) == 4
            assert entry["class_string"] in strings
