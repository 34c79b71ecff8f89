import numpy as np
import pytest

from reldet.augment import MosaicSpec, hflip, random_crop, remap_box, sample_mosaic
from reldet.boxes import Box
from reldet.datagen import SceneRecord, generate_scene, geometric_predicates, relations_from_boxes


def scene_stream(start_seed=0, **kwargs):
    seed = start_seed
    while True:
        yield generate_scene(seed, "A", **kwargs)
        seed += 1


class TestRemapBox:
    def test_example(self):
        out = remap_box(Box(0.5, 0.5, 0.2, 0.2), 2, (0, 0))
        assert out == Box(0.25, 0.25, 0.1, 0.1)

    def test_identity_grid(self):
        b = Box(0.3, 0.7, 0.2, 0.1)
        assert remap_box(b, 1, (0, 0)) == b

    def test_inverse_recovers(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            b = Box(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.3, 2))
            g = int(rng.integers(1, 4))
            row, col = int(rng.integers(0, g)), int(rng.integers(0, g))
            m = remap_box(b, g, (row, col))
            assert abs(m.cx * g - col - b.cx) < 1e-12
            assert abs(m.cy * g - row - b.cy) < 1e-12
            assert abs(m.w * g - b.w) < 1e-12
            assert abs(m.h * g - b.h) < 1e-12

    def test_area_conservation(self):
        b = Box(0.5, 0.5, 0.4, 0.3)
        for g in (1, 2, 3):
            m = remap_box(b, g, (0, 0))
            assert m.area() == pytest.approx(b.area() / g**2)

    def test_bad_cell(self):
        with pytest.raises(ValueError):
            remap_box(Box(0.5, 0.5, 0.1, 0.1), 2, (2, 0))


class TestMosaic:
    def test_grid_frequencies(self):
        # sampling probabilities 0.4 / 0.3 / 0.3 within +-2% over 10k draws;
        # the grid side is observed through how many records a mosaic consumes
        cache = [generate_scene(s, "A", image_size=16) for s in range(10)]
        consumed = {"n": 0}

        def cycling_stream():
            i = 0
            while True:
                consumed["n"] += 1
                yield cache[i % len(cache)]
                i += 1

        rng = np.random.default_rng(5)
        stream = cycling_stream()
        counts = {1: 0, 4: 0, 9: 0}
        n = 10_000
        for _ in range(n):
            before = consumed["n"]
            sample_mosaic(stream, rng, MosaicSpec())
            counts[consumed["n"] - before] += 1
        assert abs(counts[1] / n - 0.4) < 0.02
        assert abs(counts[4] / n - 0.3) < 0.02
        assert abs(counts[9] / n - 0.3) < 0.02

    def test_identity_for_single_tile(self):
        rng = np.random.default_rng(0)
        stream = scene_stream(10)
        rec = sample_mosaic(stream, rng, MosaicSpec((1.0, 0.0, 0.0)))
        original = generate_scene(10, "A")
        assert np.array_equal(rec.image, original.image)
        assert rec.instances == original.instances

    def test_tiles_concatenate_annotations(self):
        rng = np.random.default_rng(0)
        stream = scene_stream(0)
        rec = sample_mosaic(stream, rng, MosaicSpec((0.0, 1.0, 0.0)))
        sources = [generate_scene(s, "A") for s in range(4)]
        assert len(rec.instances) == sum(len(s.instances) for s in sources)
        assert len(rec.relations) == sum(len(s.relations) for s in sources)
        rec.validate()

    def test_detection_only_tile_contributes_no_relations(self):
        def stream():
            yield generate_scene(0, "A", detection_only=True)
            for s in range(1, 4):
                yield generate_scene(s, "A")

        rng = np.random.default_rng(0)
        rec = sample_mosaic(stream(), rng, MosaicSpec((0.0, 1.0, 0.0)))
        n_det_only = len(generate_scene(0, "A", detection_only=True).instances)
        expected = sum(len(generate_scene(s, "A").relations) for s in range(1, 4))
        assert len(rec.relations) == expected
        assert len(rec.instances) > n_det_only

    def test_exhausted_stream_errors(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="exhausted"):
            sample_mosaic(iter([generate_scene(0, "A")]), rng, MosaicSpec((0.0, 1.0, 0.0)))

    def test_area_conservation_through_mosaic(self):
        rng = np.random.default_rng(1)
        sources = [generate_scene(s, "A") for s in range(20, 29)]
        rec = sample_mosaic(scene_stream(20), rng, MosaicSpec((0.0, 0.0, 1.0)))
        flat = [inst.box.area() for src in sources for inst in src.instances]
        tiled = [inst.box.area() for inst in rec.instances]
        for orig, new in zip(flat, tiled):
            assert new == pytest.approx(orig / 9.0)


class TestHflip:
    def test_center_mirrors(self):
        rec = generate_scene(3, "A")
        flipped = hflip(rec)
        for a, b in zip(rec.instances, flipped.instances):
            assert b.box.cx == pytest.approx(1.0 - a.box.cx)
            assert b.box.cy == a.box.cy

    def test_left_right_swap_verified_geometrically(self):
        # flipped predicates must equal predicates recomputed on flipped boxes
        for seed in range(15):
            rec = generate_scene(seed, "A")
            flipped = hflip(rec)
            recomputed = relations_from_boxes([inst.box for inst in flipped.instances])
            assert flipped.relations == recomputed

    def test_double_flip_identity(self):
        rec = generate_scene(8, "A")
        twice = hflip(hflip(rec))
        assert np.array_equal(twice.image, rec.image)
        for a, b in zip(rec.instances, twice.instances):
            # 1 - (1 - cx) can differ from cx in the final ulp
            assert b.box.cx == pytest.approx(a.box.cx, abs=1e-12)
            assert (b.box.cy, b.box.w, b.box.h) == (a.box.cy, a.box.w, a.box.h)
            assert b.labels == a.labels
        assert twice.relations == rec.relations

    def test_missing_swap_partner_errors(self):
        rec = next(
            generate_scene(s, "A")
            for s in range(50)
            if any("left of" in r.predicates for r in generate_scene(s, "A").relations)
        )
        with pytest.raises(ValueError, match="no swap partner"):
            hflip(rec, swaps={"left of": "", "right of": ""})


class TestRandomCrop:
    def test_min_scale_one_is_identity(self):
        rec = generate_scene(4, "A")
        out = random_crop(rec, np.random.default_rng(0), min_scale=1.0)
        assert out is rec

    def test_boxes_stay_valid_fuzz(self):
        rng = np.random.default_rng(0)
        for seed in range(100):
            rec = generate_scene(seed % 25, "A")
            for _ in range(10):
                rec2 = random_crop(rec, rng, min_scale=0.4)
                for inst in rec2.instances:
                    x1, y1, x2, y2 = inst.box.corners()
                    assert 0.0 <= x1 < x2 <= 1.0
                    assert 0.0 <= y1 < y2 <= 1.0

    def test_dropped_instances_drop_their_relations(self):
        # crop tightly around one instance; relations to dropped partners vanish
        rec = generate_scene(12, "A")
        rng = np.random.default_rng(1)
        for _ in range(50):
            out = random_crop(rec, rng, min_scale=0.3)
            out.validate()  # referential integrity after re-indexing
            if len(out.instances) < len(rec.instances):
                return
        pytest.skip("crop never dropped an instance for this seed")

    def test_deterministic_given_seed(self):
        rec = generate_scene(4, "A")
        a = random_crop(rec, np.random.default_rng(33), min_scale=0.5)
        b = random_crop(rec, np.random.default_rng(33), min_scale=0.5)
        assert np.array_equal(a.image, b.image)
        assert a.instances == b.instances


class TestAugmentationChains:
    def test_referential_integrity_after_random_chains(self):
        rng = np.random.default_rng(0)
        stream = scene_stream(0)
        for _ in range(1000):
            op = rng.integers(0, 3)
            if op == 0:
                rec = sample_mosaic(stream, rng, MosaicSpec())
            elif op == 1:
                rec = random_crop(next(stream), rng, min_scale=0.5)
            else:
                rec = hflip(next(stream))
            rec.validate()
            for rel in rec.relations:
                assert 0 <= rel.subject < len(rec.instances)
                assert 0 <= rel.object < len(rec.instances)
