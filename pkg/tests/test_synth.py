"""Procedural scene/mask synthesis and the jittered five-view sampler."""

import numpy as np
import pytest

from peelnet.errors import SynthesisError
from peelnet.imgio import save_frame, save_mask
from peelnet.masks import MaskPlane
from peelnet.synth import (
    MAX_HOLE_FRACTION,
    MIN_TARGET_HOLE_FRACTION,
    VIEWS_PER_SAMPLE,
    AffineJitter,
    SceneSampler,
    TrainSample,
    blob_mask,
    procedural_scene,
    synth_sample,
)


class TestProceduralScene:
    def test_shape_dtype_range(self):
        scene = procedural_scene(np.random.default_rng(0), 40, 56)
        assert scene.shape == (3, 40, 56)
        assert scene.dtype == np.float32
        assert scene.min() >= 0.0 and scene.max() <= 1.0

    def test_seed_determinism(self):
        a = procedural_scene(np.random.default_rng(7), 32, 32)
        b = procedural_scene(np.random.default_rng(7), 32, 32)
        assert np.array_equal(a, b)
        c = procedural_scene(np.random.default_rng(8), 32, 32)
        assert not np.array_equal(a, c)

    def test_scenes_are_not_flat(self):
        scene = procedural_scene(np.random.default_rng(3), 48, 48)
        assert scene.std() > 0.01


class TestBlobMask:
    def test_shape_and_dtype(self):
        bits = blob_mask(np.random.default_rng(1), 30, 20)
        assert bits.shape == (30, 20)
        assert bits.dtype == np.bool_

    def test_nonempty_and_not_full(self):
        for seed in range(5):
            bits = blob_mask(np.random.default_rng(seed), 64, 64)
            assert 0 < bits.sum() < 64 * 64

    def test_determinism(self):
        a = blob_mask(np.random.default_rng(5), 32, 32)
        b = blob_mask(np.random.default_rng(5), 32, 32)
        assert np.array_equal(a, b)


class TestSynthSample:
    def test_five_views_partitioned(self):
        rng = np.random.default_rng(2)
        scene = procedural_scene(rng, 96, 96)
        pool = [blob_mask(rng, 64, 64)]
        sample = synth_sample(scene, pool, rng, (64, 64))
        assert len(sample.frames) == VIEWS_PER_SAMPLE
        assert len(sample.holes) == len(sample.valids) == VIEWS_PER_SAMPLE
        for frame, hole, valid in zip(sample.frames, sample.holes, sample.valids):
            assert frame.shape == (3, 64, 64)
            assert frame.dtype == np.float32
            assert frame.min() >= 0.0 and frame.max() <= 1.0
            assert (hole.bits & valid.bits).sum() == 0
            assert (hole.bits | valid.bits).all()

    def test_ground_truth_is_unmasked_target(self):
        rng = np.random.default_rng(4)
        scene = procedural_scene(rng, 96, 96)
        sample = synth_sample(scene, [blob_mask(rng, 64, 64)], rng, (64, 64))
        assert np.array_equal(sample.ground_truth, sample.frames[0])
        assert sample.ground_truth is not sample.frames[0]

    def test_hole_fraction_limits(self):
        rng = np.random.default_rng(6)
        scene = procedural_scene(rng, 96, 96)
        for _ in range(5):
            sample = synth_sample(scene, [blob_mask(rng, 64, 64)], rng, (64, 64))
            total = 64 * 64
            target_frac = sample.holes[0].area() / total
            assert MIN_TARGET_HOLE_FRACTION <= target_frac <= MAX_HOLE_FRACTION
            for hole in sample.holes[1:]:
                assert hole.area() / total <= MAX_HOLE_FRACTION

    def test_identity_jitter_reproduces_center_crop(self):
        rng = np.random.default_rng(9)
        scene = procedural_scene(rng, 96, 96)
        pool = [blob_mask(rng, 64, 64)]
        sample = synth_sample(scene, pool, rng, (64, 64), jitter=AffineJitter.identity())
        crop = scene[:, 16:80, 16:80]
        for frame in sample.frames:
            assert np.allclose(frame, crop, atol=1e-6)
        # single pool mask + identity jitter: every hole is that mask
        for hole in sample.holes:
            assert np.array_equal(hole.bits, pool[0])

    def test_all_ones_pool_exhausts_retries(self):
        rng = np.random.default_rng(1)
        scene = procedural_scene(rng, 96, 96)
        full = np.ones((64, 64), dtype=bool)
        with pytest.raises(SynthesisError, match="usable hole"):
            synth_sample(scene, [full], rng, (64, 64))

    def test_empty_pool_rejected(self):
        rng = np.random.default_rng(1)
        scene = procedural_scene(rng, 96, 96)
        with pytest.raises(SynthesisError, match="pool"):
            synth_sample(scene, [], rng, (64, 64))

    def test_scene_too_small_rejected(self):
        rng = np.random.default_rng(1)
        scene = procedural_scene(rng, 32, 32)
        with pytest.raises(SynthesisError, match="smaller"):
            synth_sample(scene, [blob_mask(rng, 64, 64)], rng, (64, 64))

    def test_views_differ_under_default_jitter(self):
        rng = np.random.default_rng(11)
        scene = procedural_scene(rng, 96, 96)
        sample = synth_sample(scene, [blob_mask(rng, 64, 64)], rng, (64, 64))
        assert not np.array_equal(sample.frames[0], sample.frames[1])

    def test_wrong_view_count_rejected(self):
        frame = np.zeros((3, 8, 8), dtype=np.float32)
        hole = MaskPlane.zeros(8, 8)
        with pytest.raises(ValueError, match="views"):
            TrainSample([frame] * 3, [hole] * 3, [~hole] * 3, frame)


class TestSceneSampler:
    def test_seed_determinism(self):
        a = SceneSampler((32, 32), seed=5).draw()
        b = SceneSampler((32, 32), seed=5).draw()
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa, fb)
        for ha, hb in zip(a.holes, b.holes):
            assert ha == hb
        assert np.array_equal(a.ground_truth, b.ground_truth)

    def test_fixed_mode_memoizes(self):
        sampler = SceneSampler((32, 32), seed=3, fixed=True)
        first = sampler.draw()
        again = sampler.draw()
        assert again is first

    def test_unfixed_mode_varies(self):
        sampler = SceneSampler((32, 32), seed=3)
        first = sampler.draw()
        second = sampler.draw()
        assert not np.array_equal(first.ground_truth, second.ground_truth)

    def test_user_image_and_mask_sources(self, tmp_path):
        rng = np.random.default_rng(0)
        image_dir = tmp_path / "imgs"
        mask_dir = tmp_path / "masks"
        image_dir.mkdir()
        mask_dir.mkdir()
        # user scene large enough for the margined crop; user mask at frame size
        save_frame(image_dir / "scene.png", procedural_scene(rng, 96, 96))
        save_mask(mask_dir / "hole.png", MaskPlane(blob_mask(rng, 32, 32)))
        sampler = SceneSampler(
            (32, 32), seed=1, image_dir=str(image_dir), mask_dir=str(mask_dir)
        )
        for _ in range(4):
            sample = sampler.draw()
            assert sample.frames[0].shape == (3, 32, 32)
