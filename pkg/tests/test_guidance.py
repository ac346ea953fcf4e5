from __future__ import unicode_literals
import unittest

import numpy as np

from focalguide.core.errors import ConfigError, ContractError
from focalguide.core.rng import Rng
from focalguide.core.tensor import cosine_similarity
from focalguide.guidance.cache import (cache_weights, aggregate_cache, threshold_cache, apply_cache,
                                       layer_similarity)
from focalguide.guidance.config import GuidanceConfig
from focalguide.guidance.fsg import (SignMode, keyword_similarity, select_keywords, compute_anchor,
                                     fuse_text_value, similarity_grid, extract_region, inject_latent,
                                     build_anchors, project_anchor_and_text)
from focalguide.guidance.runtime import FocalGuidance, GuidedVelocity
from focalguide.model.dit import DiT
from focalguide.synth.scene import ground_truth_region_iou

from .base import tiny_config, tiny_scene, conditioning


class KeywordTestCase(unittest.TestCase):

    def setUp(self):
        self.scene = tiny_scene()

    def test_selection(self):
        sim = keyword_similarity(self.scene.text, self.scene.image)
        self.assertEqual(sim.shape, (3, 16))
        self.assertAlmostEqual(sim[0].max(), 1.0)
        self.assertEqual(select_keywords(sim, 0.2), [0, 1])
        self.assertEqual(select_keywords(sim, 1.0), [])

    def test_printed_negative_sign_selects_nothing(self):
        sim = keyword_similarity(self.scene.text, self.scene.image, SignMode.paper_negative)
        self.assertEqual(select_keywords(sim, 0.2), [])
        anchors = build_anchors(self.scene.text, self.scene.image, 0.2, 0.5, SignMode.paper_negative, (4, 4))
        self.assertEqual(anchors, [])

    def test_regions_match_ground_truth(self):
        anchors = build_anchors(self.scene.text, self.scene.image, 0.2, 0.5, SignMode.positive, (4, 4))
        self.assertEqual([a.index for a in anchors], [0, 1])
        for anchor, truth in zip(anchors, self.scene.regions):
            self.assertEqual(ground_truth_region_iou(anchor.region, truth), 1.0)
            self.assertEqual(anchor.weights.max(), 1.0)
            self.assertFalse(np.any(anchor.weights[~anchor.region]))

    def test_explicit_keywords(self):
        anchors = build_anchors(self.scene.text, self.scene.image, 0.99, 0.5, SignMode.positive, (4, 4),
                                keywords=[1])
        self.assertEqual([a.index for a in anchors], [1])
        with self.assertRaises(ConfigError):
            build_anchors(self.scene.text, self.scene.image, 0.2, 0.5, SignMode.positive, (4, 4), keywords=[3])

    def test_anchor(self):
        image = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
        self.assertTrue(np.allclose(compute_anchor([0.5, 1.0, 0.0], image), [0.5, 2.0]))
        self.assertTrue(np.array_equal(compute_anchor([0.0, 0.0, 0.0], image), [0.0, 0.0]))
        with self.assertRaises(ConfigError):
            compute_anchor([1.0], image)

    def test_projection(self):
        t, v = project_anchor_and_text(np.ones(2), np.ones(3), np.eye(2), np.ones((3, 2)))
        self.assertTrue(np.array_equal(t, [1.0, 1.0]))
        self.assertTrue(np.array_equal(v, [3.0, 3.0]))
        with self.assertRaises(ConfigError):
            project_anchor_and_text(np.ones(3), np.ones(3), np.eye(2), np.ones((3, 2)))


class FusionTestCase(unittest.TestCase):

    def test_zero_strength_is_identity(self):
        value = Rng(1).normal((8,))
        self.assertTrue(np.array_equal(fuse_text_value(value, Rng(2).normal((8,)), 0.0), value))

    def test_additive(self):
        self.assertTrue(np.array_equal(fuse_text_value([1.0, 2.0], [2.0, 0.0], 0.5), [2.0, 2.0]))
        with self.assertRaises(ConfigError):
            fuse_text_value([1.0, 2.0], [1.0], 0.5)


class RegionTestCase(unittest.TestCase):

    def test_extract(self):
        mask, weights = extract_region([[0.0, 0.2], [0.6, 1.0]], 0.5)
        self.assertEqual(mask.tolist(), [[False, False], [True, True]])
        self.assertAlmostEqual(weights[1, 0], 0.6)
        self.assertEqual(weights[1, 1], 1.0)
        self.assertIsNone(extract_region(np.full((3, 3), 0.4), 0.5))

    def test_similarity_grid(self):
        grid = similarity_grid([1.0, 2.0, 3.0, 4.0], (2, 2), (4, 4))
        self.assertEqual(grid[:, 0].tolist(), [1.0, 1.0, 3.0, 3.0])
        self.assertEqual(grid[3, 3], 4.0)
        with self.assertRaises(ConfigError):
            similarity_grid([1.0, 2.0, 3.0], (2, 2), (4, 4))

    def test_injection_is_local(self):
        z = Rng(3).normal((2, 4, 4, 3))
        mask = np.zeros((4, 4), dtype=bool)
        mask[1:3, 0] = True
        weights = np.where(mask, 0.5, 0.0)
        vec = np.array([[1.0, -1.0, 2.0]])
        out = inject_latent(z, [(mask, weights)], vec, 0.2)
        self.assertTrue(np.array_equal(out[1], z[1]))
        self.assertTrue(np.array_equal(out[0][~mask], z[0][~mask]))
        self.assertTrue(np.allclose(out[0][mask] - z[0][mask], 0.1 * vec))
        self.assertTrue(np.array_equal(inject_latent(z, [(mask, weights)], vec, 0.0), z))

    def test_injection_errors(self):
        z = np.zeros((1, 4, 4, 3))
        with self.assertRaises(ContractError):
            inject_latent(z, [(np.ones((5, 5), dtype=bool), np.ones((5, 5)))], np.ones((1, 3)), 0.1)
        with self.assertRaises(ConfigError):
            inject_latent(z, [(np.ones((4, 4), dtype=bool), np.ones((4, 4)))], np.ones((2, 3)), 0.1)


class CacheTestCase(unittest.TestCase):

    def test_weights(self):
        self.assertEqual(cache_weights([1, 2], 4).tolist(), [0.5, 0.0, 0.0, 0.5])
        with self.assertRaises(ConfigError):
            cache_weights([0, 1, 2, 3], 4)
        for weak in ([], [0], [1, 3], [0, 2, 3]):
            self.assertAlmostEqual(cache_weights(weak, 4).sum(), 1.0)
        with self.assertRaises(ConfigError):
            cache_weights([1, 9], 4)

    def test_aggregate(self):
        maps = {0: np.ones((1, 1, 2, 2)), 3: np.full((1, 1, 2, 2), 3.0)}
        cache = aggregate_cache(maps, [1, 2], 4, t=0.5)
        self.assertTrue(np.allclose(cache.maps, 2.0))
        self.assertEqual(cache.num_keywords, 1)
        with self.assertRaises(ContractError):
            aggregate_cache({0: np.ones((1, 1, 2, 2))}, [1, 2], 4)

    def test_threshold(self):
        self.assertEqual(threshold_cache([0.1, 0.3, 0.31, 0.9], 0.3).tolist(), [0.0, 0.0, 0.31, 0.9])
        maps = Rng(9).uniform((2, 2, 4, 4))
        once = threshold_cache(maps, 0.4)
        self.assertTrue(np.array_equal(threshold_cache(once, 0.4), once))

    def test_normalized_threshold(self):
        cache = aggregate_cache({0: [[[[0.0, 2.0], [4.0, 1.0]]]], 1: [[[[0.0, 2.0], [4.0, 1.0]]]]}, [], 2)
        self.assertEqual(cache.normalized().thresholded(0.3).maps.tolist(), [[[[0.0, 0.5], [1.0, 0.0]]]])

    def test_strong_layer_refused(self):
        with self.assertRaises(ContractError):
            apply_cache(np.zeros((4, 2)), np.ones((1, 4)), np.ones((1, 2)), 0.1, 0, [1, 2])

    def test_off_support_unchanged(self):
        z = Rng(4).normal((1, 2, 2, 3))
        maps = np.array([[[[0.0, 0.5], [0.0, 1.0]]]])
        vec = np.array([[1.0, 2.0, 3.0]])
        out = apply_cache(z, maps, vec, 0.2, 1, [1])
        self.assertTrue(np.array_equal(out[0, :, 0], z[0, :, 0]))
        self.assertTrue(np.allclose(out[0, 1, 1] - z[0, 1, 1], 0.2 * vec[0]))
        self.assertTrue(np.array_equal(apply_cache(z, maps, vec, 0.0, 1, [1]), z))

    def test_alignment_grows_with_strength(self):
        z = Rng(6).normal((1, 3, 3, 5))
        maps = np.full((1, 1, 3, 3), 0.7)
        vec = Rng(7).normal((1, 5))
        previous = None
        for strength in (0.0, 0.1, 0.5, 1.0, 5.0):
            out = apply_cache(z, maps, vec, strength, 2, [2])
            cos = [cosine_similarity(cell, vec[0]) for cell in out.reshape(-1, 5)]
            if previous is not None:
                self.assertTrue(all(b >= a - 1e-12 for a, b in zip(previous, cos)))
            previous = cos

    def test_layer_similarity(self):
        features = np.array([[1.0, 0.0], [0.0, 0.0], [-2.0, 0.0], [0.0, 3.0]])
        sim = layer_similarity([1.0, 0.0], features, grid=(1, 2, 2))
        self.assertEqual(sim.tolist(), [[[1.0, 0.0], [-1.0, 0.0]]])
        with self.assertRaises(ConfigError):
            layer_similarity([1.0, 0.0], features)


class RuntimeTestCase(unittest.TestCase):

    def setUp(self):
        self.scene = tiny_scene()
        self.cond = conditioning(self.scene)
        self.model = DiT(tiny_config())
        self.z = Rng(9).normal(self.scene.latent.shape)

    def _counters(self, config):
        guidance = FocalGuidance(config)
        iv = guidance.intervention(self.model, self.z, 0.5, self.cond)
        return iv, guidance.counters

    def test_full_guidance(self):
        iv, counters = self._counters(GuidanceConfig())
        self.assertEqual(iv.keyword_positions, [0, 1])
        self.assertEqual(iv.cache_maps.shape, (2, 2, 4, 4))
        self.assertEqual(sorted(iv.weak_layers), [1, 2])
        self.assertEqual(dict(counters), {'cache_pass': 1, 'inject_latent': 1, 'fuse_text_value': 2,
                                          'apply_cache': 2})

    def test_fsg_only(self):
        iv, counters = self._counters(GuidanceConfig().ablation(fsg=True, cache=False))
        self.assertIsNone(iv.cache_maps)
        self.assertEqual(counters['cache_pass'], 0)
        self.assertEqual(counters['apply_cache'], 0)
        self.assertEqual(counters['fuse_text_value'], 2)

    def test_cache_only(self):
        iv, counters = self._counters(GuidanceConfig().ablation(fsg=False, cache=True))
        self.assertEqual(counters['inject_latent'], 0)
        self.assertEqual(counters['fuse_text_value'], 0)
        self.assertEqual(counters['cache_pass'], 1)
        self.assertEqual(counters['apply_cache'], 2)

    def test_all_fusion_layers(self):
        _, counters = self._counters(GuidanceConfig(fusion_layers='all'))
        self.assertEqual(counters['fuse_text_value'], 4)

    def test_weak_layer_override(self):
        guidance = FocalGuidance(GuidanceConfig(weak_layers='0'))
        self.assertEqual(guidance.weak_layers(self.model), [0])
        iv = guidance.intervention(self.model, self.z, 0.5, self.cond)
        self.assertEqual(sorted(iv.weak_layers), [0])

    def test_weak_layer_override_out_of_range(self):
        guidance = FocalGuidance(GuidanceConfig(weak_layers='1,9'))
        with self.assertRaises(ConfigError):
            guidance.weak_layers(self.model)
        with self.assertRaises(ConfigError):
            guidance.intervention(self.model, self.z, 0.5, self.cond)

    def test_plan_is_reused(self):
        guidance = FocalGuidance(GuidanceConfig())
        self.assertIs(guidance.plan(self.cond, (4, 4)), guidance.plan(self.cond, (4, 4)))

    def test_disabled_is_bit_identical(self):
        base = self.model(self.z, 0.5, self.cond)
        for config in (GuidanceConfig.off(), GuidanceConfig(lambda_txt=0.0, lambda_lat=0.0, lambda_cache=0.0)):
            guidance = FocalGuidance(config)
            self.assertIsNone(guidance.intervention(self.model, self.z, 0.5, self.cond))
            velocity = GuidedVelocity(self.model, guidance)(self.z, 0.5, self.cond)
            self.assertTrue(np.array_equal(velocity, base))
            self.assertFalse(guidance.counters)

    def test_no_keywords(self):
        guidance = FocalGuidance(GuidanceConfig(sign_mode='paper_negative'))
        self.assertIsNone(guidance.intervention(self.model, self.z, 0.5, self.cond))

    def test_guided_velocity_changes_output(self):
        velocity = GuidedVelocity(self.model, FocalGuidance(GuidanceConfig(lambda_lat=0.5)), hooks=True)
        out = velocity(self.z, 0.5, self.cond)
        self.assertEqual(len(velocity.last_states), 4)
        self.assertIsNotNone(velocity.last_intervention)
        self.assertFalse(np.array_equal(out, self.model(self.z, 0.5, self.cond)))
