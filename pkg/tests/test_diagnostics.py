from __future__ import unicode_literals
import unittest

import numpy as np

from focalguide.core.errors import ConfigError
from focalguide.core.rng import Rng
from focalguide.core.storage import read_csv
from focalguide.diagnostics.moran import (morans_i_frame, morans_i_layer, std_layer, weight_sum,
                                          expected_morans_i, morans_i_permutation_test)
from focalguide.diagnostics.profile import (WeakRule, LayerProfile, identify_weak_layers, mark_weak,
                                            profile_layer_states, sampled_steps, export_heatmap, HeatmapRow)
from focalguide.model.dit import DiT, DitConfig, Conditioning
from focalguide.synth.scene import SceneSpec, render_scene

from .base import naive_morans_i, TempDirTestCase


def profiles_from(values):
    return [LayerProfile(layer=l, morans_i=v, std=0.1) for l, v in enumerate(values)]


class MoransITestCase(unittest.TestCase):

    def test_checkerboard(self):
        frame = [[1.0, 0.0], [0.0, 1.0]]
        self.assertAlmostEqual(morans_i_frame(frame), -4.0)
        self.assertAlmostEqual(morans_i_frame(frame, normalize_by_w=True), -1.0 / 3)

    def test_matches_dense_sum(self):
        rng = Rng(5)
        for i in range(5):
            frame = rng.uniform((6, 6))
            for normalize in (False, True):
                self.assertAlmostEqual(morans_i_frame(frame, normalize), naive_morans_i(frame, normalize), places=10)
        frame = rng.uniform((3, 7))
        self.assertAlmostEqual(morans_i_frame(frame), naive_morans_i(frame), places=10)

    def test_constant_frame(self):
        self.assertEqual(morans_i_frame(np.full((4, 4), 0.3)), 0.0)
        self.assertEqual(std_layer(np.ones((2, 3, 3))), 0.0)

    def test_translation_and_scale_invariance(self):
        rng = Rng(12)
        for i in range(20):
            frame = rng.spawn(i).uniform((6, 6))
            value = morans_i_frame(frame)
            for shift in (-3.0, 0.25, 10.0):
                self.assertAlmostEqual(morans_i_frame(frame + shift), value, delta=1e-10)
            for scale in (-2.5, 1e-3, 7.0, 1e3):
                self.assertAlmostEqual(morans_i_frame(scale * frame), value, delta=1e-10)

    def test_smooth_bump_beats_noise(self):
        yy, xx = np.mgrid[0:7, 0:7]
        wins = 0
        for seed in range(50):
            rng = Rng(seed)
            cy, cx = rng.uniform((2,), 2.0, 4.0)
            bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * 1.5 ** 2))
            noise = rng.spawn('noise').normal((7, 7))
            wins += morans_i_frame(bump) > morans_i_frame(noise)
        self.assertGreaterEqual(wins, 49)

    def test_too_small(self):
        with self.assertRaises(ConfigError):
            morans_i_frame([[1.0]])
        with self.assertRaises(ConfigError):
            morans_i_layer(np.zeros((3, 3)))

    def test_layer_mean(self):
        maps = np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]]])
        self.assertAlmostEqual(morans_i_layer(maps), -2.0)
        self.assertAlmostEqual(std_layer(maps), 0.25)

    def test_weight_sum(self):
        self.assertEqual(weight_sum(2, 2), 12)
        self.assertEqual(weight_sum(6, 6), 220)
        self.assertEqual(weight_sum(1, 5), 8)

    def test_expectation(self):
        self.assertAlmostEqual(expected_morans_i(36, normalize_by_w=True), -1.0 / 35)
        self.assertAlmostEqual(expected_morans_i(36, height=6, width=6), -220.0 / 35)
        with self.assertRaises(ConfigError):
            expected_morans_i(36)

    def test_permutation_test(self):
        frame = np.zeros((6, 6))
        frame[:, :3] = 1.0
        result = morans_i_permutation_test(frame, 99, Rng(1), normalize_by_w=True)
        self.assertEqual(len(result.replicates), 99)
        self.assertGreater(result.morans_i, 0.5)
        self.assertLessEqual(result.p_value, 0.05)
        with self.assertRaises(ConfigError):
            morans_i_permutation_test(frame, 0, Rng(1))


class WeakRuleTestCase(unittest.TestCase):

    def test_parse(self):
        self.assertEqual(WeakRule.parse('bottom:0.4').fraction, 0.4)
        self.assertEqual(WeakRule.parse('list:5,2-3').indices, [2, 3, 5])
        self.assertEqual(WeakRule.parse('preset:wan2.1-i2v').indices, list(range(11, 27)))
        self.assertEqual(str(WeakRule.parse('list:5,2-3')), 'list:2-3,5')
        for text in ('bottom:1.5', 'bottom:x', 'list:3-1', 'middle:1', 'preset:none'):
            with self.assertRaises(ConfigError):
                WeakRule.parse(text)

    def test_bottom_fraction(self):
        profiles = profiles_from([0.9, 0.1, 0.5, 0.2, 0.8, 0.3, 0.7, 0.6])
        self.assertEqual(identify_weak_layers(profiles, WeakRule(fraction=0.25)), [1, 3])
        # ceil(0.3 * 8) = 3
        self.assertEqual(identify_weak_layers(profiles, WeakRule(fraction=0.3)), [1, 3, 5])

    def test_ties_go_to_lower_layer(self):
        profiles = profiles_from([0.5, 0.2, 0.2, 0.2])
        self.assertEqual(identify_weak_layers(profiles, WeakRule(fraction=0.5)), [1, 2])

    def test_selection_ignores_profile_order(self):
        profiles = profiles_from([0.4, 0.2, 0.9, 0.2, 0.1, 0.4, 0.7, 0.2])
        rules = (WeakRule(fraction=0.25), WeakRule(fraction=0.5), WeakRule(indices=[2, 5]))
        expected = [identify_weak_layers(profiles, rule) for rule in rules]
        rng = Rng(3)
        for i in range(30):
            shuffled = [profiles[j] for j in rng.spawn(i).permutation(len(profiles))]
            self.assertEqual([identify_weak_layers(shuffled, rule) for rule in rules], expected)

    def test_explicit_list(self):
        profiles = profiles_from([0.1] * 4)
        self.assertEqual(identify_weak_layers(profiles, WeakRule(indices=[1, 2])), [1, 2])
        with self.assertRaises(ConfigError):
            identify_weak_layers(profiles, WeakRule(indices=[4]))
        with self.assertRaises(ConfigError):
            identify_weak_layers([], WeakRule(indices=[0]))
        marked = mark_weak(profiles, [2])
        self.assertEqual([p.weak for p in marked], [False, False, True, False])

    def test_sampled_steps(self):
        self.assertEqual(sampled_steps(50, 4), [0, 12, 25, 37])
        self.assertEqual(sampled_steps(4, 4), [0, 1, 2, 3])
        with self.assertRaises(ConfigError):
            sampled_steps(3, 4)


class ProfileTestCase(TempDirTestCase):

    def setUp(self):
        super(ProfileTestCase, self).setUp()
        self.scene = render_scene(SceneSpec.default(), 0)
        self.model = DiT(DitConfig())
        self.cond = Conditioning(self.scene.text, self.scene.image, self.scene.z_ref)

    def _states(self):
        rng = Rng(2)
        out = []
        for step in sampled_steps(20, 4):
            z = rng.spawn(step).normal(self.scene.latent.shape)
            out.append((step, self.model.forward(z, 1.0 - step / 20.0, self.cond, hooks=True).states))
        return out

    def test_profile_shape(self):
        grid = self.scene.latent.shape[:3]
        profiles, rows = profile_layer_states(self._states(), [0, 1], grid)
        self.assertEqual(len(rows), 8 * 4 * 2)
        self.assertEqual([p.layer for p in profiles], list(range(8)))
        for p in profiles:
            self.assertTrue(np.isfinite(p.morans_i))
            self.assertGreaterEqual(p.std, 0.0)
        weak = identify_weak_layers(profiles, WeakRule(fraction=0.5))
        self.assertEqual(len(weak), 4)

        export_heatmap(rows, self.path('heatmap.csv'))
        export_heatmap(profiles, self.path('profile.csv'))
        header, body = read_csv(self.path('heatmap.csv'))
        self.assertEqual(header, ['step', 'layer', 'keyword', 'value'])
        self.assertEqual(len(body), 64)
        header, body = read_csv(self.path('profile.csv'))
        self.assertEqual(header, ['layer', 'morans_i', 'std'])
        self.assertEqual(len(body), 8)

    def test_heatmap_export_is_exact(self):
        grid = self.scene.latent.shape[:3]
        _, rows = profile_layer_states(self._states(), [0, 1], grid)
        export_heatmap(rows, self.path('a.csv'))
        export_heatmap(rows, self.path('b.csv'))
        with open(self.path('a.csv'), 'rb') as a, open(self.path('b.csv'), 'rb') as b:
            self.assertEqual(a.read(), b.read())
        _, body = read_csv(self.path('a.csv'))
        self.assertEqual([float(r[3]) for r in body], [float(r.value) for r in rows])

    def test_export_row_count(self):
        rows = [HeatmapRow(step, layer, 0, 0.1 * step + layer / 3.0) for step in (0, 5) for layer in (0, 1)]
        export_heatmap(rows, self.path('small.csv'))
        _, body = read_csv(self.path('small.csv'))
        self.assertEqual(len(body), 4)
        self.assertEqual(body[1], ['0', '1', '0', '%.17g' % (1 / 3.0)])
        self.assertEqual(float(body[1][3]), 1 / 3.0)

    def test_needs_keywords(self):
        with self.assertRaises(ConfigError):
            profile_layer_states(self._states(), [], self.scene.latent.shape[:3])
