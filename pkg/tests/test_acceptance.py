'''
End-to-end property checks at reduced size. Slower than the unit tests.
'''
from __future__ import unicode_literals
import os

import numpy as np

from focalguide.bench.tables import recomputed_totals
from focalguide.commands import cmd_synth, cmd_train, cmd_sample, load_profiles
from focalguide.core.rng import Rng
from focalguide.diagnostics.moran import morans_i_frame
from focalguide.flow import FlowConfig, FlowPath, euler_sample, sample_training_path
from focalguide.guidance.cache import apply_cache, threshold_cache
from focalguide.guidance.config import GuidanceConfig
from focalguide.guidance.fsg import SignMode, build_anchors, inject_latent
from focalguide.guidance.runtime import FocalGuidance, GuidedVelocity
from focalguide.model.dit import DiT, DitConfig, Conditioning, Intervention
from focalguide.model.training import ParameterScope, TrainingExample, finite_difference_check, relative_error
from focalguide.synth.scene import Block, SceneSpec, render_scene, ground_truth_region_iou

from .base import naive_morans_i, tiny_config, tiny_scene, conditioning, TempDirTestCase


def small_scene(seed=0, noise=0.0):
    spec = SceneSpec(height=4, width=4, frames=2, noise=noise,
                     blocks=[Block(name='A', y=0, x=0, dx=1), Block(name='B', y=2, x=2)])
    return render_scene(spec, seed)


class AcceptanceTestCase(TempDirTestCase):

    def test_morans_i_matches_pair_sum(self):
        rng = Rng(2024)
        worst = 0.0
        for i in range(200):
            frame = rng.spawn(i).uniform((6, 6))
            worst = max(worst, abs(morans_i_frame(frame) - naive_morans_i(frame)))
        self.assertLessEqual(worst, 1e-10)
        self.assertEqual(morans_i_frame([[1.0, 0.0], [0.0, 1.0]]), -4.0)
        self.assertLessEqual(abs(morans_i_frame([[1.0, 0.0], [0.0, 1.0]], True) + 1.0 / 3), 1e-12)

    def test_gradients_at_default_width(self):
        scene = small_scene(1)
        cond = Conditioning(scene.text, scene.image, scene.z_ref)
        path, t = sample_training_path(scene.latent, Rng(4))
        model = DiT(DitConfig())
        checks = finite_difference_check(model, [TrainingExample(path, t, cond)], entries=2, rng=Rng(5))
        for c in checks:
            self.assertTrue(relative_error(c.analytic, c.numeric, floor=1e-4) < 1e-4,
                            '%s%s: %r vs %r' % (c.name, c.index, c.analytic, c.numeric))

    def test_exact_flow_recovery(self):
        rng = Rng(6)
        z0, z1 = rng.normal((2, 4, 4, 3)), rng.normal((2, 4, 4, 3))
        velocity = FlowPath(z0, z1).velocity()
        for steps in (1, 7, 100):
            out = euler_sample(lambda z, t, c: velocity, z1, steps).data
            self.assertLessEqual(np.abs(out - z0).max(), 1e-12)

    def test_fusion_keeps_attention_logits(self):
        scene = tiny_scene()
        anchors = build_anchors(scene.text, scene.image, 0.2, 0.5, SignMode.positive, (4, 4))
        model = DiT(tiny_config())
        iv = Intervention(anchors, lambda_txt=0.7, fusion_layers=[1, 2])
        for seed in range(50):
            z = Rng(seed).normal(scene.latent.shape)
            base = model.forward(z, 0.5, conditioning(scene), hooks=True)
            fused = model.forward(z, 0.5, conditioning(scene), hooks=True, intervention=iv)
            # layers before and at the first fused layer see the same hidden states
            for l in (0, 1):
                self.assertTrue(np.array_equal(base.states[l].logits, fused.states[l].logits))

    def test_guidance_touches_only_regions(self):
        scene = render_scene(SceneSpec.default().replace(noise=0.0), 3)
        anchors = build_anchors(scene.text, scene.image, 0.2, 0.5, SignMode.positive, (8, 8))
        union = np.zeros((8, 8), dtype=bool)
        for a in anchors:
            union |= a.region
        z = Rng(7).normal((4, 8, 8, 8))
        vectors = Rng(8).normal((len(anchors), 8))
        out = inject_latent(z, [(a.region, a.weights) for a in anchors], vectors, 0.3)
        changed = np.any(out != z, axis=-1)
        self.assertTrue(np.array_equal(changed[0], union))
        self.assertFalse(changed[1:].any())

        maps = threshold_cache(Rng(9).uniform((len(anchors), 4, 8, 8)), 0.6)
        out = apply_cache(z, maps, vectors, 0.3, 2, [2])
        changed = np.any(out != z, axis=-1)
        self.assertTrue(np.array_equal(changed, np.any(maps != 0.0, axis=0)))

    def test_zero_strength_sampling_is_bit_identical(self):
        scene = tiny_scene()
        model = DiT(tiny_config())
        z1 = Rng(10).normal(scene.latent.shape)
        base = euler_sample(model, z1, 4, conditioning(scene)).data
        zero = GuidanceConfig(lambda_txt=0.0, lambda_lat=0.0, lambda_cache=0.0)
        guided = euler_sample(GuidedVelocity(model, FocalGuidance(zero)), z1, 4, conditioning(scene)).data
        self.assertTrue(np.array_equal(base, guided))

    def test_cache_alignment_is_monotone(self):
        rng = Rng(11)
        z = rng.normal((1000, 8))
        vec = rng.normal((1, 8))
        maps = rng.uniform((1, 1000), 0.01, 1.0)
        out = apply_cache(z, maps, vec, 1e-3, 0, [0])
        v = vec[0] / np.linalg.norm(vec[0])
        before = np.dot(z, v) / np.linalg.norm(z, axis=1)
        after = np.dot(out, v) / np.linalg.norm(out, axis=1)
        self.assertTrue(np.all(after >= before - 1e-15))

    def test_published_totals(self):
        for row, total in recomputed_totals():
            self.assertLess(abs(row.total - total), 5e-5)

    def test_regions_are_recovered(self):
        for seed in range(10):
            scene = render_scene(SceneSpec.default().replace(noise=0.0), seed)
            anchors = build_anchors(scene.text, scene.image, 0.2, 0.5, SignMode.positive, (8, 8))
            self.assertEqual([a.index for a in anchors], [0, 1])
            for a, truth in zip(anchors, scene.regions):
                self.assertEqual(ground_truth_region_iou(a.region, truth), 1.0)
        good = 0
        for seed in range(100):
            scene = render_scene(SceneSpec.default(), seed)
            anchors = build_anchors(scene.text, scene.image, 0.2, 0.5, SignMode.positive, (8, 8), keywords=[0, 1])
            if len(anchors) == 2 and all(ground_truth_region_iou(a.region, truth) >= 0.9
                                         for a, truth in zip(anchors, scene.regions)):
                good += 1
        self.assertGreaterEqual(good, 95)

    def test_fine_tuning_freezes_other_layers(self):
        cmd_synth(self.path('data'), seed=0, count=1)
        config = DitConfig()
        model, _ = cmd_train(self.path('run'), self.path('data'), dit=config, steps=1, lr=0.01, mask='2-5',
                             scope=ParameterScope.layer)
        init = DiT(config).params
        frozen = [n for n in init if not any(n.startswith('layers.%d.' % l) for l in range(2, 6))]
        self.assertTrue(model.params.bit_equal(init, frozen))
        self.assertFalse(model.params.bit_equal(init))

    def _weak_layer_morans_i(self, name, seed, checkpoint, guidance):
        cmd_sample(self.path(name), seed=seed, checkpoint=checkpoint, guidance=guidance,
                   flow=FlowConfig(steps=20, seed=seed), diagnostics=True)
        profiles = load_profiles(self.path(name, 'profile.json'))
        return np.mean([p.morans_i for p in profiles if p.weak])

    def test_guidance_raises_weak_layer_coherence(self):
        wins = 0
        for seed in range(10):
            data, run = self.path('data%d' % seed), self.path('run%d' % seed)
            cmd_synth(data, seed=seed)
            cmd_train(run, data, seed=seed, steps=100)
            checkpoint = os.path.join(run, 'checkpoint')
            guided = self._weak_layer_morans_i('on%d' % seed, seed, checkpoint, GuidanceConfig())
            plain = self._weak_layer_morans_i('off%d' % seed, seed, checkpoint, GuidanceConfig.off())
            wins += guided > plain
        self.assertGreaterEqual(wins, 8)
