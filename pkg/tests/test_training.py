from __future__ import unicode_literals
import os
import unittest

import numpy as np

from focalguide.core.errors import ConfigError, DivergenceError, StorageError
from focalguide.core.rng import Rng
from focalguide.flow import FlowPath, interpolate, sample_training_path
from focalguide.guidance.config import GuidanceConfig
from focalguide.guidance.runtime import FocalGuidance
from focalguide.model.checkpoint import save_checkpoint, load_checkpoint
from focalguide.model.dit import DiT, parameter_group
from focalguide.model.training import (TrainingExample, ParameterScope, parse_mask, trainable_names,
                                       batch_loss, train_step, train, finite_difference_check,
                                       worst_by_parameter, relative_error, loss_and_grads)

from .base import tiny_config, tiny_scene, conditioning, TempDirTestCase

MODES = ('cross_attention', 'token_concat')


def make_batch(seed=0, size=1):
    scene = tiny_scene(seed=seed)
    cond = conditioning(scene)
    rng = Rng(seed).spawn('paths')
    batch = []
    for i in range(size):
        path, t = sample_training_path(scene.latent, rng.spawn(i))
        batch.append(TrainingExample(path, t, cond))
    return batch


def constant_target_batch(shape, value, cond, size=3):
    rng = Rng(42)
    batch = []
    for i in range(size):
        z1 = rng.spawn(i).normal(shape)
        batch.append(TrainingExample(FlowPath(z1 + value, z1), (i + 1.0) / (size + 1.0), cond))
    return batch


def assert_gradients_match(test, checks):
    test.assertTrue(checks)
    for c in checks:
        ok = relative_error(c.analytic, c.numeric, floor=1e-4) < 1e-4
        test.assertTrue(ok, '%s%s: analytic %r numeric %r' % (c.name, c.index, c.analytic, c.numeric))


class MaskTestCase(unittest.TestCase):

    def test_parse_mask(self):
        self.assertEqual(parse_mask('2-5,head'), [2, 3, 4, 5, 'head'])
        self.assertEqual(parse_mask(' cond , 1,1 '), [1, 'cond'])
        self.assertEqual(parse_mask(''), [])
        self.assertEqual(parse_mask([3, 'embed', 3]), [3, 'embed'])
        with self.assertRaises(ConfigError):
            parse_mask('2-x')
        with self.assertRaises(ConfigError):
            parse_mask(['tail'])

    def test_trainable_names(self):
        model = DiT(tiny_config())
        self.assertEqual(trainable_names(model, [1], ParameterScope.cross_attention),
                         ['layers.1.cross.wq', 'layers.1.cross.wk', 'layers.1.cross.wv', 'layers.1.cross.wo'])
        self.assertEqual(len(trainable_names(model, [1], ParameterScope.layer)), 12)
        self.assertEqual(trainable_names(model, ['head']), ['head.w_out', 'head.b_out'])
        concat = DiT(tiny_config('token_concat'))
        self.assertEqual(trainable_names(concat, [2], ParameterScope.cross_attention),
                         ['layers.2.attn.wq', 'layers.2.attn.wk', 'layers.2.attn.wv', 'layers.2.attn.wo'])

    def test_mask_out_of_range(self):
        with self.assertRaises(ConfigError):
            trainable_names(DiT(tiny_config()), [4])


class TrainStepTestCase(unittest.TestCase):

    def test_frozen_parameters_are_bit_identical(self):
        model = DiT(tiny_config())
        before = model.params.copy()
        train_step(model, make_batch(size=2), 0.01, [1], ParameterScope.cross_attention)
        trained = set(trainable_names(model, [1], ParameterScope.cross_attention))
        frozen = [n for n in model.params if n not in trained]
        self.assertTrue(model.params.bit_equal(before, frozen))
        self.assertFalse(model.params.bit_equal(before, sorted(trained)))

    def test_zero_learning_rate(self):
        model = DiT(tiny_config())
        batch = make_batch()
        before = model.params.copy()
        loss = train_step(model, batch, 0.0, [0, 1, 2, 3, 'head'])
        self.assertTrue(model.params.bit_equal(before))
        self.assertEqual(loss, batch_loss(model, batch))

    def test_invalid_learning_rate(self):
        model = DiT(tiny_config())
        for lr in (-0.1, float('nan')):
            with self.assertRaises(ConfigError):
                train_step(model, make_batch(), lr, ['head'])

    def test_head_only_descent_is_monotone(self):
        model = DiT(tiny_config())
        losses = train(model, make_batch(size=2), 10, 1e-3, ['head'])
        self.assertEqual(len(losses), 11)
        for before, after in zip(losses, losses[1:]):
            self.assertLess(after, before)

    def test_returns_loss_after_update(self):
        model = DiT(tiny_config())
        batch = make_batch()
        loss = train_step(model, batch, 0.01, [2], ParameterScope.layer)
        self.assertEqual(loss, batch_loss(model, batch))

    def test_divergence(self):
        model = DiT(tiny_config())
        with np.errstate(all='ignore'):
            with self.assertRaises(DivergenceError) as ctx:
                train_step(model, make_batch(), 1e300, ['head'], step=7)
        self.assertEqual(ctx.exception.step, 7)

    def test_guided_step_counts_interventions(self):
        model = DiT(tiny_config())
        guidance = FocalGuidance(GuidanceConfig(lambda_txt=0.5, lambda_lat=0.5, lambda_cache=0.5))
        train_step(model, make_batch(), 0.01, [1, 2], ParameterScope.cross_attention, guidance=guidance)
        # one intervention before and one after the update
        self.assertEqual(guidance.counters['inject_latent'], 2)
        self.assertEqual(guidance.counters['cache_pass'], 2)


class GradientTestCase(unittest.TestCase):

    def _check(self, mode, guided):
        model = DiT(tiny_config(mode))
        batch = make_batch(seed=2, size=2)
        interventions = None
        if guided:
            guidance = FocalGuidance(GuidanceConfig(lambda_txt=0.5, lambda_lat=0.5, lambda_cache=0.5, tau_cache=0.0))
            interventions = [guidance.intervention(model, interpolate(ex.path, ex.t).data, ex.t, ex.cond)
                             for ex in batch]
            self.assertTrue(all(iv.cache_maps is not None for iv in interventions))
        small = [n for n, arr in model.params.items() if arr.size <= 32]
        large = [n for n in model.params.names() if n not in small]
        checks = finite_difference_check(model, batch, small, interventions=interventions)
        self.assertEqual(len(checks), sum(model.params[n].size for n in small))
        checks += finite_difference_check(model, batch, large, entries=3, rng=Rng(11), interventions=interventions)
        self.assertEqual(len(worst_by_parameter(checks)), len(model.params))
        assert_gradients_match(self, checks)

    def test_cross_attention(self):
        self._check('cross_attention', False)

    def test_token_concat(self):
        self._check('token_concat', False)

    def test_cross_attention_guided(self):
        self._check('cross_attention', True)

    def test_token_concat_guided(self):
        self._check('token_concat', True)

    def test_loss_scale_doubles_gradients(self):
        for mode in MODES:
            model = DiT(tiny_config(mode))
            batch = make_batch(seed=4, size=2)
            loss, grads = loss_and_grads(model, batch)
            loss2, grads2 = loss_and_grads(model, batch, scale=2.0)
            self.assertAlmostEqual(loss2, 2.0 * loss, delta=1e-12 * loss)
            for name in grads:
                np.testing.assert_allclose(grads2[name], 2.0 * grads[name], rtol=1e-12, atol=0)

    def test_dead_paths_have_zero_gradient(self):
        batch = make_batch(seed=4)
        _, grads = loss_and_grads(DiT(tiny_config(zero_init_output=True)), batch)
        for name, g in grads.items():
            if parameter_group(name) != 'head':
                self.assertFalse(np.any(g), name)
        self.assertTrue(np.any(grads['head.b_out']))
        no_ref = [ex._replace(cond=ex.cond._replace(z_ref=np.zeros(ex.path.shape))) for ex in batch]
        _, grads = loss_and_grads(DiT(tiny_config()), no_ref)
        self.assertFalse(np.any(grads['embed.w_ref']))
        self.assertTrue(np.any(grads['embed.w_in']))

    def test_relative_error(self):
        self.assertEqual(relative_error(1.0, 1.0), 0.0)
        self.assertAlmostEqual(relative_error(1.0, 0.5), 0.5)
        self.assertAlmostEqual(relative_error(0.0, 1e-9), 1e-3)


class ConvergenceTestCase(unittest.TestCase):

    def test_fits_constant_target(self):
        scene = tiny_scene(seed=42)
        model = DiT(tiny_config(layers=1, weak_layers='0', seed=42))
        batch = constant_target_batch(scene.latent.shape, 2.0, conditioning(scene))
        losses = train(model, batch, 200, 0.05, ['head'])
        self.assertEqual(len(losses), 201)
        for before, after in zip(losses[10:], losses[11:]):
            self.assertLess(after, before)
        self.assertLess(losses[-1], 0.1 * losses[0])

    def test_train_steps_halve_the_loss(self):
        scene = tiny_scene(seed=7)
        model = DiT(tiny_config('token_concat', seed=7))
        batch = constant_target_batch(scene.latent.shape, 1.0, conditioning(scene), size=2)
        initial = batch_loss(model, batch)
        for i in range(200):
            loss = train_step(model, batch, 0.05, ['head'], step=i)
        self.assertLess(loss, 0.5 * initial)


class CheckpointTestCase(TempDirTestCase):

    def test_round_trip(self):
        model = DiT(tiny_config('token_concat'))
        train_step(model, make_batch(), 0.01, [1])
        save_checkpoint(model, self.path('ckpt'), step=1)
        self.assertTrue(os.path.isfile(self.path('ckpt', 'params', 'head.w_out.fgt')))
        loaded, manifest = load_checkpoint(self.path('ckpt'))
        self.assertEqual(manifest.step, 1)
        self.assertEqual(loaded.config, model.config)
        self.assertTrue(loaded.params.bit_equal(model.params))

    def test_missing_checkpoint(self):
        with self.assertRaises(StorageError):
            load_checkpoint(self.path('nowhere'))

    def test_missing_tensor(self):
        save_checkpoint(DiT(tiny_config()), self.path('ckpt'))
        os.remove(self.path('ckpt', 'params', 'embed.w_in.fgt'))
        with self.assertRaises(StorageError):
            load_checkpoint(self.path('ckpt'))
