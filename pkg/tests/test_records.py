from __future__ import unicode_literals
import datetime
import unittest

import pytz

from focalguide.commands import RunManifest
from focalguide.core.errors import ConfigError
from focalguide.flow import FlowConfig, TimeSampling
from focalguide.guidance.config import GuidanceConfig, FusionLayers
from focalguide.guidance.fsg import SignMode
from focalguide.model.dit import DitConfig
from focalguide.model.topologies import ConditioningMode
from focalguide.synth.scene import SceneSpec


class DitConfigTestCase(unittest.TestCase):

    def test_toy_defaults(self):
        config = DitConfig.preset('toy')
        self.assertEqual(config.layers, 8)
        self.assertEqual(config.weak_layer_set(), [2, 3, 4, 5])
        self.assertIs(config.conditioning_mode, ConditioningMode.cross_attention)

    def test_published_presets(self):
        wan = DitConfig.preset('wan2.1-i2v')
        self.assertIs(wan.conditioning_mode, ConditioningMode.cross_attention)
        self.assertEqual(wan.weak_layer_set(), list(range(11, 27)))
        hunyuan = DitConfig.preset('hunyuanvideo-i2v')
        self.assertIs(hunyuan.conditioning_mode, ConditioningMode.token_concat)
        self.assertEqual(hunyuan.weak_layer_set(), list(range(17, 33)))

    def test_preset_overrides(self):
        config = DitConfig.preset('toy', layers=12, seed=9)
        self.assertEqual((config.layers, config.seed), (12, 9))
        with self.assertRaises(ConfigError):
            DitConfig.preset('sora')

    def test_invariants(self):
        with self.assertRaises(ConfigError):
            DitConfig(hidden_dim=10, heads=4).validate()
        with self.assertRaises(ConfigError):
            DitConfig(layers=4, weak_layers='2-5').validate()
        with self.assertRaises(ConfigError):
            DitConfig(layers=1)
        with self.assertRaises(ConfigError):
            DitConfig.from_dict({'depth': 3})

    def test_json_round_trip(self):
        config = DitConfig.preset('hunyuanvideo-i2v')
        self.assertEqual(DitConfig.from_json(config.to_json()), config)
        self.assertEqual(config.to_dict()['conditioning_mode'], 'token_concat')


class GuidanceConfigTestCase(unittest.TestCase):

    def test_defaults(self):
        config = GuidanceConfig()
        self.assertTrue(config.fsg and config.cache)
        self.assertIs(config.sign_mode, SignMode.positive)
        self.assertIs(config.fusion_layers, FusionLayers.weak)
        self.assertFalse(config.is_noop())

    def test_noop(self):
        self.assertTrue(GuidanceConfig.off().is_noop())
        self.assertTrue(GuidanceConfig(lambda_txt=0, lambda_lat=0, lambda_cache=0).is_noop())
        self.assertTrue(GuidanceConfig(fsg=False, cache=False).is_noop())
        self.assertFalse(GuidanceConfig(lambda_txt=0, lambda_lat=0).is_noop())

    def test_ablation(self):
        config = GuidanceConfig().ablation(fsg=True, cache=False)
        self.assertEqual((config.fsg, config.cache), (True, False))

    def test_weak_layer_override(self):
        self.assertEqual(GuidanceConfig().weak_layer_set([2, 3]), [2, 3])
        self.assertEqual(GuidanceConfig(weak_layers='1,4').weak_layer_set([2, 3]), [1, 4])
        with self.assertRaises(ConfigError):
            GuidanceConfig.from_dict({'weak_layers': 'x'})

    def test_negative_strength_rejected(self):
        with self.assertRaises(ConfigError):
            GuidanceConfig(lambda_cache=-0.1)


class ManifestTestCase(unittest.TestCase):

    def test_round_trip(self):
        manifest = RunManifest(command='sample', seed=7, created=datetime.datetime(2024, 5, 1, 12, 0, tzinfo=pytz.utc),
                               dit=DitConfig(), guidance=GuidanceConfig.off(),
                               flow=FlowConfig(steps=5, t_sampling='logit_normal'), scene=SceneSpec.default(),
                               args={'checkpoint': 'run/checkpoint'})
        loaded = RunManifest.from_json(manifest.to_json())
        self.assertEqual(loaded, manifest)
        self.assertIs(loaded.flow.t_sampling, TimeSampling.logit_normal)
        self.assertEqual(loaded.created, manifest.created)
        self.assertEqual(loaded.scene.blocks[0].name, 'A')

    def test_missing_configs_are_null(self):
        loaded = RunManifest.from_json(RunManifest(command='table').to_json())
        self.assertIsNone(loaded.dit)
        self.assertIsNone(loaded.guidance)
