'''
Focal guidance during sampling and training.

For a pair of conditions, a `GuidancePlan` (keywords, anchors, regions) is computed once.
At every timestep the attention cache is rebuilt by a cache pass (keyword guidance on, cache
off) whose strong-layer keyword maps are aggregated; the guided pass at the same timestep
then applies the full intervention.
'''
from __future__ import unicode_literals
from collections import Counter

import numpy as np

from ..model.dit import Intervention
from .cache import layer_similarity, aggregate_cache
from .config import FusionLayers
from .fsg import build_anchors

import logging
logger = logging.getLogger('focalguide.guidance')


class GuidancePlan(object):
    '''
    The keyword anchors of one pair of conditions.
    '''

    def __init__(self, anchors, grid_shape):
        self.anchors = anchors
        self.grid_shape = grid_shape

    @property
    def keyword_positions(self):
        return [a.index for a in self.anchors]

    def __len__(self):
        return len(self.anchors)

    def __repr__(self):
        return 'GuidancePlan(keywords=%s)' % self.keyword_positions


def keyword_maps(state, keyword_positions, grid):
    '''
    Keyword-to-feature cosine maps of one layer, [K, F, H, W].
    '''
    if not keyword_positions:
        return np.zeros((0,) + tuple(grid))
    return np.stack([layer_similarity(state.text_values[k], state.features, grid) for k in keyword_positions])


class FocalGuidance(object):
    '''
    Guidance runtime for one run. `counters` records how often each component acted:
    `inject_latent` and `cache_pass` per guided timestep, `fuse_text_value` and
    `apply_cache` per host layer.
    '''

    def __init__(self, config, keywords=None):
        '''
        - `config`: a `GuidanceConfig`.
        - `keywords`: explicit keyword indices that replace threshold selection.
        '''
        self.config = config
        self.keywords = keywords
        self.counters = Counter()
        self._plans = {}

    def weak_layers(self, model):
        return self.config.weak_layer_set(model.config.weak_layer_set(), model.num_layers)

    def plan(self, cond, grid_shape):
        key = (id(cond.text), id(cond.image), tuple(grid_shape))
        entry = self._plans.get(key)
        if entry is not None and entry[0] is cond.text and entry[1] is cond.image:
            return entry[2]
        cfg = self.config
        plan = GuidancePlan(build_anchors(cond.text, cond.image, cfg.tau_sel, cfg.tau_region, cfg.sign_mode,
                                          grid_shape, self.keywords), tuple(grid_shape))
        self._plans[key] = (cond.text, cond.image, plan)
        return plan

    def attention_cache(self, model, z_t, t, cond, base, weak):
        '''
        Runs the cache pass and returns the normalized, thresholded `AttentionCache`.
        '''
        grid = np.shape(z_t)[:3]
        states = model.forward(z_t, t, cond, hooks=True, intervention=base).states
        self.counters['cache_pass'] += 1
        weak_set = set(weak)
        maps = dict((s.layer, keyword_maps(s, base.keyword_positions, grid))
                    for s in states if s.layer not in weak_set)
        cache = aggregate_cache(maps, weak_set, model.num_layers, t)
        if self.config.normalize_cache:
            cache = cache.normalized()
        return cache.thresholded(self.config.tau_cache)

    def intervention(self, model, z_t, t, cond):
        '''
        The intervention for a guided pass at (z_t, t), or None when guidance cannot change it.
        '''
        cfg = self.config
        if cfg.is_noop():
            return None
        plan = self.plan(cond, np.shape(z_t)[1:3])
        if not len(plan):
            return None
        weak = self.weak_layers(model)
        fusion = weak if cfg.fusion_layers is FusionLayers.weak else range(model.num_layers)
        lambda_lat = cfg.lambda_lat if cfg.fsg else 0.0
        lambda_txt = cfg.lambda_txt if cfg.fsg else 0.0
        base = Intervention(plan.anchors, lambda_lat, lambda_txt, fusion, weak_layers=weak)
        if not (cfg.cache and cfg.lambda_cache != 0.0):
            self._count(model, base)
            return base
        cache = self.attention_cache(model, z_t, t, cond, base, weak)
        guided = Intervention(plan.anchors, lambda_lat, lambda_txt, fusion, cache.maps, cfg.lambda_cache, weak)
        self._count(model, guided)
        return guided

    def _count(self, model, iv):
        if iv.injects():
            self.counters['inject_latent'] += 1
        for l in range(model.num_layers):
            if iv.fuses_at(l):
                self.counters['fuse_text_value'] += 1
            if iv.caches_at(l):
                self.counters['apply_cache'] += 1

    def __repr__(self):
        return 'FocalGuidance(%s)' % dict(self.counters)


class GuidedVelocity(object):
    '''
    A velocity model that applies guidance to every call. With `hooks`, the layer states of
    the most recent guided pass are kept in `last_states`.
    '''

    def __init__(self, model, guidance=None, hooks=False):
        self.model = model
        self.guidance = guidance
        self.hooks = hooks
        self.last_states = None
        self.last_intervention = None

    def __call__(self, z_t, t, cond):
        iv = self.guidance.intervention(self.model, z_t, t, cond) if self.guidance is not None else None
        result = self.model.forward(z_t, t, cond, hooks=self.hooks, intervention=iv)
        self.last_states = result.states
        self.last_intervention = iv
        return result.velocity.data
