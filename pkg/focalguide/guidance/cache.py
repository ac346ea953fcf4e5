'''
Attention cache: per-timestep keyword maps aggregated over the semantically responsive
layers and injected into the semantic-weak ones.
'''
from __future__ import unicode_literals

import numpy as np

from ..core.errors import ConfigError, ContractError
from ..core.tensor import cosine_matrix, minmax_normalize, check_finite

import logging
logger = logging.getLogger('focalguide.guidance')


def layer_similarity(value, features, grid=None):
    '''
    Cosine between a keyword value [D] and the visual feature at every cell.

    - `features`: [F, H, W, D], or [P, D] together with `grid` = (F, H, W).

    Returns a map [F, H, W]; cells with a zero-norm feature are 0.
    '''
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        if grid is None:
            raise ConfigError('Flat features need a (frames, height, width) grid')
        shape = tuple(grid)
    else:
        shape = features.shape[:-1]
    value = np.asarray(value, dtype=np.float64).reshape(1, -1)
    flat = features.reshape(-1, features.shape[-1])
    if flat.shape[1] != value.shape[1]:
        raise ConfigError('Feature dim %d does not match value dim %d' % (flat.shape[1], value.shape[1]))
    return cosine_matrix(flat, value, zero_norm='zero')[:, 0].reshape(shape)


def cache_weights(weak_layers, num_layers):
    '''
    alpha_l = 0 on weak layers and 1 / (L - m) elsewhere, so the weights sum to 1.
    '''
    weak = set(weak_layers)
    bad = sorted(l for l in weak if not 0 <= l < num_layers)
    if bad:
        raise ConfigError('Weak layers %s out of range for %d layers' % (bad, num_layers))
    m = len(weak)
    if m >= num_layers:
        raise ConfigError('no semantically responsive layers')
    return np.array([0.0 if l in weak else 1.0 / (num_layers - m) for l in range(num_layers)])


class AttentionCache(object):
    '''
    Aggregated keyword maps of one denoising timestep.

    - `t`: the timestep.
    - `maps`: [K, F, H, W], one map per keyword in ascending keyword order.
    - `alphas`: per-layer aggregation weights.
    '''

    def __init__(self, t, maps, alphas):
        self.t = t
        self.maps = maps
        self.alphas = alphas

    @property
    def num_keywords(self):
        return self.maps.shape[0]

    def normalized(self):
        if not self.num_keywords:
            return self
        return AttentionCache(self.t, minmax_normalize(self.maps, spatial_ndim=2), self.alphas)

    def thresholded(self, tau_cache):
        return AttentionCache(self.t, threshold_cache(self.maps, tau_cache), self.alphas)

    def __repr__(self):
        return 'AttentionCache(t=%g, keywords=%d)' % (self.t, self.num_keywords)


def aggregate_cache(layer_maps, weak_layers, num_layers, t=0.0):
    '''
    Weighted sum of the per-layer maps with the weights of `cache_weights`, accumulated in
    ascending layer order.

    - `layer_maps`: dict (or sequence) from layer index to maps [K, F, H, W]; weak layers
      may be missing.
    '''
    alphas = cache_weights(weak_layers, num_layers)
    total = None
    for l in range(num_layers):
        if alphas[l] == 0.0:
            continue
        try:
            maps = np.asarray(layer_maps[l], dtype=np.float64)
        except (KeyError, IndexError):
            raise ContractError('Missing similarity maps for layer %d' % l)
        total = alphas[l] * maps if total is None else total + alphas[l] * maps
    check_finite(total, 'attention cache')
    return AttentionCache(t, total, alphas)


def threshold_cache(maps, tau_cache):
    '''
    Zeroes every value <= `tau_cache`; the rest are kept verbatim.
    '''
    maps = np.asarray(maps, dtype=np.float64)
    return np.where(maps > tau_cache, maps, 0.0)


def apply_cache(z, maps, vectors, lambda_cache, layer, weak_layers):
    '''
    z(u, v) += lambda * A_k(u, v) * V_k summed over keywords in ascending order, at a
    semantic-weak layer. Cells where every map is zero are returned bit-unchanged.

    - `z`: visual features [F, H, W, D] or [P, D].
    - `maps`: thresholded cache maps [K, F, H, W].
    - `vectors`: V_k^vis for this layer, [K, D].
    '''
    if layer not in weak_layers:
        raise ContractError('Attention cache applied to layer %d, which is not semantic-weak' % layer)
    out = np.array(z, dtype=np.float64, copy=True)
    if lambda_cache == 0.0 or not len(vectors):
        return out
    flat = out.reshape(-1, out.shape[-1])
    maps = np.asarray(maps, dtype=np.float64).reshape(len(maps), -1)
    vectors = np.asarray(vectors, dtype=np.float64)
    if maps.shape[1] != flat.shape[0] or vectors.shape[1] != flat.shape[1]:
        raise ConfigError('Cache maps %s and vectors %s do not fit features %s' % (maps.shape, vectors.shape, out.shape))
    for a, vec in zip(maps, vectors):
        support = a != 0.0
        flat[support] += lambda_cache * a[support][:, None] * vec
    return out
