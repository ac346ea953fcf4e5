from __future__ import unicode_literals
from collections import OrderedDict, namedtuple
import math

import numpy as np

from ..core.errors import ConfigError
from ..core.storage import write_csv
from ..core.tensor import minmax_normalize
from ..guidance.runtime import keyword_maps
from ..records.fields import IntField, FloatField, BoolField
from ..records.models import Record
from ..records.utils import parse_index_list, format_index_list
from .moran import morans_i_layer, std_layer

import logging
logger = logging.getLogger('focalguide')


WEAK_LAYER_PRESETS = {
    'toy': '2-5',
    'wan2.1-i2v': '11-26',
    'hunyuanvideo-i2v': '17-32',
}

HEATMAP_HEADER = ('step', 'layer', 'keyword', 'value')
PROFILE_HEADER = ('layer', 'morans_i', 'std')

HeatmapRow = namedtuple('HeatmapRow', 'step layer keyword value')


class LayerProfile(Record):

    layer = IntField(min_value=0)
    morans_i = FloatField()
    std = FloatField(min_value=0.0)
    weak = BoolField(default=False)


class WeakRule(object):
    '''
    How semantic-weak layers are chosen: the bottom fraction of layers by Moran's I, or an
    explicit index list. Parsed from "bottom:<q>", "list:<indices>" or "preset:<model>".
    '''

    def __init__(self, fraction=None, indices=None):
        if (fraction is None) == (indices is None):
            raise ConfigError('A weak rule needs exactly one of a fraction or an index list')
        if fraction is not None and not 0.0 < fraction < 1.0:
            raise ConfigError('Weak-layer fraction must be in (0, 1), got %r' % fraction)
        self.fraction = fraction
        self.indices = sorted(set(indices)) if indices is not None else None

    @classmethod
    def parse(cls, text):
        kind, _, value = text.partition(':')
        try:
            if kind == 'bottom':
                return cls(fraction=float(value))
            if kind == 'list':
                return cls(indices=parse_index_list(value))
        except ValueError as e:
            raise ConfigError('Invalid weak rule "%s": %s' % (text, e))
        if kind == 'preset':
            if value not in WEAK_LAYER_PRESETS:
                raise ConfigError('Unknown weak-layer preset "%s"' % value)
            return cls(indices=parse_index_list(WEAK_LAYER_PRESETS[value]))
        raise ConfigError('Invalid weak rule "%s" (expected bottom:<q>, list:<indices> or preset:<name>)' % text)

    def __str__(self):
        if self.fraction is not None:
            return 'bottom:%g' % self.fraction
        return 'list:%s' % format_index_list(self.indices)


def identify_weak_layers(profiles, rule, num_layers=None):
    '''
    Selects the semantic-weak layers. A fractional rule takes the ceil(q * L) layers with the
    lowest Moran's I, ties going to the lower layer index; an explicit rule returns its list
    after checking it against the layer count (`num_layers`, default `len(profiles)`).
    '''
    if not profiles:
        raise ConfigError('No layer profiles')
    num_layers = len(profiles) if num_layers is None else num_layers
    if rule.indices is not None:
        bad = [l for l in rule.indices if not 0 <= l < num_layers]
        if bad:
            raise ConfigError('Weak layers %s out of range for %d layers' % (bad, num_layers))
        return list(rule.indices)
    count = int(math.ceil(rule.fraction * len(profiles) - 1e-9))
    ranked = sorted(profiles, key=lambda p: (p.morans_i, p.layer))
    return sorted(p.layer for p in ranked[:count])


def mark_weak(profiles, weak):
    weak = set(weak)
    return [p.replace(weak=p.layer in weak) for p in profiles]


class LayerProfiler(object):
    '''
    Accumulates per-layer statistics of normalized keyword maps over sampled steps and
    samples. Each map is min-max normalized per frame before Moran's I and std.
    '''

    def __init__(self, keyword_positions, grid, normalize_by_w=False):
        self.keyword_positions = list(keyword_positions)
        self.grid = tuple(grid)
        self.normalize_by_w = normalize_by_w
        self.rows = []
        self._stats = OrderedDict()

    def add(self, step, states):
        '''
        Adds the layer states of one forward pass recorded at sampling step `step`.
        '''
        if not self.keyword_positions:
            raise ConfigError('Profiling needs at least one keyword')
        for state in states:
            maps = keyword_maps(state, self.keyword_positions, self.grid)
            for k, keyword in enumerate(self.keyword_positions):
                normalized = minmax_normalize(maps[k], spatial_ndim=2)
                i_value = morans_i_layer(normalized, self.normalize_by_w)
                std_value = std_layer(normalized)
                self.rows.append(HeatmapRow(step, state.layer, keyword, i_value))
                self._stats.setdefault(state.layer, []).append((i_value, std_value))

    def profiles(self):
        if not self._stats:
            raise ConfigError('No layer states were profiled')
        return [LayerProfile(layer=l, morans_i=float(np.mean([s[0] for s in stats])),
                             std=float(np.mean([s[1] for s in stats])))
                for l, stats in sorted(self._stats.items())]


def profile_layer_states(states_by_step, keyword_positions, grid, normalize_by_w=False):
    '''
    Per-layer Moran's I and std of the keyword maps of several hooked passes.

    - `states_by_step`: list of (step, states) pairs.

    Returns (profiles, heatmap rows).
    '''
    profiler = LayerProfiler(keyword_positions, grid, normalize_by_w)
    for step, states in states_by_step:
        profiler.add(step, states)
    return profiler.profiles(), profiler.rows


def sampled_steps(steps, count):
    '''
    `count` evenly spaced step indices out of `steps`.
    '''
    if not 1 <= count <= steps:
        raise ConfigError('Cannot sample %d of %d steps' % (count, steps))
    return [i * steps // count for i in range(count)]


def heatmap_rows(rows):
    return [(r.step, r.layer, r.keyword, float(r.value)) for r in rows]


def profile_rows(profiles):
    return [(p.layer, float(p.morans_i), float(p.std)) for p in profiles]


def export_heatmap(data, path):
    '''
    Writes either heatmap rows (`step,layer,keyword,value`) or layer profiles
    (`layer,morans_i,std`) as CSV.
    '''
    data = list(data)
    if data and isinstance(data[0], LayerProfile):
        return write_csv(path, PROFILE_HEADER, profile_rows(data))
    return write_csv(path, HEATMAP_HEADER, heatmap_rows(data))
