'''
A toy diffusion transformer with per-layer feature hooks.

Tokens are latent cells (patch size 1). The input embedding is

    h = z_t W_in + b_in + z_ref W_ref + pos + emb(t) W_time

where z_ref is the reference latent with every frame after the first zeroed, so adding
z_ref W_ref is the same as concatenating the conditioning frame channel-wise before a
single patch embedding. Only the cross-attention topology has that term; in token-concat
mode the first frame arrives as image tokens and latent injection acts on a zero reference
state. Each block is pre-norm; how the condition tokens reach the visual tokens is decided
by the `Topology` of the configured conditioning mode.

The backward pass is written out by hand and covers every parameter, including the
condition projections through which guidance vectors are formed.
'''
from __future__ import unicode_literals
from collections import OrderedDict, namedtuple
import math

import numpy as np
from six import iteritems

from ..core.errors import ConfigError, ContractError
from ..core.rng import Rng
from ..core.tensor import LatentVideo, TokenSequence, latent_array
from ..guidance.cache import apply_cache
from ..guidance.fsg import inject_latent, fuse_text_value
from ..records.fields import StringField, IntField, UInt64Field, BoolField, EnumField
from ..records.models import Record
from ..records.utils import parse_index_list
from .layers import position_embedding, timestep_embedding
from .topologies import ConditioningMode, get_topology

import logging
logger = logging.getLogger('focalguide')


Conditioning = namedtuple('Conditioning', 'text image z_ref')

LayerState = namedtuple('LayerState', 'layer features text_values logits')
LayerState.__doc__ = '''
What a hooked forward pass exposes per layer.

- `features`: visual hidden states entering the block, [F'*H'*W', D].
- `text_values`: value vectors of the text tokens in the block's condition attention, [M, D].
- `logits`: that attention's logits, [heads, queries, keys].
'''

ForwardResult = namedtuple('ForwardResult', 'velocity states tape')


class DitConfig(Record):

    name = StringField(default='toy')
    layers = IntField(default=8, min_value=2)
    hidden_dim = IntField(default=32, min_value=1)
    heads = IntField(default=4, min_value=1)
    conditioning_mode = EnumField(ConditioningMode, default=ConditioningMode.cross_attention)
    seed = UInt64Field(default=0)
    latent_channels = IntField(default=8, min_value=1)
    text_dim = IntField(default=8, min_value=1)
    image_dim = IntField(default=8, min_value=1)
    mlp_ratio = IntField(default=4, min_value=1)
    zero_init_output = BoolField(default=False)
    weak_layers = StringField(default='2-5', doc='semantic-weak layers, e.g. "11-26"')

    PRESETS = {
        'toy': dict(),
        # Published backbones; recorded for their topology and weak-layer range.
        'wan2.1-i2v': dict(name='wan2.1-i2v', layers=40, hidden_dim=5120, heads=40,
                           conditioning_mode='cross_attention', latent_channels=16,
                           text_dim=4096, image_dim=1280, weak_layers='11-26'),
        'hunyuanvideo-i2v': dict(name='hunyuanvideo-i2v', layers=40, hidden_dim=3072, heads=24,
                                 conditioning_mode='token_concat', latent_channels=16,
                                 text_dim=4096, image_dim=768, weak_layers='17-32'),
    }

    @classmethod
    def preset(cls, name, **overrides):
        if name not in cls.PRESETS:
            raise ConfigError('Unknown model preset "%s" (expected one of %s)' % (name, ', '.join(sorted(cls.PRESETS))))
        values = dict(cls.PRESETS[name])
        values.update(overrides)
        return cls.from_dict(values)

    def weak_layer_set(self):
        try:
            return parse_index_list(self.weak_layers)
        except ValueError as e:
            raise ConfigError('%s (field \'weak_layers\')' % e)

    def validate(self):
        if self.hidden_dim % self.heads:
            raise ConfigError('hidden_dim %d is not divisible by heads %d' % (self.hidden_dim, self.heads))
        bad = [l for l in self.weak_layer_set() if l >= self.layers]
        if bad:
            raise ConfigError('Weak layers %s out of range for %d layers' % (bad, self.layers))
        return self


def parameter_group(name):
    '''
    The trainable-mask group a parameter belongs to: a layer index, or one of
    "embed", "cond", "head".
    '''
    parts = name.split('.')
    if parts[0] == 'layers':
        return int(parts[1])
    return parts[0]


class Parameters(object):
    '''
    Named weight tensors in a fixed order. Also used for gradients.
    '''

    def __init__(self, arrays):
        self._arrays = OrderedDict(arrays)

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        if name not in self._arrays:
            raise KeyError(name)
        self._arrays[name] = value

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def shapes(self):
        return OrderedDict((n, a.shape) for n, a in iteritems(self._arrays))

    def num_values(self):
        return sum(a.size for a in self._arrays.values())

    def copy(self):
        return Parameters((n, np.array(a, copy=True)) for n, a in iteritems(self._arrays))

    def zeros_like(self):
        return Parameters((n, np.zeros_like(a)) for n, a in iteritems(self._arrays))

    def scaled(self, factor):
        return Parameters((n, factor * a) for n, a in iteritems(self._arrays))

    def bit_equal(self, other, names=None):
        names = self.names() if names is None else names
        return all(n in other and np.array_equal(self[n], other[n]) for n in names)

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self._arrays.values())

    def __repr__(self):
        return 'Parameters(%d tensors, %d values)' % (len(self), self.num_values())


def parameter_shapes(config, topology=None):
    topology = topology or get_topology(config.conditioning_mode)
    c, d = config.latent_channels, config.hidden_dim
    shapes = OrderedDict([('embed.w_in', (c, d)), ('embed.b_in', (d,))])
    if topology.concat_reference:
        shapes['embed.w_ref'] = (c, d)
    shapes['embed.w_time'] = (d, d)
    shapes['cond.p_text'] = (config.text_dim, d)
    shapes['cond.p_image'] = (config.image_dim, d)
    block = topology.block_param_shapes(d, config.mlp_ratio)
    for l in range(config.layers):
        for suffix, shape in iteritems(block):
            shapes['layers.%d.%s' % (l, suffix)] = shape
    shapes['head.w_out'] = (d, c)
    shapes['head.b_out'] = (c,)
    return shapes


def init_parameters(config, topology=None):
    '''
    Uniform in [-1/sqrt(D), 1/sqrt(D)], each tensor from its own stream derived from the seed
    and the tensor's name.
    '''
    rng = Rng(config.seed)
    bound = 1.0 / math.sqrt(config.hidden_dim)
    arrays = OrderedDict()
    for name, shape in iteritems(parameter_shapes(config, topology)):
        if config.zero_init_output and parameter_group(name) == 'head':
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.spawn(name).uniform(shape, -bound, bound)
    return Parameters(arrays)


class Intervention(object):
    '''
    The changes guidance makes to one forward pass.

    - `anchors`: `KeywordAnchor` list; the keyword positions index the text tokens.
    - `lambda_lat`: latent injection strength on the reference hidden state.
    - `lambda_txt`, `fusion_layers`: text-value fusion strength and host layers.
    - `cache_maps`: thresholded attention cache [K, F, H, W], or None.
    - `lambda_cache`, `weak_layers`: cache strength and the layers it may touch.
    '''

    def __init__(self, anchors=(), lambda_lat=0.0, lambda_txt=0.0, fusion_layers=(),
                 cache_maps=None, lambda_cache=0.0, weak_layers=()):
        self.anchors = list(anchors)
        self.keyword_positions = [a.index for a in self.anchors]
        self.anchor_matrix = np.array([a.anchor for a in self.anchors]) if self.anchors else None
        self.regions = [(a.region, a.weights) for a in self.anchors]
        self.lambda_lat = float(lambda_lat)
        self.lambda_txt = float(lambda_txt)
        self.fusion_layers = frozenset(fusion_layers)
        self.cache_maps = cache_maps
        self.lambda_cache = float(lambda_cache)
        self.weak_layers = frozenset(weak_layers)

    @property
    def num_keywords(self):
        return len(self.anchors)

    def injects(self):
        return self.num_keywords > 0 and self.lambda_lat != 0.0

    def fuses_at(self, layer):
        return self.num_keywords > 0 and self.lambda_txt != 0.0 and layer in self.fusion_layers

    def caches_at(self, layer):
        return (self.num_keywords > 0 and self.cache_maps is not None and self.lambda_cache != 0.0
                and layer in self.weak_layers)

    def __repr__(self):
        return 'Intervention(keywords=%s, cache=%s)' % (self.keyword_positions, self.cache_maps is not None)


class Tape(object):
    '''
    Everything `DiT.backward` needs from a recorded forward pass.
    '''

    def __init__(self, **kwargs):
        self.__dict__.update(kwargs)


def _tokens(seq):
    return seq.tokens if isinstance(seq, TokenSequence) else np.asarray(seq, dtype=np.float64)


class DiT(object):
    '''
    The velocity model v(z_t, t, c). Instances are callable as `model(z_t, t, cond)`, which
    returns the velocity array, so they plug directly into the flow sampler.
    '''

    def __init__(self, config, params=None):
        self.config = config.validate()
        self.topology = get_topology(config.conditioning_mode)
        expected = parameter_shapes(config, self.topology)
        if params is None:
            params = init_parameters(config, self.topology)
        elif params.shapes() != expected:
            raise ConfigError('Parameters do not match the %s configuration' % config.conditioning_mode.name)
        self.params = params
        self._pos_cache = {}

    @property
    def num_layers(self):
        return self.config.layers

    def copy(self):
        return DiT(self.config, self.params.copy())

    def block_params(self, layer):
        prefix = 'layers.%d.' % layer
        return dict((n[len(prefix):], a) for n, a in self.params.items() if n.startswith(prefix))

    def value_weight_name(self, layer):
        return 'layers.%d.%s' % (layer, self.topology.value_suffix())

    def visual_values(self, layer, vectors):
        '''
        Hidden-space vectors mapped through the layer's condition value projection.
        '''
        return np.dot(vectors, self.params[self.value_weight_name(layer)])

    def _position(self, frames, height, width):
        key = (frames, height, width)
        if key not in self._pos_cache:
            self._pos_cache[key] = position_embedding(frames, height, width, self.config.hidden_dim)
        return self._pos_cache[key]

    def _check_inputs(self, z, ref, text, image):
        cfg = self.config
        if z.shape[-1] != cfg.latent_channels:
            raise ConfigError('Latent has %d channels, model expects %d' % (z.shape[-1], cfg.latent_channels))
        if ref.shape != z.shape:
            raise ConfigError('Reference latent shape %s differs from %s' % (ref.shape, z.shape))
        if text.ndim != 2 or text.shape[1] != cfg.text_dim:
            raise ConfigError('Text tokens of shape %s, model expects dim %d' % (text.shape, cfg.text_dim))
        if image.ndim != 2 or image.shape[1] != cfg.image_dim:
            raise ConfigError('Image tokens of shape %s, model expects dim %d' % (image.shape, cfg.image_dim))

    def __call__(self, z_t, t, cond):
        return self.forward(z_t, t, cond).velocity.data

    def forward(self, z_t, t, cond, hooks=False, intervention=None, record=False):
        '''
        Predicts the velocity at `z_t`.

        - `cond`: a `Conditioning` of text tokens, image tokens and the reference latent.
        - `hooks`: collect a `LayerState` per layer.
        - `intervention`: optional `Intervention` applied during the pass.
        - `record`: keep a tape for `backward`.

        Returns a `ForwardResult` (velocity, states, tape).
        '''
        cfg, p = self.config, self.params
        z = latent_array(z_t)
        ref = latent_array(cond.z_ref)
        text, image = _tokens(cond.text), _tokens(cond.image)
        self._check_inputs(z, ref, text, image)
        frames, height, width, channels = z.shape
        n, d = frames * height * width, cfg.hidden_dim
        x = z.reshape(n, channels)
        ref = ref.reshape(n, channels).copy()
        ref[height * width:] = 0.0
        iv = intervention

        vhat = None
        if iv is not None and iv.num_keywords:
            vhat = np.dot(iv.anchor_matrix, p['cond.p_image'])
        tsin = timestep_embedding(t, d)
        if self.topology.concat_reference:
            h_ref = np.dot(ref, p['embed.w_ref'])
        else:
            h_ref = np.zeros((n, d))
        if iv is not None and iv.injects():
            h_ref = inject_latent(h_ref.reshape(frames, height, width, d), iv.regions, vhat,
                                  iv.lambda_lat).reshape(n, d)
        h = np.dot(x, p['embed.w_in']) + p['embed.b_in'] + h_ref + self._position(frames, height, width) \
            + np.dot(tsin, p['embed.w_time'])
        ctx = np.vstack([np.dot(text, p['cond.p_text']), np.dot(image, p['cond.p_image'])])
        num_text = text.shape[0]

        states, records = [], []
        for l in range(cfg.layers):
            bp = self.block_params(l)
            cache_vis = None
            if iv is not None and iv.caches_at(l):
                cache_vis = np.dot(vhat, bp[self.topology.value_suffix()])
                h = apply_cache(h, iv.cache_maps, cache_vis, iv.lambda_cache, l, iv.weak_layers)
            fused = iv is not None and iv.fuses_at(l)
            values_in = ctx
            if fused:
                values_in = ctx.copy()
                for k, pos in enumerate(iv.keyword_positions):
                    values_in[pos] = fuse_text_value(ctx[pos], vhat[k], iv.lambda_txt)
            h_in = h
            h, rec = self.topology.block_forward(bp, h, ctx, values_in, cfg.heads, num_text)
            if hooks:
                states.append(LayerState(l, h_in, rec.text_values, rec.logits))
            if record:
                records.append((rec, fused, cache_vis))

        out = np.dot(h, p['head.w_out']) + p['head.b_out']
        velocity = LatentVideo(out.reshape(z.shape))
        tape = None
        if record:
            tape = Tape(shape=z.shape, x=x, ref=ref, tsin=tsin, text=text, image=image,
                        num_ctx=ctx.shape[0], h_final=h, records=records, vhat=vhat, intervention=iv)
        return ForwardResult(velocity, states if hooks else None, tape)

    def backward(self, tape, dvelocity):
        '''
        Gradients of a scalar loss with respect to every parameter, given the loss gradient
        `dvelocity` with respect to the velocity of the recorded pass. Guidance terms are
        differentiated as well; the attention cache maps are treated as constants.
        '''
        if tape is None:
            raise ContractError('missing tape: run forward(..., record=True) first')
        p = self.params
        frames, height, width, channels = tape.shape
        n = frames * height * width
        dout = np.asarray(dvelocity, dtype=np.float64).reshape(n, channels)
        grads = p.zeros_like()
        iv = tape.intervention
        value_suffix = self.topology.value_suffix()

        grads['head.w_out'] = np.dot(tape.h_final.T, dout)
        grads['head.b_out'] = dout.sum(axis=0)
        dh = np.dot(dout, p['head.w_out'].T)
        dctx = np.zeros((tape.num_ctx, self.config.hidden_dim))
        dvhat = np.zeros_like(tape.vhat) if tape.vhat is not None else None

        for l in reversed(range(self.config.layers)):
            rec, fused, cache_vis = tape.records[l]
            bp = self.block_params(l)
            dh, dctx_l, dvalues, block_grads = self.topology.block_backward(dh, bp, rec)
            for suffix, g in iteritems(block_grads):
                grads['layers.%d.%s' % (l, suffix)] = g
            dctx += dctx_l + dvalues
            if fused:
                for k, pos in enumerate(iv.keyword_positions):
                    dvhat[k] += iv.lambda_txt * dvalues[pos]
            if cache_vis is not None:
                maps = np.asarray(iv.cache_maps).reshape(iv.num_keywords, n)
                dvis = iv.lambda_cache * np.dot(maps, dh)
                name = 'layers.%d.%s' % (l, value_suffix)
                grads[name] = grads[name] + np.dot(tape.vhat.T, dvis)
                dvhat += np.dot(dvis, bp[value_suffix].T)

        num_text = tape.text.shape[0]
        grads['cond.p_text'] = np.dot(tape.text.T, dctx[:num_text])
        grads['cond.p_image'] = np.dot(tape.image.T, dctx[num_text:])
        grads['embed.w_in'] = np.dot(tape.x.T, dh)
        grads['embed.b_in'] = dh.sum(axis=0)
        if self.topology.concat_reference:
            grads['embed.w_ref'] = np.dot(tape.ref.T, dh)
        grads['embed.w_time'] = np.outer(tape.tsin, dh.sum(axis=0))
        if iv is not None and iv.injects():
            dh_ref0 = dh.reshape(frames, height, width, -1)[0]
            for k, (mask, weights) in enumerate(iv.regions):
                dvhat[k] += iv.lambda_lat * (weights[mask][:, None] * dh_ref0[mask]).sum(axis=0)
        if dvhat is not None:
            grads['cond.p_image'] = grads['cond.p_image'] + np.dot(iv.anchor_matrix.T, dvhat)
        return grads

    def __repr__(self):
        return 'DiT(%s, layers=%d, dim=%d, mode=%s)' % (self.config.name, self.config.layers,
                                                       self.config.hidden_dim, self.config.conditioning_mode.name)
