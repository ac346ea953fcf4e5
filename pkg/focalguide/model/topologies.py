from __future__ import unicode_literals
from collections import OrderedDict, namedtuple
from enum import Enum

import numpy as np

from . import layers
from ..core.errors import ConfigError


class ConditioningMode(Enum):
    cross_attention = 1
    token_concat = 2


# What a block leaves behind for hooks and for backpropagation.
BlockRecord = namedtuple('BlockRecord', 'logits text_values caches')


class Topology(object):
    '''
    How the text and image conditions reach the visual tokens inside one transformer block.
    Subclasses declare their per-block parameters and implement the block's forward and
    backward pass.
    '''

    mode = None
    # whether z_ref is concatenated channel-wise onto the first frame (embed.w_ref)
    concat_reference = False

    def block_param_shapes(self, dim, mlp_ratio):
        '''
        Returns an OrderedDict from parameter suffix (e.g. "attn.wq") to shape.
        '''
        shapes = self._attention_shapes(dim)
        shapes['mlp.w1'] = (dim, mlp_ratio * dim)
        shapes['mlp.b1'] = (mlp_ratio * dim,)
        shapes['mlp.w2'] = (mlp_ratio * dim, dim)
        shapes['mlp.b2'] = (dim,)
        return shapes

    def _attention_shapes(self, dim):
        raise NotImplementedError()   # pragma: no cover

    def cross_attention_suffixes(self):
        '''
        Suffixes of the weights through which the conditions are attended to.
        '''
        raise NotImplementedError()   # pragma: no cover

    def value_suffix(self):
        '''
        Suffix of the value projection applied to the condition tokens.
        '''
        raise NotImplementedError()   # pragma: no cover

    def block_forward(self, p, h, ctx, values_in, heads, num_text):
        '''
        Runs one block.

        - `p`: dict from suffix to array for this block.
        - `h`: visual hidden states [P, D].
        - `ctx`: projected condition tokens [M+N, D] (text first), used for queries and keys.
        - `values_in`: condition tokens used for values; equals `ctx` unless text-value
          fusion replaced some text rows.
        - `num_text`: M.

        Returns (new hidden states, BlockRecord).
        '''
        raise NotImplementedError()   # pragma: no cover

    def block_backward(self, dh, p, record):
        '''
        Returns (dh_in, dctx, dvalues_in, grads) with `grads` keyed by suffix.
        '''
        raise NotImplementedError()   # pragma: no cover

    def _mlp_forward(self, p, h):
        d, c_ln = layers.layer_norm_forward(h)
        m, c_mlp = layers.mlp_forward(d, p['mlp.w1'], p['mlp.b1'], p['mlp.w2'], p['mlp.b2'])
        return h + m, (c_ln, c_mlp)

    def _mlp_backward(self, dh, caches, grads):
        c_ln, c_mlp = caches
        dd, grads['mlp.w1'], grads['mlp.b1'], grads['mlp.w2'], grads['mlp.b2'] = layers.mlp_backward(dh, c_mlp)
        return dh + layers.layer_norm_backward(dd, c_ln)

    @staticmethod
    def _attention_params(p, prefix):
        return p[prefix + '.wq'], p[prefix + '.wk'], p[prefix + '.wv'], p[prefix + '.wo']

    @staticmethod
    def _attention_shape_set(prefix, dim):
        return [(prefix + '.' + w, (dim, dim)) for w in ('wq', 'wk', 'wv', 'wo')]

    def __repr__(self):
        return '%s()' % self.__class__.__name__


class CrossAttention(Topology):
    '''
    Visual tokens self-attend, then cross-attend to the concatenation of text and image tokens.
    The reference latent enters through the patch embedding, concatenated channel-wise.
    '''

    mode = ConditioningMode.cross_attention
    concat_reference = True

    def _attention_shapes(self, dim):
        return OrderedDict(self._attention_shape_set('attn', dim) + self._attention_shape_set('cross', dim))

    def cross_attention_suffixes(self):
        return ['cross.wq', 'cross.wk', 'cross.wv', 'cross.wo']

    def value_suffix(self):
        return 'cross.wv'

    def block_forward(self, p, h, ctx, values_in, heads, num_text):
        a, c_ln1 = layers.layer_norm_forward(h)
        o, _, c_self = layers.attention_forward(a, a, a, *self._attention_params(p, 'attn'), heads=heads)
        h = h + o
        b, c_ln2 = layers.layer_norm_forward(h)
        o, logits, c_cross = layers.attention_forward(b, ctx, values_in, *self._attention_params(p, 'cross'), heads=heads)
        h = h + o
        h, c_mlp = self._mlp_forward(p, h)
        text_values = np.dot(values_in[:num_text], p['cross.wv'])
        return h, BlockRecord(logits, text_values, (c_ln1, c_self, c_ln2, c_cross, c_mlp))

    def block_backward(self, dh, p, record):
        c_ln1, c_self, c_ln2, c_cross, c_mlp = record.caches
        grads = {}
        dh = self._mlp_backward(dh, c_mlp, grads)
        g = layers.attention_backward(dh, c_cross)
        for w in ('wq', 'wk', 'wv', 'wo'):
            grads['cross.' + w] = g[w]
        dh = dh + layers.layer_norm_backward(g['q_in'], c_ln2)
        dctx, dvalues = g['k_in'], g['v_in']
        g = layers.attention_backward(dh, c_self)
        for w in ('wq', 'wk', 'wv', 'wo'):
            grads['attn.' + w] = g[w]
        dh = dh + layers.layer_norm_backward(g['q_in'] + g['k_in'] + g['v_in'], c_ln1)
        return dh, dctx, dvalues, grads


class TokenConcat(Topology):
    '''
    Condition tokens are concatenated with the visual tokens along the token axis and one
    joint attention runs over all M+N+P tokens. Only the visual rows are carried forward.
    The first frame reaches the model only as image tokens; there is no reference embedding.
    '''

    mode = ConditioningMode.token_concat

    def _attention_shapes(self, dim):
        return OrderedDict(self._attention_shape_set('attn', dim))

    def cross_attention_suffixes(self):
        return ['attn.wq', 'attn.wk', 'attn.wv', 'attn.wo']

    def value_suffix(self):
        return 'attn.wv'

    def block_forward(self, p, h, ctx, values_in, heads, num_text):
        a, c_ln1 = layers.layer_norm_forward(h)
        joint = np.vstack([ctx, a])
        joint_values = np.vstack([values_in, a])
        o, logits, c_attn = layers.attention_forward(joint, joint, joint_values,
                                                     *self._attention_params(p, 'attn'), heads=heads)
        h = h + o[ctx.shape[0]:]
        h, c_mlp = self._mlp_forward(p, h)
        text_values = np.dot(values_in[:num_text], p['attn.wv'])
        return h, BlockRecord(logits, text_values, (c_ln1, c_attn, c_mlp, ctx.shape[0]))

    def block_backward(self, dh, p, record):
        c_ln1, c_attn, c_mlp, num_ctx = record.caches
        grads = {}
        dh = self._mlp_backward(dh, c_mlp, grads)
        dout = np.zeros((num_ctx + dh.shape[0], dh.shape[1]))
        dout[num_ctx:] = dh
        g = layers.attention_backward(dout, c_attn)
        for w in ('wq', 'wk', 'wv', 'wo'):
            grads['attn.' + w] = g[w]
        djoint = g['q_in'] + g['k_in']
        dvalues = g['v_in']
        da = djoint[num_ctx:] + dvalues[num_ctx:]
        dh = dh + layers.layer_norm_backward(da, c_ln1)
        return dh, djoint[:num_ctx], dvalues[:num_ctx], grads


TOPOLOGIES = {
    ConditioningMode.cross_attention: CrossAttention,
    ConditioningMode.token_concat: TokenConcat,
}


def get_topology(mode):
    if not isinstance(mode, ConditioningMode):
        try:
            mode = ConditioningMode[mode]
        except KeyError:
            raise ConfigError('Unknown conditioning mode "%s"' % mode)
    return TOPOLOGIES[mode]()
