'''
Forward/backward primitives of the toy DiT.

Each `*_forward` returns its output and a cache; the matching `*_backward` takes the upstream
gradient and that cache. Row-major [tokens, features] matrices throughout.
'''
from __future__ import unicode_literals
import math

import numpy as np

LN_EPS = 1e-6
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


def linear_forward(x, w, b=None):
    out = np.dot(x, w)
    if b is not None:
        out = out + b
    return out, (x, w)


def linear_backward(dout, cache):
    '''
    Returns (dx, dw, db).
    '''
    x, w = cache
    return np.dot(dout, w.T), np.dot(x.T, dout), dout.sum(axis=0)


def layer_norm_forward(x):
    '''
    Normalizes each row to zero mean and unit variance (no affine parameters).
    '''
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat, (xhat, inv)


def layer_norm_backward(dout, cache):
    xhat, inv = cache
    mean_d = dout.mean(axis=-1, keepdims=True)
    mean_dx = (dout * xhat).mean(axis=-1, keepdims=True)
    return inv * (dout - mean_d - xhat * mean_dx)


def gelu_forward(x):
    '''
    GELU, tanh approximation.
    '''
    th = np.tanh(GELU_C * (x + GELU_A * x ** 3))
    return 0.5 * x * (1.0 + th), (x, th)


def gelu_backward(dout, cache):
    x, th = cache
    du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return dout * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def split_heads(x, heads):
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def merge_heads(x):
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def attention_forward(q_in, k_in, v_in, wq, wk, wv, wo, heads):
    '''
    Multi-head softmax attention with 1/sqrt(head_dim) scaling.

    Queries come from `q_in`, keys from `k_in` and values from `v_in`; the key and value
    inputs must have the same number of rows. Returns (out, logits, cache) with logits of
    shape [heads, len(q_in), len(k_in)].
    '''
    q = np.dot(q_in, wq)
    k = np.dot(k_in, wk)
    v = np.dot(v_in, wv)
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    logits = np.matmul(qh, kh.transpose(0, 2, 1)) * scale
    probs = softmax(logits)
    o = merge_heads(np.matmul(probs, vh))
    out = np.dot(o, wo)
    cache = (q_in, k_in, v_in, wq, wk, wv, wo, heads, qh, kh, vh, probs, o, scale)
    return out, logits, cache


def attention_backward(dout, cache):
    '''
    Returns a dict with the gradients `q_in`, `k_in`, `v_in`, `wq`, `wk`, `wv`, `wo`.
    '''
    q_in, k_in, v_in, wq, wk, wv, wo, heads, qh, kh, vh, probs, o, scale = cache
    dwo = np.dot(o.T, dout)
    doh = split_heads(np.dot(dout, wo.T), heads)
    dprobs = np.matmul(doh, vh.transpose(0, 2, 1))
    dvh = np.matmul(probs.transpose(0, 2, 1), doh)
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dqh = np.matmul(dlogits, kh) * scale
    dkh = np.matmul(dlogits.transpose(0, 2, 1), qh) * scale
    dq, dk, dv = merge_heads(dqh), merge_heads(dkh), merge_heads(dvh)
    return dict(
        q_in=np.dot(dq, wq.T), k_in=np.dot(dk, wk.T), v_in=np.dot(dv, wv.T),
        wq=np.dot(q_in.T, dq), wk=np.dot(k_in.T, dk), wv=np.dot(v_in.T, dv), wo=dwo,
    )


def mlp_forward(x, w1, b1, w2, b2):
    hidden, c1 = linear_forward(x, w1, b1)
    act, cg = gelu_forward(hidden)
    out, c2 = linear_forward(act, w2, b2)
    return out, (c1, cg, c2)


def mlp_backward(dout, cache):
    '''
    Returns (dx, dw1, db1, dw2, db2).
    '''
    c1, cg, c2 = cache
    dact, dw2, db2 = linear_backward(dout, c2)
    dhidden = gelu_backward(dact, cg)
    dx, dw1, db1 = linear_backward(dhidden, c1)
    return dx, dw1, db1, dw2, db2


def sinusoidal_embedding(values, dim, max_period=10000.0):
    '''
    Standard sin/cos embedding of a vector of scalars, shape [len(values), dim].
    Odd `dim` leaves the last column zero.
    '''
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / max(half, 1))
    args = values[:, None] * freqs[None, :]
    emb = np.zeros((values.shape[0], dim))
    emb[:, :half] = np.cos(args)
    emb[:, half:2 * half] = np.sin(args)
    return emb


def timestep_embedding(t, dim):
    '''
    Embedding of a flow time in [0, 1]; times are scaled by 1000 as in the usual DiT recipe.
    '''
    return sinusoidal_embedding([1000.0 * float(t)], dim)[0]


def position_embedding(frames, height, width, dim):
    '''
    Fixed 3-D positional embedding, shape [frames*height*width, dim]. Channels are dealt to
    the (frame, row, column) axes round-robin; each axis gets its own sin/cos bands.
    '''
    f, y, x = np.meshgrid(np.arange(frames), np.arange(height), np.arange(width), indexing='ij')
    coords = [f.ravel().astype(np.float64), y.ravel().astype(np.float64), x.ravel().astype(np.float64)]
    emb = np.zeros((frames * height * width, dim))
    for axis in range(3):
        cols = np.arange(axis, dim, 3)
        if cols.size:
            emb[:, cols] = sinusoidal_embedding(coords[axis], cols.size, max_period=100.0)
    return emb
