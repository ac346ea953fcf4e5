from __future__ import unicode_literals
import math
import zlib

import numpy as np
from six import text_type

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def mix64(z):
    '''
    The splitmix64 finalizer on a Python int.
    '''
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class Rng(object):
    '''
    Deterministic splitmix64 generator.

    The state is a 64-bit counter advanced by the golden-ratio increment 0x9E3779B97F4A7C15;
    each output is the splitmix64 finalizer of the advanced counter:

        state = state + 0x9E3779B97F4A7C15 (mod 2**64)
        z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        out = z ^ (z >> 31)

    All arithmetic is unsigned 64-bit, so a seed yields the same stream on every platform.
    Array draws are vectorized over the counter and produce exactly the values successive
    `next_u64()` calls would.
    '''

    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self.state = self.seed

    def next_u64(self):
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64_array(self, n):
        '''
        Returns the next `n` outputs as a uint64 array and advances the state.
        '''
        n = int(n)
        if n < 0:
            raise ValueError('Negative draw count: %d' % n)
        with np.errstate(over='ignore'):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
            counters = steps + np.uint64(self.state)
            out = _mix64_array(counters)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def uniform(self, shape=(), low=0.0, high=1.0):
        '''
        Draws reals in [low, high) with 53 random bits each.
        '''
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape=(), mean=0.0, std=1.0):
        '''
        Standard normal draws by the Box-Muller transform, two outputs per pair of uniforms.
        '''
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        raw = self.u64_array(2 * pairs) >> np.uint64(11)
        u1 = (raw[0::2].astype(np.float64) + 1.0) * (2.0 ** -53)
        u2 = raw[1::2].astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(2.0 * math.pi * u2)
        z[1::2] = r * np.sin(2.0 * math.pi * u2)
        return (mean + std * z[:n]).reshape(shape)

    def integers(self, low, high, shape=()):
        '''
        Integers in [low, high).
        '''
        if high <= low:
            raise ValueError('Empty integer range [%d, %d)' % (low, high))
        u = self.uniform(shape)
        return (low + np.floor(u * (high - low))).astype(np.int64)

    def permutation(self, n):
        return np.argsort(self.uniform((n,)), kind='stable')

    def spawn(self, key):
        '''
        Derives an independent child generator. The child depends only on this generator's
        seed and `key`, not on how many values were drawn so far.
        '''
        tag = zlib.crc32(text_type(key).encode('utf-8')) & 0xFFFFFFFF
        return Rng(mix64((self.seed + GAMMA * (tag + 1)) & MASK64))

    def __repr__(self):
        return 'Rng(seed=%d)' % self.seed


def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)
