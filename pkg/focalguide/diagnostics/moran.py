'''
Spatial autocorrelation of similarity maps on the latent grid.

Cells are adjacent under 8-connectivity without wraparound; w_ij is 1 for adjacent cells
and 0 otherwise (w_ii = 0). For a frame x with N cells and deviations d = x - mean(x):

    I = N * sum_ij w_ij d_i d_j / sum_i d_i^2

This is the statistic without the usual division by W = sum_ij w_ij; pass
`normalize_by_w=True` for the textbook form.
'''
from __future__ import unicode_literals
from collections import namedtuple

import numpy as np

from ..core.errors import ConfigError
from ..core.tensor import as_tensor

NEIGHBOR_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]

PermutationTest = namedtuple('PermutationTest', 'morans_i expected p_value replicates')


def neighbor_weights(height, width):
    '''
    The dense [N, N] 8-connectivity weight matrix in row-major cell order.
    '''
    n = height * width
    w = np.zeros((n, n))
    for y in range(height):
        for x in range(width):
            for dy, dx in NEIGHBOR_OFFSETS:
                yy, xx = y + dy, x + dx
                if 0 <= yy < height and 0 <= xx < width:
                    w[y * width + x, yy * width + xx] = 1.0
    return w


def weight_sum(height, width):
    '''
    W: the number of ordered adjacent pairs.
    '''
    total = 0
    for dy, dx in NEIGHBOR_OFFSETS:
        total += max(height - abs(dy), 0) * max(width - abs(dx), 0)
    return total


def _cross_sum(d):
    height, width = d.shape
    total = 0.0
    for dy, dx in NEIGHBOR_OFFSETS:
        src = d[max(0, -dy):height - max(0, dy), max(0, -dx):width - max(0, dx)]
        dst = d[max(0, dy):height - max(0, -dy), max(0, dx):width - max(0, -dx)]
        total += float(np.sum(src * dst))
    return total


def morans_i_frame(frame, normalize_by_w=False):
    '''
    Moran's I of one [H, W] frame. A constant frame has I = 0.
    '''
    frame = as_tensor(frame, 'frame', ndim=2)
    height, width = frame.shape
    if height * width < 2:
        raise ConfigError('Moran\'s I needs at least 2 cells, got %dx%d' % (height, width))
    if frame.max() == frame.min():
        return 0.0
    d = frame - frame.mean()
    value = height * width * _cross_sum(d) / float(np.sum(d * d))
    if normalize_by_w:
        value /= weight_sum(height, width)
    return value


def morans_i_layer(maps, normalize_by_w=False):
    '''
    Mean of the per-frame Moran's I of a [F, H, W] map.
    '''
    maps = as_tensor(maps, 'map', ndim=3)
    return float(np.mean([morans_i_frame(f, normalize_by_w) for f in maps]))


def std_layer(maps):
    '''
    Mean over frames of the population standard deviation of each frame.
    '''
    maps = as_tensor(maps, 'map', ndim=3)
    return float(np.mean([f.std() for f in maps]))


def expected_morans_i(num_cells, normalize_by_w=False, height=None, width=None):
    '''
    Expectation of I under spatial randomness: -1/(N-1) for the textbook form, scaled by W
    otherwise.
    '''
    expected = -1.0 / (num_cells - 1)
    if not normalize_by_w:
        if height is None or width is None:
            raise ConfigError('Grid dimensions are needed for the unnormalized expectation')
        expected *= weight_sum(height, width)
    return expected


def morans_i_permutation_test(frame, permutations, rng, normalize_by_w=False):
    '''
    Pseudo p-value of a frame's Moran's I against random relabelings of its cells:
    (1 + #{replicates >= I}) / (1 + permutations).
    '''
    frame = as_tensor(frame, 'frame', ndim=2)
    if permutations < 1:
        raise ConfigError('permutations must be >= 1, got %d' % permutations)
    observed = morans_i_frame(frame, normalize_by_w)
    flat = frame.ravel()
    replicates = np.array([morans_i_frame(flat[rng.permutation(flat.size)].reshape(frame.shape), normalize_by_w)
                           for _ in range(permutations)])
    p_value = (1.0 + np.sum(replicates >= observed)) / (1.0 + permutations)
    expected = expected_morans_i(flat.size, normalize_by_w, *frame.shape)
    return PermutationTest(observed, expected, float(p_value), replicates)
