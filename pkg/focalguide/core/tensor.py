'''
Dense tensor helpers shared by every module.

Tensors are row-major float64 numpy arrays. Public operations validate that their
inputs and outputs are finite; `LatentVideo` and `TokenSequence` add the shape
contracts of latent videos and condition token sequences.
'''
from __future__ import unicode_literals
from enum import Enum

import numpy as np

from .errors import NumericError, DegenerateVectorError, ConfigError


class Modality(Enum):
    text = 1
    image = 2
    anchor = 3


def as_tensor(data, name='tensor', ndim=None):
    '''
    Converts `data` to a contiguous float64 array and checks it is finite and non-empty.

    - `name`: used in error messages.
    - `ndim`: if given, the required rank.
    '''
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ConfigError('%s must have rank %d, got shape %s' % (name, ndim, arr.shape))
    if arr.size == 0 or any(extent < 1 for extent in arr.shape):
        raise ConfigError('%s must be non-empty, got shape %s' % (name, arr.shape))
    check_finite(arr, name)
    return arr


def check_finite(arr, name='tensor', step=None):
    if not np.all(np.isfinite(arr)):
        raise NumericError('%s contains non-finite values' % name, step=step)
    return arr


def frozen(arr):
    '''
    Returns a read-only float64 view; shared inputs are never modified in place.
    '''
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


class LatentVideo(object):
    '''
    A latent video of shape [F', H', W', C]. The data array is read-only; every operation
    that changes a latent returns a new instance.
    '''

    __slots__ = ('data',)

    def __init__(self, data):
        data = as_tensor(data, 'latent video', ndim=4)
        object.__setattr__(self, 'data', frozen(data))

    def __setattr__(self, name, value):
        raise AttributeError('LatentVideo is immutable')

    @property
    def shape(self):
        return self.data.shape

    @property
    def frames(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def channels(self):
        return self.data.shape[3]

    @property
    def num_cells(self):
        return self.frames * self.height * self.width

    def tokens(self):
        '''
        The latent as a [F'*H'*W', C] matrix, one row per cell in row-major order.
        '''
        return self.data.reshape(self.num_cells, self.channels)

    def array(self):
        '''
        A writable copy of the data.
        '''
        return np.array(self.data, copy=True)

    @classmethod
    def zeros(cls, frames, height, width, channels):
        return cls(np.zeros((frames, height, width, channels)))

    def __eq__(self, other):
        return isinstance(other, LatentVideo) and np.array_equal(self.data, other.data)

    def __ne__(self, other):
        return not self == other

    __hash__ = None

    def __repr__(self):
        return 'LatentVideo(shape=%s)' % (self.shape,)


def latent_array(value):
    '''
    Accepts a `LatentVideo` or array-like and returns the underlying array.
    '''
    if isinstance(value, LatentVideo):
        return value.data
    return as_tensor(value, 'latent video', ndim=4)


class TokenSequence(object):
    '''
    Ordered D-dimensional token embeddings tagged with their modality.

    - `grid`: optional (rows, cols) layout of image tokens on the reference frame; used to
      map visual-token similarities onto the latent grid.
    '''

    def __init__(self, modality, tokens, grid=None):
        if not isinstance(modality, Modality):
            modality = Modality[modality]
        tokens = np.ascontiguousarray(tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ConfigError('%s tokens must be a [count, dim] matrix, got shape %s' % (modality.name, tokens.shape))
        if tokens.shape[1] < 1:
            raise ConfigError('%s tokens must have positive dim' % modality.name)
        if tokens.shape[0] == 0 and modality is not Modality.anchor:
            raise ConfigError('%s token sequence may not be empty' % modality.name)
        check_finite(tokens, '%s tokens' % modality.name)
        if grid is not None:
            grid = (int(grid[0]), int(grid[1]))
            if grid[0] * grid[1] != tokens.shape[0]:
                raise ConfigError('grid %s does not match %d tokens' % (grid, tokens.shape[0]))
        self.modality = modality
        self.tokens = frozen(tokens)
        self.grid = grid

    @property
    def dim(self):
        return self.tokens.shape[1]

    def __len__(self):
        return self.tokens.shape[0]

    def __repr__(self):
        return 'TokenSequence(%s, count=%d, dim=%d)' % (self.modality.name, len(self), self.dim)


def cosine_similarity(a, b):
    '''
    Cosine of the angle between two vectors, clipped to [-1, 1].
    Raises `DegenerateVectorError` when either vector has zero norm.
    '''
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ConfigError('dim mismatch: %d vs %d' % (a.size, b.size))
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError('degenerate vector')
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_matrix(a, b, zero_norm='error'):
    '''
    Pairwise cosines between the rows of `a` [m, D] and `b` [n, D], shape [m, n].

    - `zero_norm`: 'error' raises `DegenerateVectorError` for zero-norm rows,
      'zero' defines their cosines as 0.
    '''
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ConfigError('dim mismatch: %d vs %d' % (a.shape[-1], b.shape[-1]))
    na = np.sqrt(np.einsum('ij,ij->i', a, a))
    nb = np.sqrt(np.einsum('ij,ij->i', b, b))
    if zero_norm == 'error' and (np.any(na == 0.0) or np.any(nb == 0.0)):
        raise DegenerateVectorError('degenerate vector')
    denom = np.outer(na, nb)
    safe = np.where(denom > 0.0, denom, 1.0)
    cos = np.where(denom > 0.0, np.dot(a, b.T) / safe, 0.0)
    return np.clip(cos, -1.0, 1.0)


def minmax_normalize(values, spatial_ndim=2):
    '''
    Per-frame affine rescale to [0, 1] over the trailing `spatial_ndim` axes; every leading
    axis indexes frames. Constant frames map to all zeros.

    The layout is not inferred: a [H, W] map is one frame with the default `spatial_ndim=2`,
    while rows of flattened frames [F, N] need `spatial_ndim=1`. A 1-D input is one frame.
    '''
    values = as_tensor(values, 'similarity map')
    axes = tuple(range(values.ndim - min(spatial_ndim, values.ndim), values.ndim))
    lo = values.min(axis=axes, keepdims=True)
    hi = values.max(axis=axes, keepdims=True)
    span = hi - lo
    safe = np.where(span > 0.0, span, 1.0)
    return np.where(span > 0.0, (values - lo) / safe, 0.0)
