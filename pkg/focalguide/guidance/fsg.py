'''
Fine-grained semantic guidance: binds prompt keywords to visual anchors built from the
reference image tokens, then strengthens those keywords inside the transformer.

    keyword_similarity -> select_keywords -> compute_anchor -> project_anchor_and_text
                                           -> extract_region -> inject_latent
    fuse_text_value runs inside the host attention layers.
'''
from __future__ import unicode_literals
from collections import namedtuple
from enum import Enum

import numpy as np

from ..core.errors import ConfigError, ContractError
from ..core.tensor import TokenSequence, cosine_matrix, minmax_normalize, check_finite

import logging
logger = logging.getLogger('focalguide.guidance')


class SignMode(Enum):
    positive = 1
    paper_negative = 2


KeywordAnchor = namedtuple('KeywordAnchor', 'index text_embedding anchor similarity region weights')
KeywordAnchor.__doc__ = '''
A selected keyword and its grounding in the reference image.

- `index`: position of the keyword in the text token sequence.
- `text_embedding`: t_k.
- `anchor`: similarity-weighted sum of the image tokens.
- `similarity`: S_k over the image tokens.
- `region`: boolean mask over the latent grid, never empty.
- `weights`: region weights in [0, 1], zero outside the region.
'''


def _tokens(seq):
    return seq.tokens if isinstance(seq, TokenSequence) else np.asarray(seq, dtype=np.float64)


def keyword_similarity(text, image, sign_mode=SignMode.positive):
    '''
    S[m, n] = +/- cos(t_m, v_n) for text tokens `text` [M, D] and image tokens `image` [N, D].
    `SignMode.paper_negative` applies the negated cosine.
    '''
    t, v = _tokens(text), _tokens(image)
    if t.shape[1] != v.shape[1]:
        raise ConfigError('Text and image token dims differ: %d vs %d' % (t.shape[1], v.shape[1]))
    sim = cosine_matrix(t, v, zero_norm='error')
    return -sim if sign_mode is SignMode.paper_negative else sim


def select_keywords(similarity, tau_sel):
    '''
    Indices m whose best match max_n S[m, n] exceeds `tau_sel`, ascending.
    '''
    similarity = np.asarray(similarity, dtype=np.float64)
    check_finite(similarity, 'similarity')
    return [int(m) for m in np.flatnonzero(similarity.max(axis=1) > tau_sel)]


def compute_anchor(similarity_row, image):
    '''
    The visual anchor sum_n S[k, n] * v_n. An all-zero row yields the zero vector.
    '''
    row = np.asarray(similarity_row, dtype=np.float64)
    v = _tokens(image)
    if row.shape != (v.shape[0],):
        raise ConfigError('Similarity row has %d entries for %d image tokens' % (row.size, v.shape[0]))
    if not np.any(row):
        logger.warning('Degenerate anchor: all similarities are zero')
    return np.dot(row, v)


def project_anchor_and_text(text_embedding, anchor, p_text, p_image):
    '''
    Maps t_k and the anchor into the transformer's hidden space with the condition
    projections `p_text` [D_t, D] and `p_image` [D_v, D].
    '''
    t = np.asarray(text_embedding, dtype=np.float64)
    a = np.asarray(anchor, dtype=np.float64)
    if t.shape[-1] != p_text.shape[0]:
        raise ConfigError('Text embedding dim %d does not match projection %s' % (t.shape[-1], p_text.shape))
    if a.shape[-1] != p_image.shape[0]:
        raise ConfigError('Anchor dim %d does not match projection %s' % (a.shape[-1], p_image.shape))
    return np.dot(t, p_text), np.dot(a, p_image)


def fuse_text_value(text_value, visual_value, lambda_txt):
    '''
    Additive value fusion V_text + lambda * V_vis. Queries and keys are not involved, so the
    host layer's attention pattern is unchanged.
    '''
    text_value = np.asarray(text_value, dtype=np.float64)
    visual_value = np.asarray(visual_value, dtype=np.float64)
    if text_value.shape != visual_value.shape:
        raise ConfigError('Value dims differ: %s vs %s' % (text_value.shape, visual_value.shape))
    if lambda_txt == 0.0:
        return text_value
    return text_value + lambda_txt * visual_value


def similarity_grid(similarity_row, token_grid, grid_shape):
    '''
    Lays a similarity row over the image tokens onto the latent grid `grid_shape` (H, W).
    Token grids of a different size are resampled to the nearest cell.
    '''
    row = np.asarray(similarity_row, dtype=np.float64)
    rows, cols = token_grid
    if rows * cols != row.size:
        raise ConfigError('Token grid %s does not match %d similarities' % (token_grid, row.size))
    grid = row.reshape(rows, cols)
    height, width = grid_shape
    if (rows, cols) == (height, width):
        return grid
    ys = (np.arange(height) * rows) // height
    xs = (np.arange(width) * cols) // width
    return grid[np.ix_(ys, xs)]


def extract_region(similarity_map, tau_region):
    '''
    Region of a keyword on the latent grid: the cells whose min-max normalized similarity
    exceeds `tau_region`. Weights are the normalized similarities divided by their maximum
    inside the region. Returns (mask, weights), or None when no cell qualifies.
    '''
    s = minmax_normalize(similarity_map, spatial_ndim=2)
    mask = s > tau_region
    if not mask.any():
        logger.warning('Empty region at tau_region=%g; keyword dropped', tau_region)
        return None
    weights = np.where(mask, s / s[mask].max(), 0.0)
    return mask, weights


def region_cells(mask):
    return set((int(u), int(v)) for u, v in zip(*np.nonzero(mask)))


def inject_latent(z_ref, regions, vectors, lambda_lat, frame=0):
    '''
    Adds lambda * w_k(u, v) * V_k to every cell (u, v) of each keyword region, in ascending
    keyword order. Cells outside all regions are returned bit-unchanged.

    - `z_ref`: reference latent [F, H, W, C] (or a single frame [H, W, C]).
    - `regions`: list of (mask, weights) pairs over [H, W].
    - `vectors`: [K, C] injected vectors, one per region.
    - `frame`: the frame that holds the reference image.
    '''
    z = np.array(z_ref, dtype=np.float64, copy=True)
    if lambda_lat == 0.0 or not len(regions):
        return z
    target = z if z.ndim == 3 else z[frame]
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape != (len(regions), target.shape[-1]):
        raise ConfigError('Injected vectors %s do not match %d regions of %d channels'
                          % (vectors.shape, len(regions), target.shape[-1]))
    for (mask, weights), vec in zip(regions, vectors):
        if mask.shape != target.shape[:2]:
            raise ContractError('Region of shape %s out of grid bounds %s' % (mask.shape, target.shape[:2]))
        target[mask] += lambda_lat * weights[mask][:, None] * vec
    return z


def build_anchors(text, image, tau_sel, tau_region, sign_mode, grid_shape, keywords=None):
    '''
    Runs keyword selection, anchoring and region extraction for one pair of conditions.

    - `image`: a `TokenSequence` whose `grid` gives the image token layout; without a grid the
      tokens must already match `grid_shape`.
    - `keywords`: optional explicit keyword indices; they bypass `tau_sel`.

    Returns the list of `KeywordAnchor` in ascending keyword order; keywords with an empty
    region are dropped.
    '''
    t, v = _tokens(text), _tokens(image)
    token_grid = getattr(image, 'grid', None) or tuple(grid_shape)
    sim = keyword_similarity(t, v, sign_mode)
    selected = select_keywords(sim, tau_sel) if keywords is None else sorted(keywords)
    anchors = []
    for k in selected:
        if not 0 <= k < t.shape[0]:
            raise ConfigError('Keyword index %d out of range for %d text tokens' % (k, t.shape[0]))
        region = extract_region(similarity_grid(sim[k], token_grid, grid_shape), tau_region)
        if region is None:
            logger.warning('Keyword %d dropped: empty region', k)
            continue
        anchors.append(KeywordAnchor(k, t[k], compute_anchor(sim[k], v), sim[k], region[0], region[1]))
    logger.info('Selected %d keyword(s): %s', len(anchors), [a.index for a in anchors])
    return anchors
