'''
Synthetic scenes with known semantics.

Every block, the background and every filler word get their own unit-norm channel
signature, and the signatures are mutually orthogonal. A block's text token is its
signature and each image token is the frame-0 latent cell it covers (plus noise), so the
keyword/region correspondence is known exactly by construction.
'''
from __future__ import unicode_literals
from collections import namedtuple

import numpy as np

from ..core.errors import ConfigError
from ..core.rng import Rng
from ..core.tensor import LatentVideo, TokenSequence, Modality, latent_array, cosine_matrix
from ..records.fields import StringField, IntField, FloatField, ArrayField, RecordField, NullableField
from ..records.models import Record

import logging
logger = logging.getLogger('focalguide')


Scene = namedtuple('Scene', 'spec latent z_ref text image regions signatures tracks')
Scene.__doc__ = '''
A rendered scene.

- `latent`: the clean latent video z0.
- `z_ref`: frame 0 of z0 with the other frames zero.
- `text`: one token per block (in block order) followed by the filler tokens.
- `image`: one token per frame-0 cell, with `grid` set.
- `regions`: per block, the boolean mask of its visible frame-0 cells.
- `signatures`: [blocks + 1 + fillers, C]: blocks, background, fillers.
- `tracks`: per block, its `TrackPoint` per frame.
'''

TrackPoint = namedtuple('TrackPoint', 'frame visible cy cx area')


class Block(Record):

    name = StringField(default='A')
    y = IntField(default=0, min_value=0)
    x = IntField(default=0, min_value=0)
    height = IntField(default=2, min_value=1)
    width = IntField(default=2, min_value=1)
    dy = IntField(default=0)
    dx = IntField(default=0)
    growth = IntField(default=0, min_value=0, doc='cells added to each extent per frame')
    signature = NullableField(IntField(min_value=0), doc='signature slot; defaults to the block index')

    def box(self, frame):
        '''
        (y, x, height, width) at `frame`.
        '''
        g = self.growth * frame
        return self.y + self.dy * frame, self.x + self.dx * frame, self.height + g, self.width + g

    def mask(self, frame, height, width):
        y, x, h, w = self.box(frame)
        m = np.zeros((height, width), dtype=bool)
        m[max(y, 0):max(y + h, 0), max(x, 0):max(x + w, 0)] = True
        return m


class SceneSpec(Record):

    height = IntField(default=8, min_value=1)
    width = IntField(default=8, min_value=1)
    frames = IntField(default=4, min_value=1)
    channels = IntField(default=8, min_value=1)
    fillers = IntField(default=2, min_value=0, doc='text tokens bound to no block')
    noise = FloatField(default=0.05, min_value=0.0)
    background = FloatField(default=1.0, min_value=0.0, doc='amplitude of the background signature')
    blocks = ArrayField(RecordField(Block))

    @classmethod
    def default(cls):
        return cls(blocks=[Block(name='A', y=1, x=1, dx=1), Block(name='B', y=5, x=4)])

    def signature_slots(self):
        return [b.signature if b.signature is not None else i for i, b in enumerate(self.blocks)]

    def num_signatures(self):
        slots = self.signature_slots()
        return (max(slots) + 1 if slots else 0) + 1 + self.fillers

    def validate(self):
        if not self.blocks and not self.fillers:
            raise ConfigError('A scene needs at least one block or filler token')
        if self.num_signatures() > self.channels:
            raise ConfigError('%d signatures do not fit %d channels' % (self.num_signatures(), self.channels))
        for b in self.blocks:
            for f in range(self.frames):
                y, x, h, w = b.box(f)
                if y < 0 or x < 0 or y + h > self.height or x + w > self.width:
                    raise ConfigError('Block %s leaves the %dx%d grid at frame %d' % (b.name, self.height, self.width, f))
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ConfigError('Block names must be unique: %s' % names)
        slots = self.signature_slots()
        for i in range(len(self.blocks)):
            for j in range(i + 1, len(self.blocks)):
                if slots[i] != slots[j]:
                    continue
                for f in range(self.frames):
                    if np.any(self.blocks[i].mask(f, self.height, self.width) & self.blocks[j].mask(f, self.height, self.width)):
                        raise ConfigError('overlapping blocks with identical signatures (%s, %s)'
                                          % (self.blocks[i].name, self.blocks[j].name))
        return self

    def block_index(self, name):
        for i, b in enumerate(self.blocks):
            if b.name == name:
                return i
        raise ConfigError('Unknown block "%s"' % name)


def orthonormal_signatures(count, channels, rng):
    '''
    `count` mutually orthogonal unit vectors in R^channels, as rows.
    '''
    if count > channels:
        raise ConfigError('Cannot draw %d orthonormal signatures in %d channels' % (count, channels))
    q, r = np.linalg.qr(rng.normal((channels, count)))
    # fix the sign ambiguity of QR so the result depends only on the draw
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return q.T.copy()


def render_scene(spec, seed):
    '''
    Renders `spec` deterministically from `seed`. Later blocks are painted over earlier ones.
    '''
    spec.validate()
    rng = Rng(seed)
    slots = spec.signature_slots()
    num_block_slots = max(slots) + 1 if slots else 0
    signatures = orthonormal_signatures(spec.num_signatures(), spec.channels, rng.spawn('signatures'))
    block_sigs = signatures[:num_block_slots]
    background = signatures[num_block_slots]
    fillers = signatures[num_block_slots + 1:]

    z0 = np.empty((spec.frames, spec.height, spec.width, spec.channels))
    z0[...] = spec.background * background
    for f in range(spec.frames):
        for b, slot in zip(spec.blocks, slots):
            z0[f][b.mask(f, spec.height, spec.width)] = block_sigs[slot]

    z_ref = np.zeros_like(z0)
    z_ref[0] = z0[0]
    cells = z0[0].reshape(-1, spec.channels)
    image = cells + rng.spawn('image-noise').normal(cells.shape, 0.0, spec.noise) if spec.noise else cells.copy()
    text = np.vstack([block_sigs[slot] for slot in slots] + [fillers]) if slots else fillers.copy()

    regions = []
    for i, b in enumerate(spec.blocks):
        visible = b.mask(0, spec.height, spec.width)
        for later in spec.blocks[i + 1:]:
            visible &= ~later.mask(0, spec.height, spec.width)
        regions.append(visible)

    latent = LatentVideo(z0)
    sig_rows = np.vstack([block_sigs, background[None, :], fillers])
    return Scene(spec=spec, latent=latent, z_ref=LatentVideo(z_ref),
                 text=TokenSequence(Modality.text, text),
                 image=TokenSequence(Modality.image, image, grid=(spec.height, spec.width)),
                 regions=regions, signatures=sig_rows,
                 tracks=trajectories_from_latent(latent, [block_sigs[s] for s in slots]))


def masks_from_latent(latent, signatures, threshold=0.5):
    '''
    Per signature, the [F, H, W] mask of cells whose cosine with it exceeds `threshold`.
    '''
    z = latent_array(latent)
    frames, height, width, channels = z.shape
    sigs = np.atleast_2d(np.asarray(signatures, dtype=float)) if len(signatures) else np.zeros((0, channels))
    cos = cosine_matrix(z.reshape(-1, channels), sigs, zero_norm='zero')
    return (cos > threshold).T.reshape(len(sigs), frames, height, width)


def tracks_from_masks(masks):
    '''
    Summarizes each [F, H, W] mask by its per-frame centroid and cell count.
    '''
    tracks = []
    for mask in masks:
        frames, height, width = mask.shape
        ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing='ij')
        track = []
        for f in range(frames):
            area = int(mask[f].sum())
            if area:
                track.append(TrackPoint(f, True, float(ys[mask[f]].mean()), float(xs[mask[f]].mean()), area))
            else:
                track.append(TrackPoint(f, False, None, None, 0))
        tracks.append(track)
    return tracks


def trajectories_from_latent(latent, signatures, threshold=0.5):
    '''
    Recovers each signature's track from a latent video.
    '''
    return tracks_from_masks(masks_from_latent(latent, signatures, threshold))


def ground_truth_region_iou(predicted, truth):
    '''
    |intersection| / |union| of two regions, given as boolean masks or sets of cells.
    Two empty regions have IoU 1.
    '''
    a, b = _cells(predicted), _cells(truth)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / float(len(union))


def _cells(region):
    if isinstance(region, (set, frozenset)):
        return set(region)
    mask = np.asarray(region, dtype=bool)
    return set((int(u), int(v)) for u, v in zip(*np.nonzero(mask)))


def random_scene_spec(rng, num_blocks=2, **kwargs):
    '''
    A spec with `num_blocks` non-overlapping 2x2 blocks moving one cell per frame (or static),
    drawn from `rng`.
    '''
    spec = SceneSpec(**kwargs)
    names = 'ABCDEFGH'
    blocks = []
    taken = np.zeros((spec.height, spec.width), dtype=bool)
    attempts = 0
    while len(blocks) < num_blocks:
        attempts += 1
        if attempts > 1000:
            raise ConfigError('Cannot place %d blocks on a %dx%d grid' % (num_blocks, spec.height, spec.width))
        dy, dx = [int(v) for v in rng.integers(-1, 2, (2,))]
        size = 2
        span_y = size + abs(dy) * (spec.frames - 1)
        span_x = size + abs(dx) * (spec.frames - 1)
        if span_y > spec.height or span_x > spec.width:
            continue
        y0 = int(rng.integers(0, spec.height - span_y + 1)) + (abs(dy) * (spec.frames - 1) if dy < 0 else 0)
        x0 = int(rng.integers(0, spec.width - span_x + 1)) + (abs(dx) * (spec.frames - 1) if dx < 0 else 0)
        block = Block(name=names[len(blocks)], y=y0, x=x0, height=size, width=size, dy=dy, dx=dx)
        mask = block.mask(0, spec.height, spec.width)
        if np.any(mask & taken):
            continue
        taken |= mask
        blocks.append(block)
    spec.blocks = blocks
    return spec.validate()


def default_scene_set(seed, count=4, **kwargs):
    '''
    The training scenes: `count` random two-block specs derived from `seed`.
    '''
    rng = Rng(seed).spawn('scene-set')
    return [random_scene_spec(rng.spawn(i), **kwargs) for i in range(count)]
