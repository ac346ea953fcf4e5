'''
A deterministic stand-in for the VQA judge.

Questions are short predicates about named blocks, e.g. "A moves right", "block B is
static", "A touches block B" or "A grows", and are answered from video metadata: the
per-frame cell masks of each block recovered from a latent video.
'''
from __future__ import unicode_literals
from collections import namedtuple
import re

import numpy as np

from ..core.errors import ConfigError
from ..synth.scene import masks_from_latent, tracks_from_masks

VideoMetadata = namedtuple('VideoMetadata', 'names masks tracks')

# a centroid displacement below half a cell counts as no motion
MOTION_THRESHOLD = 0.5

_QUESTION = re.compile(r'^\s*(?:block\s+)?(?P<subject>\w+)\s+(?P<verb>moves|is|touches|grows)'
                       r'(?:\s+(?:block\s+)?(?P<argument>\w+))?\s*\??\s*$', re.IGNORECASE)


def video_metadata(latent, names, signatures, threshold=0.5):
    '''
    Metadata of a latent video, given each block's name and channel signature.
    '''
    if len(names) != len(signatures):
        raise ConfigError('%d block names for %d signatures' % (len(names), len(signatures)))
    masks = masks_from_latent(latent, signatures, threshold)
    return VideoMetadata(list(names), dict(zip(names, masks)), dict(zip(names, tracks_from_masks(masks))))


def scene_metadata(scene, latent=None):
    '''
    Metadata of a video generated for `scene` (its clean latent by default).
    '''
    names = [b.name for b in scene.spec.blocks]
    slots = scene.spec.signature_slots()
    return video_metadata(scene.latent if latent is None else latent, names, [scene.signatures[s] for s in slots])


def _visible(track):
    return [p for p in track if p.visible]


class Predicate(object):
    '''
    Base class for question predicates.
    '''

    takes_argument = False

    def evaluate(self, metadata, subject, argument=None):
        '''
        Subclasses should implement this method. It returns whether the predicate holds for
        block `subject` in the video described by `metadata`.
        '''
        raise NotImplementedError   # pragma: no cover


class MovesPredicate(Predicate):
    '''
    Net displacement of the centroid between the first and the last visible frame.
    '''

    AXES = {'left': (1, -1), 'right': (1, 1), 'up': (0, -1), 'down': (0, 1)}

    def __init__(self, direction):
        self._axis, self._sign = self.AXES[direction]

    def evaluate(self, metadata, subject, argument=None):
        points = _visible(metadata.tracks[subject])
        if len(points) < 2:
            return False
        first, last = points[0], points[-1]
        delta = (last.cy - first.cy, last.cx - first.cx)[self._axis]
        return self._sign * delta >= MOTION_THRESHOLD


class StaticPredicate(Predicate):

    def evaluate(self, metadata, subject, argument=None):
        track = metadata.tracks[subject]
        points = _visible(track)
        if len(points) != len(track):
            return False
        ref = points[0]
        return all(abs(p.cy - ref.cy) < MOTION_THRESHOLD and abs(p.cx - ref.cx) < MOTION_THRESHOLD
                   and p.area == ref.area for p in points)


class VisiblePredicate(Predicate):

    def evaluate(self, metadata, subject, argument=None):
        return all(p.visible for p in metadata.tracks[subject])


class TouchesPredicate(Predicate):
    '''
    True if, in some frame, a cell of the subject is the same as or 8-adjacent to a cell of
    the other block.
    '''

    takes_argument = True

    def evaluate(self, metadata, subject, argument=None):
        if argument == subject:
            raise ConfigError('A block cannot touch itself')
        return bool(np.any(_dilate(metadata.masks[subject]) & _lookup(metadata, argument)))


class GrowsPredicate(Predicate):

    def evaluate(self, metadata, subject, argument=None):
        points = _visible(metadata.tracks[subject])
        return len(points) >= 2 and points[-1].area > points[0].area


def _dilate(masks):
    # 8-neighborhood dilation per frame, no wraparound
    frames, height, width = masks.shape
    padded = np.zeros((frames, height + 2, width + 2), dtype=bool)
    padded[:, 1:-1, 1:-1] = masks
    out = np.zeros_like(masks)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out |= padded[:, dy:dy + height, dx:dx + width]
    return out


def _lookup(metadata, name):
    if name not in metadata.masks:
        raise ConfigError('Unknown block "%s" (known: %s)' % (name, ', '.join(metadata.names)))
    return metadata.masks[name]


_predicates = {}

def register_predicate(name, predicate):
    _predicates[name] = predicate

register_predicate('moves left',  MovesPredicate('left'))
register_predicate('moves right', MovesPredicate('right'))
register_predicate('moves up',    MovesPredicate('up'))
register_predicate('moves down',  MovesPredicate('down'))
register_predicate('is static',   StaticPredicate())
register_predicate('is visible',  VisiblePredicate())
register_predicate('touches',     TouchesPredicate())
register_predicate('grows',       GrowsPredicate())


def parse_question(text):
    '''
    Splits a question into (subject, predicate name, argument).
    '''
    match = _QUESTION.match(text)
    if not match:
        raise ConfigError('unknown predicate in question "%s"' % text)
    subject, verb, argument = match.group('subject'), match.group('verb').lower(), match.group('argument')
    if verb in ('moves', 'is'):
        name, argument = '%s %s' % (verb, (argument or '').lower()), None
    else:
        name = verb
    predicate = _predicates.get(name)
    if predicate is None:
        raise ConfigError('unknown predicate "%s" in question "%s"' % (name, text))
    if predicate.takes_argument != (argument is not None):
        raise ConfigError('Malformed question "%s"' % text)
    return subject, name, argument


def mock_vqa(question, metadata):
    '''
    Answers a yes/no question about a video from its metadata.
    '''
    subject, name, argument = parse_question(question)
    _lookup(metadata, subject)
    return bool(_predicates[name].evaluate(metadata, subject, argument))


def answer_case(case, metadata):
    '''
    Per-question correctness flags of a `PromptCase`.
    '''
    return [mock_vqa(q.text, metadata) == q.expected for q in case.questions]
