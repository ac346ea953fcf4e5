from __future__ import unicode_literals
from collections import namedtuple

from ..core.errors import ConfigError


BBox = namedtuple('BBox', 'x y w h')
Crop = namedtuple('Crop', 'x y w h ratio')

WIDE = (16, 9)
SQUARE = (1, 1)


def check_bbox(width, height, bbox):
    if bbox.w <= 0 or bbox.h <= 0:
        raise ConfigError('Empty bounding box %s' % (bbox,))
    if bbox.x < 0 or bbox.y < 0 or bbox.x + bbox.w > width or bbox.y + bbox.h > height:
        raise ConfigError('Bounding box %s outside the %dx%d image' % (bbox, width, height))


def maximal_rectangle(width, height, ratio):
    '''
    The largest (w, h) with w:h = ratio that fits the image, floored to whole pixels.
    '''
    rw, rh = ratio
    if width * rh <= height * rw:
        return width, width * rh // rw
    return height * rw // rh, height


def _place(start, extent, size, limit):
    # center on the subject, then clamp to the image
    pos = int((2 * start + extent - size) // 2)
    return min(max(pos, 0), limit - size)


def crop_for_ratio(width, height, bbox, ratio):
    cw, ch = maximal_rectangle(width, height, ratio)
    if bbox.w > cw or bbox.h > ch:
        raise ConfigError('subject exceeds crop: %s does not fit %dx%d (%d:%d)' % (bbox, cw, ch, ratio[0], ratio[1]))
    return Crop(_place(bbox.x, bbox.w, cw, width), _place(bbox.y, bbox.h, ch, height), cw, ch, ratio)


def crop_protocol(width, height, bbox):
    '''
    The crops a reference image goes through. Portrait images (height > width) get the 16:9
    crop first and the 1:1 crop second; landscape and square images the reverse. Each crop
    is the maximal rectangle of its ratio, centered on the subject's bounding box and
    clamped to the image, so the subject stays fully visible.
    '''
    if width <= 0 or height <= 0:
        raise ConfigError('Invalid image size %dx%d' % (width, height))
    check_bbox(width, height, bbox)
    order = (WIDE, SQUARE) if height > width else (SQUARE, WIDE)
    return [crop_for_ratio(width, height, bbox, ratio) for ratio in order]


def contains(crop, bbox):
    return (crop.x <= bbox.x and crop.y <= bbox.y
            and bbox.x + bbox.w <= crop.x + crop.w and bbox.y + bbox.h <= crop.y + crop.h)
