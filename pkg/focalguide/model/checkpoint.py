from __future__ import unicode_literals
import io
import os
from collections import OrderedDict

from .. import __version__
from ..core.errors import StorageError, ConfigError
from ..core.storage import serialize_tensor, deserialize_tensor
from ..records.fields import StringField, IntField, ArrayField, MappingField, RecordField
from ..records.models import Record
from .dit import DiT, DitConfig, Parameters, parameter_shapes

import logging
logger = logging.getLogger('focalguide')

PARAMS_DIR = 'params'
MANIFEST = 'checkpoint.json'


class CheckpointManifest(Record):

    version = StringField(default=__version__)
    config = RecordField(DitConfig)
    step = IntField(default=0, min_value=0)
    names = ArrayField(StringField())
    shapes = MappingField(ArrayField(IntField(min_value=1)))


def save_checkpoint(model, path, step=0):
    '''
    Writes one tensor file per parameter under `<path>/params/` and a `checkpoint.json`
    listing names, shapes and the model configuration. Returns the manifest path.
    '''
    params_dir = os.path.join(path, PARAMS_DIR)
    try:
        if not os.path.isdir(params_dir):
            os.makedirs(params_dir)
    except OSError as e:
        raise StorageError('Cannot create %s: %s' % (params_dir, e))
    for name, arr in model.params.items():
        serialize_tensor(arr, os.path.join(params_dir, name + '.fgt'))
    manifest = CheckpointManifest(config=model.config, step=step, names=model.params.names(),
                                  shapes=dict((n, list(s)) for n, s in model.params.shapes().items()))
    manifest_path = os.path.join(path, MANIFEST)
    try:
        with io.open(manifest_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(manifest.to_json() + '\n')
    except (IOError, OSError) as e:
        raise StorageError('Cannot write %s: %s' % (manifest_path, e))
    logger.info('Saved checkpoint (%d tensors) to %s', len(model.params), path)
    return manifest_path


def load_checkpoint(path):
    '''
    Reads a checkpoint written by `save_checkpoint`. Returns (model, manifest).
    '''
    manifest = CheckpointManifest.load(os.path.join(path, MANIFEST))
    expected = parameter_shapes(manifest.config)
    if manifest.names != list(expected):
        raise ConfigError('Checkpoint %s does not match its configuration' % path)
    arrays = OrderedDict()
    for name in manifest.names:
        arr = deserialize_tensor(os.path.join(path, PARAMS_DIR, name + '.fgt'))
        if arr.shape != tuple(expected[name]) or list(arr.shape) != manifest.shapes.get(name):
            raise StorageError('Tensor %s has shape %s, expected %s' % (name, arr.shape, expected[name]))
        arrays[name] = arr
    logger.info('Loaded checkpoint %s (step %d)', path, manifest.step)
    return DiT(manifest.config, Parameters(arrays)), manifest
