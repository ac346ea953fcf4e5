from __future__ import unicode_literals

import csv
import hashlib
import io
import json
import os
import struct

import numpy as np
from six import string_types

from ..records.utils import format_real
from .errors import StorageError, TensorFormatError
from .tensor import as_tensor

import logging
logger = logging.getLogger('focalguide')


MAGIC = b'FGT1'
HEADER = struct.Struct('<4sI')
EXTENT = struct.Struct('<I')
MAP_CSV_HEADER = ('frame', 'y', 'x', 'value')


def encode_tensor(t):
    '''
    Encodes a tensor in the FGT1 format: magic "FGT1", u32 rank, rank u32 extents,
    then the payload as little-endian float64 in row-major order.
    '''
    t = as_tensor(t, 'tensor')
    parts = [HEADER.pack(MAGIC, t.ndim)]
    parts.extend(EXTENT.pack(extent) for extent in t.shape)
    parts.append(np.ascontiguousarray(t, dtype='<f8').tobytes())
    return b''.join(parts)


def decode_tensor(blob):
    '''
    Inverse of `encode_tensor`. Raises `TensorFormatError` on a bad magic, an empty or
    inconsistent shape, a truncated or oversized payload, or non-finite values.
    '''
    if len(blob) < HEADER.size:
        raise TensorFormatError('Truncated tensor header (%d bytes)' % len(blob))
    magic, rank = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise TensorFormatError('Bad magic %r' % magic)
    if rank == 0:
        raise TensorFormatError('Empty tensor shape')
    offset = HEADER.size
    if len(blob) < offset + rank * EXTENT.size:
        raise TensorFormatError('Truncated shape: rank %d' % rank)
    shape = tuple(EXTENT.unpack_from(blob, offset + i * EXTENT.size)[0] for i in range(rank))
    if any(extent == 0 for extent in shape):
        raise TensorFormatError('Zero extent in shape %s' % (shape,))
    offset += rank * EXTENT.size
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(blob) - offset != expected:
        raise TensorFormatError('Payload of %d bytes does not match shape %s (%d bytes)'
                                % (len(blob) - offset, shape, expected))
    data = np.frombuffer(blob, dtype='<f8', offset=offset).astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(data)):
        raise TensorFormatError('Non-finite payload')
    return data


def serialize_tensor(t, path):
    blob = encode_tensor(t)
    try:
        with open(path, 'wb') as f:
            f.write(blob)
    except (IOError, OSError) as e:
        raise StorageError('Cannot write %s: %s' % (path, e))
    return path


def deserialize_tensor(path):
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except (IOError, OSError) as e:
        raise StorageError('Cannot read %s: %s' % (path, e))
    return decode_tensor(blob)


def write_csv(path, header, rows):
    '''
    Writes rows as CSV with "\\n" line endings; floats use 17 significant digits so they
    read back exactly.
    '''
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_real(v) if isinstance(v, (float, np.floating)) else v for v in row])
    try:
        with io.open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(buf.getvalue())
    except (IOError, OSError) as e:
        raise StorageError('Cannot write %s: %s' % (path, e))
    return path


def read_csv(path):
    '''
    Returns (header, rows) with all cells as strings.
    '''
    try:
        with io.open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.reader(f)
            rows = list(reader)
    except (IOError, OSError) as e:
        raise StorageError('Cannot read %s: %s' % (path, e))
    if not rows:
        raise StorageError('Empty CSV file %s' % path)
    return rows[0], rows[1:]


def write_map_csv(values, path):
    '''
    Exports a [F', H', W'] map with header `frame,y,x,value`.
    '''
    values = as_tensor(values, 'map', ndim=3)
    rows = ((f, y, x, float(values[f, y, x])) for f, y, x in np.ndindex(*values.shape))
    return write_csv(path, MAP_CSV_HEADER, rows)


def read_map_csv(path):
    header, rows = read_csv(path)
    if tuple(header) != MAP_CSV_HEADER:
        raise StorageError('Unexpected map header %s in %s' % (header, path))
    cells = [(int(f), int(y), int(x), float(v)) for f, y, x, v in rows]
    shape = tuple(max(c[i] for c in cells) + 1 for i in range(3))
    values = np.zeros(shape)
    for f, y, x, v in cells:
        values[f, y, x] = v
    return values


def file_digest(path):
    h = hashlib.sha256()
    try:
        with open(path, 'rb') as f:
            for chunk in iter(lambda: f.read(1 << 16), b''):
                h.update(chunk)
    except (IOError, OSError) as e:
        raise StorageError('Cannot read %s: %s' % (path, e))
    return h.hexdigest()


class RunDirectory(object):
    '''
    A RunDirectory owns one output directory of a single run: it writes the run's
    artifacts and exactly one `manifest.json` describing them.
    '''

    MANIFEST = 'manifest.json'

    def __init__(self, path, command=None, readonly=False, autocreate=True, overwrite=False):
        '''
        Initializes a run directory. Unless it's readonly, the directory is created if it
        does not already exist.

        - `path`: the directory.
        - `command`: name of the command that owns the directory.
        - `readonly`: only read artifacts (e.g. when replaying a manifest).
        - `autocreate`: create the directory if it does not exist.
        - `overwrite`: allow taking over a directory whose manifest names another command.
        '''
        self.path = path
        self.command = command
        self.readonly = readonly
        self.artifacts = {}
        exists = os.path.isdir(path)
        if readonly:
            if not exists:
                raise StorageError('Run directory %s does not exist' % path)
        elif not exists:
            if not autocreate:
                raise StorageError('Run directory %s does not exist' % path)
            try:
                os.makedirs(path)
            except OSError as e:
                raise StorageError('Cannot create %s: %s' % (path, e))
        elif command and not overwrite:
            owner = self._manifest_command()
            if owner is not None and owner != command:
                raise StorageError('%s already holds the output of "%s"' % (path, owner))

    def path_for(self, name):
        return os.path.join(self.path, name)

    def _check_writable(self):
        if self.readonly:
            raise StorageError('Run directory %s is read-only' % self.path)

    def register(self, name):
        full = self.path_for(name)
        self.artifacts[name] = file_digest(full)
        logger.info('Wrote %s', full)
        return full

    def _makedirs_for(self, name):
        parent = os.path.dirname(self.path_for(name))
        if parent and not os.path.isdir(parent):
            try:
                os.makedirs(parent)
            except OSError as e:
                raise StorageError('Cannot create %s: %s' % (parent, e))

    def write_tensor(self, name, t):
        self._check_writable()
        self._makedirs_for(name)
        serialize_tensor(t, self.path_for(name))
        return self.register(name)

    def read_tensor(self, name):
        return deserialize_tensor(self.path_for(name))

    def write_csv(self, name, header, rows):
        self._check_writable()
        self._makedirs_for(name)
        write_csv(self.path_for(name), header, rows)
        return self.register(name)

    def write_map_csv(self, name, values):
        self._check_writable()
        self._makedirs_for(name)
        write_map_csv(values, self.path_for(name))
        return self.register(name)

    def write_json(self, name, data):
        self._check_writable()
        self._makedirs_for(name)
        if not isinstance(data, string_types):
            data = json.dumps(data, indent=2)
        try:
            with io.open(self.path_for(name), 'w', encoding='utf-8', newline='\n') as f:
                f.write(data + '\n')
        except (IOError, OSError) as e:
            raise StorageError('Cannot write %s: %s' % (self.path_for(name), e))
        return self.register(name)

    def write_manifest(self, manifest):
        '''
        Writes the run manifest, recording the digests of all artifacts written so far.
        Replaces any manifest already present so the directory holds exactly one.
        '''
        self._check_writable()
        manifest.artifacts = dict(self.artifacts)
        path = self.path_for(self.MANIFEST)
        try:
            with io.open(path, 'w', encoding='utf-8', newline='\n') as f:
                f.write(manifest.to_json() + '\n')
        except (IOError, OSError) as e:
            raise StorageError('Cannot write %s: %s' % (path, e))
        logger.info('Wrote manifest %s', path)
        return path

    def read_manifest(self, manifest_cls):
        return manifest_cls.load(self.path_for(self.MANIFEST))

    def _manifest_command(self):
        path = self.path_for(self.MANIFEST)
        if not os.path.exists(path):
            return None
        try:
            with io.open(path, 'r', encoding='utf-8') as f:
                return json.load(f).get('command')
        except (IOError, OSError, ValueError):
            logger.exception('Cannot read existing manifest %s', path)
            return None
