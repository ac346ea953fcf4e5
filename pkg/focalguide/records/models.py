from __future__ import unicode_literals
import copy
import json
import sys
from collections import OrderedDict

from six import with_metaclass, reraise, iteritems

from ..core.errors import ConfigError, StorageError
from .fields import Field


class RecordBase(type):
    '''
    Metaclass of records. Gathers the `Field` attributes of a class and its bases into
    `_fields`, in declaration order.
    '''

    def __new__(cls, name, bases, attrs):
        fields = {}
        for base in bases:
            if isinstance(base, RecordBase):
                fields.update(base._fields)
        fields.update((n, f) for n, f in iteritems(attrs) if isinstance(f, Field))
        ordered = sorted(iteritems(fields), key=lambda item: item[1].creation_counter)
        attrs = dict(attrs, _fields=OrderedDict(ordered))
        return super(RecordBase, cls).__new__(cls, str(name), bases, attrs)


class Record(with_metaclass(RecordBase)):
    '''
    A base class for validated records. Each record class declares its fields as class
    attributes, for example:

        class FlowConfig(Record):
            steps = IntField(default=50, min_value=1)
            seed = UInt64Field(default=0)
            guidance = BoolField(default=True)

    Values are converted and validated on assignment, so a record instance is always valid
    field by field. Cross-field invariants are checked by `validate()`.
    '''

    def __init__(self, **kwargs):
        '''
        Fields not given in `kwargs` start from their defaults. An unknown keyword raises
        `AttributeError`, a bad value `ConfigError`.
        '''
        super(Record, self).__init__()
        for name, field in iteritems(self._fields):
            setattr(self, name, copy.deepcopy(field.default))
        for name, value in iteritems(kwargs):
            if name not in self._fields:
                raise AttributeError('%s has no field "%s"' % (self.__class__.__name__, name))
            setattr(self, name, value)

    def __setattr__(self, name, value):
        field = self._fields.get(name)
        if field is not None:
            try:
                value = field.to_python(value)
                field.validate(value)
            except ValueError:
                _, error, tb = sys.exc_info()
                reraise(ConfigError, ConfigError("%s (field '%s')" % (error, name)), tb)
        super(Record, self).__setattr__(name, value)

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return '%s(%s)' % (self.__class__.__name__,
                           ', '.join('%s=%r' % (n, getattr(self, n)) for n in self._fields))

    def validate(self):
        '''
        Checks invariants that span several fields. Subclasses override this and raise
        `ConfigError`. Returns the record so calls can be chained.
        '''
        return self

    def replace(self, **kwargs):
        '''
        Returns a copy of the record with the given fields replaced.
        '''
        data = self.to_dict()
        data.update(kwargs)
        return self.__class__.from_dict(data)

    @classmethod
    def from_dict(cls, data):
        '''
        Create a record from a dict as produced by `to_dict`. Unknown keys are rejected.
        '''
        unknown = set(data) - set(cls._fields)
        if unknown:
            raise ConfigError('%s does not have fields called %s' % (cls.__name__, ', '.join(sorted(unknown))))
        try:
            obj = cls(**data)
        except AttributeError as e:
            raise ConfigError(str(e))
        return obj.validate()

    def to_dict(self):
        '''
        The field values as a JSON-ready `OrderedDict`.
        '''
        return OrderedDict((name, field.to_json(getattr(self, name))) for name, field in iteritems(self._fields))

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except ValueError as e:
            raise ConfigError('Invalid JSON for %s: %s' % (cls.__name__, e))
        if not isinstance(data, dict):
            raise ConfigError('%s JSON must be an object' % cls.__name__)
        return cls.from_dict(data)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def load(cls, path):
        '''
        Reads a record from a JSON file.
        '''
        try:
            with open(path, 'r') as f:
                text = f.read()
        except (IOError, OSError) as e:
            raise StorageError('Cannot read %s: %s' % (path, e))
        return cls.from_json(text)
