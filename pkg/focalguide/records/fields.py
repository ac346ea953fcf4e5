from __future__ import unicode_literals
from six import string_types, text_type, binary_type, integer_types
import datetime
import math
import iso8601
import pytz


class Field(object):
    '''
    Base class of record fields. A field converts incoming values with `to_python`, checks
    them with `validate` and renders them for JSON with `to_json`.
    '''
    creation_counter = 0
    class_default = 0

    def __init__(self, default=None, doc=None):
        # fields keep their declaration order inside a record
        self.creation_counter = Field.creation_counter
        Field.creation_counter += 1
        self.default = self.class_default if default is None else default
        self.doc = doc

    def to_python(self, value):
        '''
        Returns `value` converted to the field's Python type. Raises ValueError when it
        cannot be converted.
        '''
        return value   # pragma: no cover

    def validate(self, value):
        '''
        Checks a converted value. Raises ValueError when it is not acceptable.
        '''
        pass

    def _invalid(self, value, name=None):
        return ValueError('Invalid value for %s - %r' % (name or self.__class__.__name__, value))

    def _check_bounds(self, value, min_value, max_value):
        if min_value is not None and value < min_value:
            raise ValueError('%s %s is below the minimum %s' % (self.__class__.__name__, value, min_value))
        if max_value is not None and value > max_value:
            raise ValueError('%s %s is above the maximum %s' % (self.__class__.__name__, value, max_value))

    def to_json(self, value):
        return value


class StringField(Field):

    class_default = ''

    def to_python(self, value):
        if isinstance(value, binary_type):
            value = value.decode('UTF-8')
        if not isinstance(value, text_type):
            raise self._invalid(value)
        return value


class BoolField(Field):

    class_default = False

    def to_python(self, value):
        if isinstance(value, bool):
            return value
        if isinstance(value, integer_types) and value in (0, 1):
            return bool(value)
        if isinstance(value, string_types) and value.lower() in ('on', 'off', 'true', 'false'):
            return value.lower() in ('on', 'true')
        raise self._invalid(value)


class IntField(Field):
    '''
    Integer field with optional bounds.
    '''
    min_value = None
    max_value = None

    def __init__(self, default=None, min_value=None, max_value=None, doc=None):
        if min_value is not None:
            self.min_value = min_value
        if max_value is not None:
            self.max_value = max_value
        super(IntField, self).__init__(default, doc)

    def to_python(self, value):
        if isinstance(value, bool):
            raise self._invalid(value)
        try:
            return int(value)
        except (TypeError, ValueError):
            raise self._invalid(value)

    def validate(self, value):
        self._check_bounds(value, self.min_value, self.max_value)


class UInt64Field(IntField):

    min_value = 0
    max_value = 2**64 - 1


class FloatField(Field):
    '''
    64-bit real field with optional bounds. NaN and infinities are rejected.
    '''

    def __init__(self, default=None, min_value=None, max_value=None, doc=None):
        self.min_value = min_value
        self.max_value = max_value
        super(FloatField, self).__init__(default, doc)

    def to_python(self, value):
        if isinstance(value, bool):
            raise self._invalid(value)
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise self._invalid(value)
        if math.isnan(value) or math.isinf(value):
            raise ValueError('Non-finite value for %s - %r' % (self.__class__.__name__, value))
        return value

    def validate(self, value):
        self._check_bounds(value, self.min_value, self.max_value)


class EnumField(Field):
    '''
    Field holding a member of a Python `Enum`; serialized by member name.
    '''

    def __init__(self, enum_cls, default=None, doc=None):
        self.enum_cls = enum_cls
        super(EnumField, self).__init__(list(enum_cls)[0] if default is None else default, doc)

    def to_python(self, value):
        if isinstance(value, self.enum_cls):
            return value
        if isinstance(value, binary_type):
            value = value.decode('UTF-8')
        if isinstance(value, text_type) and value in self.enum_cls.__members__:
            return self.enum_cls[value]
        raise ValueError('Invalid value for %s: %r (expected one of %s)'
                         % (self.enum_cls.__name__, value, ', '.join(m.name for m in self.enum_cls)))

    def to_json(self, value):
        return value.name


class ArrayField(Field):

    class_default = []

    def __init__(self, inner_field, default=None, doc=None):
        assert isinstance(inner_field, Field), 'ArrayField needs a Field for its items'
        self.inner_field = inner_field
        super(ArrayField, self).__init__(default, doc)

    def to_python(self, value):
        if isinstance(value, (set, frozenset)):
            value = sorted(value)
        elif not isinstance(value, (list, tuple)):
            raise ValueError('ArrayField expects a list, got %s' % type(value).__name__)
        return [self.inner_field.to_python(v) for v in value]

    def validate(self, value):
        for item in value:
            self.inner_field.validate(item)

    def to_json(self, value):
        return [self.inner_field.to_json(v) for v in value]


class MappingField(Field):
    '''
    String-keyed mapping whose values are converted by `inner_field`.
    '''
    class_default = {}

    def __init__(self, inner_field, default=None, doc=None):
        assert isinstance(inner_field, Field), 'MappingField needs a Field for its values'
        self.inner_field = inner_field
        super(MappingField, self).__init__(default, doc)

    def to_python(self, value):
        if not isinstance(value, dict):
            raise ValueError('MappingField expects a dict, got %s' % type(value).__name__)
        return {text_type(k): self.inner_field.to_python(v) for k, v in value.items()}

    def validate(self, value):
        for item in value.values():
            self.inner_field.validate(item)

    def to_json(self, value):
        return {k: self.inner_field.to_json(v) for k, v in sorted(value.items())}


class NullableField(Field):

    class_default = None

    def __init__(self, inner_field, default=None, doc=None):
        self.inner_field = inner_field
        super(NullableField, self).__init__(default, doc)

    def to_python(self, value):
        return None if value is None else self.inner_field.to_python(value)

    def validate(self, value):
        if value is not None:
            self.inner_field.validate(value)

    def to_json(self, value):
        return None if value is None else self.inner_field.to_json(value)


class DateTimeField(Field):
    '''
    Timezone-aware datetime, normalized to UTC and stored as ISO 8601. Naive values are
    taken to be UTC.
    '''
    class_default = datetime.datetime.fromtimestamp(0, pytz.utc)

    def to_python(self, value):
        if isinstance(value, string_types):
            try:
                value = iso8601.parse_date(value, default_timezone=None)
            except iso8601.ParseError as e:
                raise ValueError(text_type(e))
        elif isinstance(value, datetime.date) and not isinstance(value, datetime.datetime):
            value = datetime.datetime(value.year, value.month, value.day)
        if not isinstance(value, datetime.datetime):
            raise self._invalid(value)
        if value.tzinfo is None or value.tzinfo.utcoffset(value) is None:
            value = pytz.utc.localize(value.replace(tzinfo=None))
        return value.astimezone(pytz.utc)

    def to_json(self, value):
        return value.isoformat()


class RecordField(Field):
    '''
    Nested record. Accepts a record instance or a dict of its fields.
    '''

    def __init__(self, record_cls, default=None, doc=None):
        self.record_cls = record_cls
        super(RecordField, self).__init__(default, doc)
        if default is None:
            self.default = None

    def to_python(self, value):
        if value is None:
            return self.record_cls()
        if isinstance(value, self.record_cls):
            return value
        if isinstance(value, dict):
            return self.record_cls.from_dict(value)
        raise self._invalid(value, self.record_cls.__name__)

    def to_json(self, value):
        return value.to_dict()
