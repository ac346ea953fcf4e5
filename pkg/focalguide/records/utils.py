from __future__ import unicode_literals
import re

from six import string_types


INDEX_RANGE_REGEX = re.compile(r'^\s*(\d+)\s*(?:-\s*(\d+)\s*)?$')


def parse_index_list(text):
    """
    Parse a list of non-negative indices with inclusive ranges. For example:
        "11-26"      ==> [11, 12, ..., 26]
        "2,3,5-7"    ==> [2, 3, 5, 6, 7]
        ""           ==> []
    The result is sorted and free of duplicates.
    """
    if not isinstance(text, string_types):
        raise ValueError('Invalid index list: %r' % (text,))
    indices = set()
    for part in text.split(','):
        if not part.strip():
            continue
        match = INDEX_RANGE_REGEX.match(part)
        if match is None:
            raise ValueError('Invalid index list: "%s"' % text)
        first = int(match.group(1))
        last = int(match.group(2)) if match.group(2) is not None else first
        if last < first:
            raise ValueError('Descending range "%s" in index list "%s"' % (part.strip(), text))
        indices.update(range(first, last + 1))
    return sorted(indices)


def format_index_list(indices):
    """
    Inverse of `parse_index_list`: collapses runs into ranges.
        [2, 3, 4, 5, 9] ==> "2-5,9"
    """
    indices = sorted(set(indices))
    parts = []
    i = 0
    while i < len(indices):
        j = i
        while j + 1 < len(indices) and indices[j + 1] == indices[j] + 1:
            j += 1
        parts.append(str(indices[i]) if i == j else '%d-%d' % (indices[i], indices[j]))
        i = j + 1
    return ','.join(parts)


def format_real(value):
    """
    Formats a real with 17 significant digits, enough to read back the exact double.
    """
    return '%.17g' % value
