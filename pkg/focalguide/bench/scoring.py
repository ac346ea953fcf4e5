'''
Instruction-following scores.

A generated video passes a prompt case only if every question of the case is answered
correctly. A dimension score is the mean over its cases, and the total score is the
unweighted mean of the two reference-consistency metrics and the three instruction
dimensions.
'''
from __future__ import unicode_literals
from collections import OrderedDict
from enum import Enum

import numpy as np

from ..core.errors import ConfigError
from ..records.fields import StringField, FloatField, ArrayField, BoolField, EnumField, RecordField, NullableField
from ..records.models import Record


class Dimension(Enum):
    dynamic_attributes = 1
    human_motion = 2
    human_interaction = 3


METRICS = ('i2v_subject', 'i2v_background', 'dynamic_attributes', 'human_motion', 'human_interaction')


class Question(Record):

    text = StringField(doc='predicate, e.g. "A moves right"')
    expected = BoolField(default=True)


class PromptCase(Record):
    '''
    One image-prompt pair of the benchmark.

    - `scene`: the synthetic scene the reference image comes from (a `SceneSpec` dict), or
      None for cases whose video metadata comes from elsewhere.
    - `video`: name of the video whose metadata answers the questions.
    '''

    name = StringField()
    dimension = EnumField(Dimension)
    prompt = StringField()
    video = StringField()
    questions = ArrayField(RecordField(Question))
    scene = NullableField(StringField(), doc='path of a SceneSpec JSON file')

    def validate(self):
        if not self.questions:
            raise ConfigError('Prompt case "%s" has no questions' % self.name)
        return self


class ScoreReport(Record):

    i2v_subject = FloatField(min_value=0.0, max_value=1.0)
    i2v_background = FloatField(min_value=0.0, max_value=1.0)
    dynamic_attributes = FloatField(min_value=0.0, max_value=1.0)
    human_motion = FloatField(min_value=0.0, max_value=1.0)
    human_interaction = FloatField(min_value=0.0, max_value=1.0)
    total = FloatField(min_value=0.0, max_value=1.0)

    @classmethod
    def build(cls, **metrics):
        '''
        A report whose total is computed from the five metrics.
        '''
        return cls(total=total_score(metrics), **dict((m, metrics[m]) for m in METRICS))

    def metrics(self):
        return OrderedDict((m, getattr(self, m)) for m in METRICS)

    def validate(self):
        if abs(self.total - total_score(self.metrics())) > 1e-12:
            raise ConfigError('total %r is not the mean of the five metrics' % self.total)
        return self


def vqa_case_score(answers):
    '''
    1 if every answer is correct, else 0. `answers` are per-question correctness flags.
    '''
    answers = list(answers)
    if not answers:
        raise ConfigError('A case needs at least one answer')
    return 1 if all(bool(a) for a in answers) else 0


def dimension_score(case_scores):
    scores = list(case_scores)
    if not scores:
        raise ConfigError('A dimension needs at least one case')
    if any(s not in (0, 1) for s in scores):
        raise ConfigError('Case scores must be 0 or 1')
    return float(sum(scores)) / len(scores)


def total_score(metrics):
    '''
    Unweighted mean of the five metrics, given as a mapping or a `ScoreReport`.
    '''
    if isinstance(metrics, ScoreReport):
        metrics = metrics.metrics()
    missing = [m for m in METRICS if metrics.get(m) is None]
    if missing:
        raise ConfigError('missing metric(s): %s' % ', '.join(missing))
    return float(sum(float(metrics[m]) for m in METRICS)) / len(METRICS)


def relative_gain(baseline, value):
    '''
    Change from `baseline` to `value` in percent of the baseline.
    '''
    if baseline == 0:
        raise ConfigError('Relative gain over a zero baseline')
    return 100.0 * (value - baseline) / baseline


def average_reports(reports):
    '''
    Metric-wise mean of several reports, e.g. over seeds.
    '''
    reports = list(reports)
    if not reports:
        raise ConfigError('No reports to average')
    return ScoreReport.build(**dict((m, float(np.mean([getattr(r, m) for r in reports]))) for m in METRICS))
