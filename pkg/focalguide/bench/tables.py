'''
Published results, kept as reference rows for the `table` command and the scoring tests.
Totals are the published (4-decimal) values, so they may differ from the recomputed mean in
the last digit.
'''
from __future__ import unicode_literals
from collections import namedtuple, OrderedDict

from .scoring import METRICS, total_score, relative_gain

PublishedRow = namedtuple('PublishedRow', 'model params ' + ' '.join(METRICS) + ' total')
AblationRow = namedtuple('AblationRow', 'setting dynamic_attributes human_motion human_interaction')

PUBLISHED_MAIN_RESULTS = [
    PublishedRow('CogVideoX-I2V',            '5B',   0.9658, 0.9787, 0.1279, 0.6100, 0.4500, 0.6265),
    PublishedRow('Open-Sora Plan v1.3',      '2.7B', 0.9630, 0.9781, 0.1047, 0.4300, 0.4400, 0.5832),
    PublishedRow('LTX-Video',                '13B',  0.9845, 0.9893, 0.2558, 0.4800, 0.3500, 0.6119),
    PublishedRow('Wan2.1-I2V',               '14B',  0.9685, 0.9870, 0.3512, 0.6920, 0.4880, 0.6973),
    PublishedRow('Wan2.2-TI2V',              '5B',   0.9858, 0.9941, 0.1512, 0.7000, 0.3700, 0.6402),
    PublishedRow('HunyuanVideo-I2V',         '13B',  0.9886, 0.9942, 0.1698, 0.2600, 0.1800, 0.5185),
    PublishedRow('SkyReels-V2-I2V',          '14B',  0.9867, 0.9916, 0.0465, 0.7100, 0.3200, 0.6110),
    PublishedRow('FG+Wan2.1-I2V',            '14B',  0.9694, 0.9875, 0.3860, 0.7500, 0.5320, 0.7250),
    PublishedRow('FG+HunyuanVideo-I2V',      '13B',  0.9867, 0.9937, 0.2270, 0.3480, 0.2300, 0.5571),
]

# guided model -> its unguided backbone
GUIDED_BASELINES = OrderedDict([
    ('FG+Wan2.1-I2V', 'Wan2.1-I2V'),
    ('FG+HunyuanVideo-I2V', 'HunyuanVideo-I2V'),
])

PUBLISHED_ABLATION = [
    AblationRow('Wan2.1-I2V',                     0.3512, 0.6920, 0.4880),
    AblationRow('Wan2.1-I2V w/ post-training',    0.3628, 0.6980, 0.5140),
    AblationRow('FG zero-shot',                   0.3512, 0.7020, 0.5220),
    AblationRow('w/ AC (post-training)',          0.3827, 0.7160, 0.5280),
    AblationRow('w/ FSG (post-training)',         0.3804, 0.7280, 0.5240),
    AblationRow('FG+Wan2.1-I2V w/ post-training', 0.3860, 0.7500, 0.5320),
]


def published_row(model):
    for row in PUBLISHED_MAIN_RESULTS:
        if row.model == model:
            return row
    raise KeyError(model)


def row_metrics(row):
    return OrderedDict((m, getattr(row, m)) for m in METRICS)


def recomputed_totals():
    '''
    (row, recomputed total) for every published row.
    '''
    return [(row, total_score(row_metrics(row))) for row in PUBLISHED_MAIN_RESULTS]


def published_gains():
    '''
    (guided model, baseline model, gain in percent) from the published totals.
    '''
    return [(guided, base, relative_gain(published_row(base).total, published_row(guided).total))
            for guided, base in GUIDED_BASELINES.items()]


def table_rows():
    '''
    Rows for the `table` command: model, params, published total, recomputed total.
    '''
    return [(row.model, row.params, row.total, total) for row, total in recomputed_totals()]
