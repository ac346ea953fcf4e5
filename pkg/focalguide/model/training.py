from __future__ import unicode_literals
from collections import namedtuple, OrderedDict
from enum import Enum

import numpy as np
from six import string_types

from ..core.errors import ConfigError, DivergenceError
from ..flow import interpolate, mse, mse_grad
from ..records.utils import parse_index_list
from .dit import parameter_group

import logging
logger = logging.getLogger('focalguide.training')


TrainingExample = namedtuple('TrainingExample', 'path t cond')

GradientCheck = namedtuple('GradientCheck', 'name index analytic numeric rel_error')

PARAMETER_GROUPS = ('embed', 'cond', 'head')


class ParameterScope(Enum):
    layer = 1
    cross_attention = 2


def parse_mask(text):
    '''
    Parses a trainable mask such as "2-5,head" into a sorted list of layer indices followed
    by group names. An empty string is the empty mask.
    '''
    if not isinstance(text, string_types):
        return normalize_mask(text)
    groups, layers = [], []
    for part in text.split(','):
        part = part.strip()
        if not part:
            continue
        if part in PARAMETER_GROUPS:
            groups.append(part)
        else:
            try:
                layers.extend(parse_index_list(part))
            except ValueError as e:
                raise ConfigError('Invalid trainable mask "%s": %s' % (text, e))
    return sorted(set(layers)) + sorted(set(groups))


def normalize_mask(mask):
    layers, groups = set(), set()
    for entry in mask:
        if isinstance(entry, string_types):
            if entry not in PARAMETER_GROUPS:
                raise ConfigError('Unknown parameter group "%s"' % entry)
            groups.add(entry)
        else:
            layers.add(int(entry))
    return sorted(layers) + sorted(groups)


def trainable_names(model, mask, scope=ParameterScope.layer):
    '''
    Names of the parameters a mask selects. With `ParameterScope.cross_attention`, a masked
    layer contributes only the weights through which it attends to the conditions.
    '''
    mask = set(normalize_mask(mask))
    bad = [l for l in mask if not isinstance(l, string_types) and not 0 <= l < model.num_layers]
    if bad:
        raise ConfigError('Masked layers %s out of range for %d layers' % (sorted(bad), model.num_layers))
    cross = set(model.topology.cross_attention_suffixes())
    names = []
    for name in model.params:
        group = parameter_group(name)
        if group not in mask:
            continue
        if isinstance(group, int) and scope is ParameterScope.cross_attention:
            suffix = name.split('.', 2)[2]
            if suffix not in cross:
                continue
        names.append(name)
    return names


def _interventions(model, batch, guidance):
    if guidance is None:
        return None
    return [guidance.intervention(model, interpolate(ex.path, ex.t).data, ex.t, ex.cond) for ex in batch]


def batch_loss(model, batch, interventions=None):
    '''
    Mean rectified-flow loss over the batch.
    '''
    total = 0.0
    for i, ex in enumerate(batch):
        z_t = interpolate(ex.path, ex.t).data
        iv = interventions[i] if interventions else None
        pred = model.forward(z_t, ex.t, ex.cond, intervention=iv).velocity.data
        total += mse(pred, ex.path.velocity())
    return total / len(batch)


def loss_and_grads(model, batch, interventions=None, scale=1.0):
    '''
    Returns (scale * mean loss, gradients of that quantity).
    '''
    if not len(batch):
        raise ConfigError('Empty training batch')
    total, grads = 0.0, None
    for i, ex in enumerate(batch):
        z_t = interpolate(ex.path, ex.t).data
        iv = interventions[i] if interventions else None
        result = model.forward(z_t, ex.t, ex.cond, intervention=iv, record=True)
        pred, target = result.velocity.data, ex.path.velocity()
        total += mse(pred, target)
        g = model.backward(result.tape, mse_grad(pred, target, scale / len(batch)))
        if grads is None:
            grads = g
        else:
            for name in g:
                grads[name] = grads[name] + g[name]
    return scale * total / len(batch), grads


def train_step(model, batch, lr, mask, scope=ParameterScope.layer, guidance=None, step=None):
    '''
    One plain gradient-descent step on the parameters selected by `mask`; all other
    parameters stay bit-identical. Returns the batch loss after the update.

    - `guidance`: optional guidance runtime; its interventions are applied in every forward
      pass of the step.
    - `step`: index reported when the loss diverges.
    '''
    if lr < 0 or not np.isfinite(lr):
        raise ConfigError('Learning rate must be finite and >= 0, got %r' % lr)
    names = trainable_names(model, mask, scope)
    interventions = _interventions(model, batch, guidance)
    loss, grads = loss_and_grads(model, batch, interventions)
    if not np.isfinite(loss):
        raise DivergenceError('Loss is not finite', step=step)
    if lr and names:
        for name in names:
            model.params[name] = model.params[name] - lr * grads[name]
        if not model.params.all_finite():
            raise DivergenceError('Parameters are not finite after update', step=step)
        interventions = _interventions(model, batch, guidance)
    new_loss = batch_loss(model, batch, interventions)
    if not np.isfinite(new_loss):
        raise DivergenceError('Loss is not finite', step=step)
    logger.debug('step %s: loss %.6g -> %.6g', step, loss, new_loss)
    return new_loss


def train(model, batch, steps, lr, mask, scope=ParameterScope.layer, guidance=None, callback=None):
    '''
    Runs `steps` train steps on a fixed batch. Returns the loss curve, starting with the
    loss before the first step.

    - `callback`: optional `callback(step, loss)` after each step.
    '''
    losses = [batch_loss(model, batch, _interventions(model, batch, guidance))]
    for i in range(steps):
        losses.append(train_step(model, batch, lr, mask, scope, guidance, step=i))
        if callback is not None:
            callback(i, losses[-1])
    if steps:
        logger.info('Trained %d steps: loss %.6g -> %.6g', steps, losses[0], losses[-1])
    return losses


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(model, batch, names=None, entries=None, eps=1e-5, rng=None, interventions=None):
    '''
    Compares analytic gradients against central finite differences of the batch loss.

    - `names`: parameters to check (default: all).
    - `entries`: number of entries per parameter to sample with `rng` (default: every entry).
    - `interventions`: fixed per-example interventions held constant while perturbing.

    Returns a list of `GradientCheck`.
    '''
    _, grads = loss_and_grads(model, batch, interventions)
    names = model.params.names() if names is None else names
    results = []
    for name in names:
        arr = model.params[name]
        if entries is None or entries >= arr.size:
            flat_indices = range(arr.size)
        else:
            flat_indices = sorted(set(int(i) for i in rng.integers(0, arr.size, (entries,))))
        for flat in flat_indices:
            index = np.unravel_index(flat, arr.shape)
            orig = arr[index]
            arr[index] = orig + eps
            plus = batch_loss(model, batch, interventions)
            arr[index] = orig - eps
            minus = batch_loss(model, batch, interventions)
            arr[index] = orig
            numeric = (plus - minus) / (2.0 * eps)
            analytic = float(grads[name][index])
            results.append(GradientCheck(name, tuple(int(i) for i in index), analytic, numeric,
                                         relative_error(analytic, numeric)))
    return results


def worst_by_parameter(checks):
    '''
    Largest relative error per parameter name.
    '''
    worst = OrderedDict()
    for c in checks:
        if c.name not in worst or c.rel_error > worst[c.name].rel_error:
            worst[c.name] = c
    return worst
