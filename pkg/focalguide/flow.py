'''
Rectified-flow dynamics.

The path between a data latent z0 and a noise latent z1 is parameterized as

    z_t = (1 - t) * z1 + t * z0

so noise sits at t = 0 and data at t = 1, and the constant velocity along the path is
z0 - z1. Sampling integrates dz/dt = v(z, t) with explicit Euler steps from t = 0 (noise)
to t = 1 (data).
'''
from __future__ import unicode_literals
from enum import Enum

import numpy as np

from .core.errors import ConfigError, ContractError, NumericError
from .core.tensor import LatentVideo, latent_array, check_finite
from .records.models import Record
from .records.fields import IntField, UInt64Field, BoolField, EnumField

import logging
logger = logging.getLogger('focalguide')


class TimeSampling(Enum):
    uniform = 1
    logit_normal = 2


class FlowConfig(Record):
    '''
    Sampler and training-time settings exported in every run manifest.
    '''
    steps = IntField(default=50, min_value=1)
    seed = UInt64Field(default=0)
    guidance = BoolField(default=True)
    t_sampling = EnumField(TimeSampling, default=TimeSampling.uniform)


class FlowPath(object):
    '''
    The straight path between a data latent `z0` and a noise latent `z1` of the same shape.
    '''

    def __init__(self, z0, z1):
        z0 = latent_array(z0)
        z1 = latent_array(z1)
        if z0.shape != z1.shape:
            raise ConfigError('Path endpoints differ in shape: %s vs %s' % (z0.shape, z1.shape))
        self.z0 = LatentVideo(z0)
        self.z1 = LatentVideo(z1)

    @property
    def shape(self):
        return self.z0.shape

    def velocity(self):
        '''
        The ground-truth constant velocity z0 - z1.
        '''
        return self.z0.data - self.z1.data


def _check_time(t):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ConfigError('Time %r outside [0, 1]' % t)
    return t


def interpolate(path, t):
    t = _check_time(t)
    return LatentVideo((1.0 - t) * path.z1.data + t * path.z0.data)


def _predict(model, z, t, cond):
    pred = np.asarray(model(z, t, cond), dtype=np.float64)
    if pred.shape != z.shape:
        raise ContractError('Velocity model returned shape %s for a latent of shape %s' % (pred.shape, z.shape))
    return pred


def rf_loss(model, path, t, cond=None):
    '''
    Mean squared error between the model's velocity at z_t and the path velocity z0 - z1.

    - `model`: a callable `model(z_t, t, cond)` returning an array shaped like `z_t`.
    - `cond`: conditioning passed through to the model.
    '''
    t = _check_time(t)
    z_t = interpolate(path, t).data
    pred = _predict(model, z_t, t, cond)
    return mse(pred, path.velocity())


def mse(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_grad(pred, target, scale=1.0):
    '''
    Gradient of `scale * mse(pred, target)` with respect to `pred`.
    '''
    return (2.0 * scale / pred.size) * (pred - target)


def euler_sample(model, z1, steps, cond=None, callback=None):
    '''
    Integrates dz/dt = model(z, t, cond) from t = 0 to t = 1 with `steps` uniform Euler steps,
    starting at the noise latent `z1`. Returns the final latent as a `LatentVideo`.

    - `callback`: optional `callback(step, t, z, v)` invoked after each velocity evaluation,
      with `z` the state the velocity was evaluated at.

    Raises `NumericError` carrying the step index when the state stops being finite.
    '''
    steps = int(steps)
    if steps < 1:
        raise ConfigError('steps must be >= 1, got %d' % steps)
    z = np.array(latent_array(z1), copy=True)
    dt = 1.0 / steps
    for i in range(steps):
        t = float(i) / steps
        v = _predict(model, z, t, cond)
        check_finite(v, 'velocity', step=i)
        if callback is not None:
            callback(i, t, z, v)
        z = z + dt * v
        if not np.all(np.isfinite(z)):
            raise NumericError('Non-finite latent during sampling', step=i)
        logger.debug('euler step %d/%d t=%.4f |v|=%.6g', i + 1, steps, t, float(np.abs(v).max()))
    return LatentVideo(z)


def time_grid(steps):
    '''
    The times at which `euler_sample` evaluates the velocity.
    '''
    return [float(i) / steps for i in range(int(steps))]


def sample_time(rng, t_sampling=TimeSampling.uniform):
    '''
    Draws a training time in [0, 1]. Logit-normal draws concentrate on the middle of the path.
    '''
    if t_sampling is TimeSampling.uniform:
        return float(rng.uniform())
    return float(1.0 / (1.0 + np.exp(-rng.normal())))


def sample_training_path(z0, rng, t_sampling=TimeSampling.uniform):
    '''
    Pairs a data latent with a standard normal noise latent and a training time.
    Returns `(FlowPath, t)`.
    '''
    z0 = latent_array(z0)
    z1 = rng.normal(z0.shape)
    return FlowPath(z0, z1), sample_time(rng, t_sampling)


def convergence_ratio(model, z1, exact, steps, cond=None):
    '''
    Ratio of the max-abs error of `euler_sample` at `steps` to its error at `2 * steps`,
    against the exact endpoint `exact`. First-order integration gives a ratio near 2.
    '''
    exact = latent_array(exact)
    coarse = np.abs(euler_sample(model, z1, steps, cond).data - exact).max()
    fine = np.abs(euler_sample(model, z1, 2 * steps, cond).data - exact).max()
    if fine == 0.0:
        raise NumericError('Zero error at %d steps; convergence ratio undefined' % (2 * steps))
    return float(coarse / fine)
