from __future__ import unicode_literals
from enum import Enum

from ..core.errors import ConfigError
from ..records.fields import FloatField, BoolField, EnumField, StringField, NullableField
from ..records.models import Record
from ..records.utils import parse_index_list
from .fsg import SignMode


class FusionLayers(Enum):
    weak = 1
    all = 2


class GuidanceConfig(Record):
    '''
    Thresholds and strengths of focal guidance. The defaults are tuning knobs for the toy
    model and are recorded in every run manifest.
    '''

    enabled = BoolField(default=True)
    fsg = BoolField(default=True, doc='keyword anchoring: value fusion and latent injection')
    cache = BoolField(default=True, doc='attention cache injection into weak layers')
    tau_sel = FloatField(default=0.2)
    tau_region = FloatField(default=0.5)
    tau_cache = FloatField(default=0.3)
    lambda_txt = FloatField(default=0.1, min_value=0.0)
    lambda_lat = FloatField(default=0.1, min_value=0.0)
    lambda_cache = FloatField(default=0.1, min_value=0.0)
    sign_mode = EnumField(SignMode, default=SignMode.positive)
    fusion_layers = EnumField(FusionLayers, default=FusionLayers.weak)
    normalize_cache = BoolField(default=True)
    weak_layers = NullableField(StringField(), doc='overrides the model\'s weak layers, e.g. "2-5"')

    @classmethod
    def off(cls):
        return cls(enabled=False)

    def ablation(self, fsg=True, cache=True):
        '''
        A copy with only the requested components switched on.
        '''
        return self.replace(fsg=fsg, cache=cache)

    def weak_layer_set(self, default, num_layers=None):
        '''
        The override when set, else `default`. With `num_layers`, indices outside the model
        raise `ConfigError`.
        '''
        if self.weak_layers is None:
            return list(default)
        try:
            weak = parse_index_list(self.weak_layers)
        except ValueError as e:
            raise ConfigError('%s (field \'weak_layers\')' % e)
        bad = [l for l in weak if num_layers is not None and l >= num_layers]
        if bad:
            raise ConfigError('Weak layers %s out of range for %d layers' % (bad, num_layers))
        return weak

    def is_noop(self):
        '''
        True when no component can change a forward pass.
        '''
        if not self.enabled:
            return True
        fsg_active = self.fsg and (self.lambda_txt != 0.0 or self.lambda_lat != 0.0)
        cache_active = self.cache and self.lambda_cache != 0.0
        return not (fsg_active or cache_active)

    def validate(self):
        if self.weak_layers is not None:
            self.weak_layer_set(())
        return self
