# quality_app/forms.py
import json
from dataclasses import fields

from django import forms
from django.conf import settings
from django.core.exceptions import ValidationError

from .exceptions import ConfigurationError
from .simulation import SimConfig
from .trainer import TrainConfig


class PairField(forms.Field):
    """A ``[min, max]`` pair of non-negative integers given as a JSON list."""

    default_error_messages = {
        'invalid': 'Enter a [min, max] pair of whole numbers.',
    }

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ValidationError(self.error_messages['invalid'], code='invalid')
        if not all(isinstance(item, int) and not isinstance(item, bool) for item in value):
            raise ValidationError(self.error_messages['invalid'], code='invalid')
        return tuple(value)

    def validate(self, value):
        super().validate(value)
        if value is not None and value[0] > value[1]:
            raise ValidationError('min must not exceed max.', code='order')


class JsonConfigForm(forms.Form):
    """Validates a flat JSON config; omitted keys take the dataclass defaults."""

    config_class = None

    def __init__(self, payload, *args, **kwargs):
        self.unknown_fields = sorted(set(payload) - set(self.base_fields))
        data = {**self.default_values(), **payload}
        super().__init__(data, *args, **kwargs)
        self.config = None

    @classmethod
    def default_values(cls):
        defaults = {}
        for item in fields(cls.config_class):
            value = item.default
            defaults[item.name] = list(value) if isinstance(value, tuple) else value
        return defaults

    def clean(self):
        cleaned_data = super().clean()
        if self.unknown_fields:
            raise ValidationError(f"Unknown field(s): {', '.join(self.unknown_fields)}.")
        if self.errors:
            return cleaned_data
        try:
            self.config = self.config_class(**cleaned_data)
        except ConfigurationError as exc:
            for field, messages in exc.field_errors.items():
                for message in messages:
                    self.add_error(None if field == '__all__' else field, message)
        return cleaned_data


class SimConfigForm(JsonConfigForm):
    config_class = SimConfig

    n_frames = forms.IntegerField(min_value=1)
    feature_dim = forms.IntegerField(min_value=1)
    cluster_count_range = PairField()
    cluster_width_range = PairField()
    overlap_probability = forms.FloatField(min_value=0.0, max_value=1.0)
    signal_to_noise = forms.FloatField()
    video_quality_threshold = forms.FloatField(min_value=0.0, max_value=1.0)
    seed = forms.IntegerField(min_value=0, max_value=2 ** 64 - 1)


class TrainConfigForm(JsonConfigForm):
    config_class = TrainConfig

    episodes_per_update = forms.IntegerField(min_value=1)
    learning_rate = forms.FloatField(min_value=0.0)
    momentum = forms.FloatField(min_value=0.0)
    lr_decay_factor = forms.FloatField()
    lr_decay_every = forms.IntegerField(min_value=1)
    beta = forms.FloatField(min_value=0.0)
    pretrain_epochs = forms.IntegerField(min_value=0)
    joint_epochs = forms.IntegerField(min_value=0)
    baseline_momentum = forms.FloatField(min_value=0.0)
    seed = forms.IntegerField(min_value=0, max_value=2 ** 64 - 1)
    ramp_width = forms.FloatField(min_value=1.0)
    amplitude = forms.FloatField()
    hidden_size = forms.IntegerField(min_value=1)
    conv_channels = forms.IntegerField(min_value=1)
    kernel_size = forms.IntegerField(min_value=1)
    supervised_warmup = forms.BooleanField(required=False)
    max_grad_norm = forms.FloatField(required=False)
    pathwise_sup = forms.BooleanField(required=False)
    fuse_frame_features = forms.BooleanField(required=False)

    @classmethod
    def default_values(cls):
        defaults = super().default_values()
        # reward shaping defaults are project settings
        defaults['ramp_width'] = settings.REWARD_RAMP_WIDTH
        defaults['amplitude'] = settings.REWARD_AMPLITUDE
        defaults['beta'] = settings.REWARD_BETA
        return defaults


def form_errors(form):
    return {field: list(messages) for field, messages in form.errors.items()}


def build_config(form_class, payload):
    if not isinstance(payload, dict):
        raise ConfigurationError({'__all__': ['config must be a JSON object']})
    form = form_class(payload)
    if not form.is_valid():
        raise ConfigurationError(form_errors(form))
    return form.config


def load_config(form_class, path=None):
    """Read and validate a JSON config file; ``path=None`` yields the defaults."""
    if path is None:
        return build_config(form_class, {})
    try:
        with open(path, encoding='utf-8') as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise ConfigurationError({'__all__': [f"cannot read config {path}: {exc.strerror}"]}) from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError({'__all__': [f"config {path} is not valid JSON: {exc}"]}) from exc
    return build_config(form_class, payload)


def load_sim_config(path=None):
    return load_config(SimConfigForm, path)


def load_train_config(path=None):
    return load_config(TrainConfigForm, path)
