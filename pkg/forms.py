from dataclasses import asdict

from werkzeug.datastructures import MultiDict
from wtforms import BooleanField, FloatField, Form, IntegerField, SelectField, StringField
from wtforms.validators import InputRequired, NumberRange, Optional, ValidationError

from services.config import ARCHITECTURES, INIT_MODES, TrainConfig
from services.errors import ConfigError
from services.synth import VISUAL_CODES, SynthSpec
from utils import read_key_value_file

FALSE_VALUES = (False, "false", "False", "0", "no", "off", "")


# =====================
# TRAINING CONFIG FORM
# =====================
class TrainConfigForm(Form):
    epochs = IntegerField("Epochs", validators=[InputRequired(), NumberRange(min=0)])
    batch_size = IntegerField("Batch size", validators=[InputRequired(), NumberRange(min=1)])
    initial_lr = FloatField("Initial learning rate", validators=[InputRequired(), NumberRange(min=1e-12)])
    lr_decay_factor = FloatField("LR decay factor", validators=[InputRequired(), NumberRange(min=1.0)])
    lr_decay_every = IntegerField("LR decay period (epochs)", validators=[InputRequired(), NumberRange(min=1)])
    snippets_per_epoch = IntegerField("Snippets per epoch", validators=[InputRequired(), NumberRange(min=1)])
    snippet_length = IntegerField("Snippet length", validators=[InputRequired(), NumberRange(min=1)])
    seed = IntegerField("Seed", validators=[InputRequired(), NumberRange(min=0)])
    init_mode = SelectField("Initialisation", choices=[(m, m) for m in INIT_MODES])
    arch = SelectField("Architecture", choices=[(a, a) for a in ARCHITECTURES])
    width = IntegerField("Base width", validators=[InputRequired(), NumberRange(min=1)])
    working_fps = IntegerField("Working fps", validators=[InputRequired(), NumberRange(min=1)])
    load_size = IntegerField("Load size", validators=[InputRequired(), NumberRange(min=8)])
    input_size = IntegerField("Input size", validators=[InputRequired(), NumberRange(min=8)])
    augment = BooleanField("Augment", false_values=FALSE_VALUES)
    hflip = BooleanField("Horizontal flip", false_values=FALSE_VALUES)
    num_workers = IntegerField("Loader workers", validators=[InputRequired(), NumberRange(min=0)])
    checkpoint_every = IntegerField("Checkpoint period", validators=[InputRequired(), NumberRange(min=1)])
    shortcut = SelectField("Shortcut", choices=[("A", "zero-pad"), ("B", "projection")])
    pretrained_path = StringField("Pretrained checkpoint", validators=[Optional()])
    imagenet_pretrained = BooleanField("ImageNet 2D init", false_values=FALSE_VALUES)
    device = StringField("Device", validators=[InputRequired()])

    def validate_input_size(self, field):
        if self.load_size.data is not None and field.data is not None and field.data > self.load_size.data:
            raise ValidationError("input_size cannot exceed load_size")


# =====================
# SYNTHETIC DATASET FORM
# =====================
class SynthSpecForm(Form):
    n_subjects = IntegerField("Subjects", validators=[InputRequired(), NumberRange(min=1, max=26)])
    videos_per_subject = IntegerField("Videos per subject", validators=[InputRequired(), NumberRange(min=1)])
    num_classes = IntegerField("Classes", validators=[InputRequired(), NumberRange(min=2, max=len(VISUAL_CODES))])
    native_fps = IntegerField("Native fps", validators=[InputRequired(), NumberRange(min=1)])
    working_fps = IntegerField("Working fps", validators=[InputRequired(), NumberRange(min=1)])
    mean_segment_len = IntegerField("Mean segment length", validators=[InputRequired(), NumberRange(min=2)])
    segment_jitter = IntegerField("Segment jitter", validators=[InputRequired(), NumberRange(min=0)])
    cycles = IntegerField("Class cycles per video", validators=[InputRequired(), NumberRange(min=1)])
    frame_size = IntegerField("Frame size", validators=[InputRequired(), NumberRange(min=16)])
    object_size = IntegerField("Object size", validators=[InputRequired(), NumberRange(min=2)])
    seed = IntegerField("Seed", validators=[InputRequired(), NumberRange(min=0)])


def _as_text(value):
    return str(value)


def _bind(form_class, defaults, path=None, overrides=None):
    """Defaults < key=value file < overrides, validated by the form."""
    data = MultiDict({key: _as_text(value) for key, value in defaults.items()})
    if path is not None:
        for key, value in read_key_value_file(path):
            if key not in defaults:
                raise ConfigError(f"Unknown configuration key '{key}' in {path}", {key: ["unknown key"]})
            data.setlist(key, [value])
    for key, value in (overrides or {}).items():
        if value is not None and key in defaults:
            data.setlist(key, [_as_text(value)])

    form = form_class(formdata=data)
    if not form.validate():
        details = "; ".join(f"{k}: {', '.join(v)}" for k, v in form.errors.items())
        raise ConfigError(f"Invalid configuration: {details}", form.errors)
    return {key: form[key].data for key in defaults}


def load_train_config(path=None, **overrides):
    return TrainConfig(**_bind(TrainConfigForm, TrainConfig().as_dict(), path, overrides))


def load_synth_spec(path=None, **overrides):
    return SynthSpec(**_bind(SynthSpecForm, asdict(SynthSpec()), path, overrides))
