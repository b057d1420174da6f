"""
MNAD - Encoder/decoder model whose bottleneck is read through the memory

The encoder maps a window of frames to a map of unit-norm queries. The
decoder reconstructs (or predicts) a frame from the queries concatenated
with the features read from the memory bank.
"""
import collections

import numpy as np

from .utils import LogBase, ValueList, ConfigError, ShapeError, DataError, parse_bool, get_rng
from .parameter import get_parameter
from . import tensor as T
from . import memory

MODELS = {
}

_models_loaded = False

def get_model_class(model_name):
    """
    Get a model class by name

    Models are registered under the ``mnad.models`` entry point group. The
    built-in task models are always available even when the package
    metadata has not been installed.

    :param model_name: Name of the model, e.g. ``reconstruction``
    :return Model class (not instantiated)
    :raise: ConfigError if model not found
    """
    global _models_loaded
    if not _models_loaded:
        from .models.tasks import ReconstructionModel, PredictionModel, MotionCueModel
        MODELS.update({
            "reconstruction" : ReconstructionModel,
            "prediction" : PredictionModel,
            "motion" : MotionCueModel,
        })
        try:
            import pkg_resources
            for model in pkg_resources.iter_entry_points('mnad.models'):
                MODELS[model.name] = model.load()
        except ImportError:
            pass
        _models_loaded = True

    model_class = MODELS.get(model_name, None)
    if model_class is None:
        raise ConfigError("No such model: %s" % model_name)

    return model_class

class ModelOption:
    """
    A configuration option

    :attr attr_name: Name of the attribute to be created on the configured object
    :attr desc: Description of the option
    :attr clargs: Sequence of possible command line arguments
                  (attr_name with _ replaced with - if not specified)
    :attr default: Default value (None if not specified)
    :attr type: Python data type, also used to parse text values
    """
    def __init__(self, attr_name, desc, **kwargs):
        self.attr_name = attr_name
        self.desc = desc
        self.clargs = kwargs.get("clargs", ["--%s" % attr_name.replace("_", "-")])
        self.default = kwargs.get("default", None)
        self.type = kwargs.get("type", str)

    def parse(self, value):
        """
        Convert a value given as text (config file or command line) to the option type
        """
        if value is None or not isinstance(value, str):
            return value
        try:
            return self.type(value)
        except ValueError as exc:
            raise ConfigError("Invalid value for %s: %s (%s)" % (self.attr_name, value, exc))

def apply_options(obj, options, defaults, kwargs):
    """
    Set attributes on ``obj`` from keyword arguments, falling back to
    ``defaults`` and then to each option's own default
    """
    for option in options:
        value = kwargs.get(option.attr_name, None)
        if value is None:
            value = defaults.get(option.attr_name, option.default)
        setattr(obj, option.attr_name, option.parse(value))

ForwardResult = collections.namedtuple("ForwardResult", ["recon", "queries", "read", "match"])

class Model(LogBase):
    """
    Encoder/decoder with a memory-read bottleneck

    The encoder has three stages, each a stride-2 3x3 convolution and a 3x3
    convolution, both followed by batchnorm and ReLU, except that the final
    convolution of the last stage has neither: its output is L2 normalized
    along the channel axis to give the query map. The decoder mirrors the
    encoder with 2x2 stride-2 transposed convolutions and ends with a tanh
    so that output frames lie in [-1, 1].

    :attr params: Sequence of ``Parameter`` objects, in a stable order
    """
    OPTIONS = [
        ModelOption("task", "Training task (reconstruction or prediction)", default="reconstruction"),
        ModelOption("input_window", "Number of input frames", type=int, default=1),
        ModelOption("target_index", "Position of the target frame relative to the window start", type=int, default=0),
        ModelOption("frame_size", "Frame height and width", type=ValueList(int), default=[64, 64]),
        ModelOption("channels_in", "Channels per frame (1 for grayscale, 3 for RGB)", type=int, default=1),
        ModelOption("feature_dims", "Encoder channel widths per stage", type=ValueList(int), default=[64, 128, 256]),
        ModelOption("width_scale", "Scale factor applied to feature_dims", type=float, default=0.25),
        ModelOption("query_channels", "Channels in each query vector", type=int, default=64),
        ModelOption("use_skip_connections", "Use U-Net skip connections", type=parse_bool, default=None),
        ModelOption("seed", "Seed for weight initialization", type=int, default=0),
    ]

    DEFAULTS = {}

    N_STAGES = 3

    def __init__(self, **kwargs):
        LogBase.__init__(self)
        apply_options(self, self.OPTIONS, self.DEFAULTS, kwargs)
        self.frame_size = list(self.frame_size)
        if len(self.frame_size) == 1:
            self.frame_size = self.frame_size * 2
        if self.use_skip_connections is None:
            self.use_skip_connections = (self.task == "prediction")
        elif self.use_skip_connections != (self.task == "prediction"):
            self.log.warning("Skip connections %s for %s task (overriding task default)",
                             "enabled" if self.use_skip_connections else "disabled", self.task)
        self._validate()

        self.dims = [max(1, int(round(d * self.width_scale))) for d in self.feature_dims]
        self.params = []
        self._param_map = {}
        self._build(get_rng(self.seed, 1))

    def _validate(self):
        if self.task not in ("reconstruction", "prediction"):
            raise ConfigError("Unknown task: %s" % self.task)
        if self.input_window < 1:
            raise ConfigError("Input window must contain at least one frame")
        if self.task == "prediction" and self.target_index != self.input_window:
            raise ConfigError("Prediction target must be the frame after the window (target_index=%i, input_window=%i)"
                              % (self.target_index, self.input_window))
        if self.task == "reconstruction" and not 0 <= self.target_index < self.input_window:
            raise ConfigError("Reconstruction target %i must lie inside the window of %i frames"
                              % (self.target_index, self.input_window))
        if len(self.feature_dims) != self.N_STAGES:
            raise ConfigError("Expected %i feature widths, got %s" % (self.N_STAGES, self.feature_dims))
        stride = 2 ** self.N_STAGES
        if any(s <= 0 or s % stride != 0 for s in self.frame_size):
            raise ConfigError("Frame size %s must be a positive multiple of %i" % (self.frame_size, stride))

    @property
    def query_size(self):
        """
        Height and width of the query map
        """
        stride = 2 ** self.N_STAGES
        return [s // stride for s in self.frame_size]

    @property
    def span(self):
        """
        Number of consecutive frames needed for one (input window, target) pair
        """
        return max(self.input_window, self.target_index + 1)

    def _add(self, name, shape, rng, **kwargs):
        param = get_parameter(name, shape, rng, **kwargs)
        self.params.append(param)
        self._param_map[name] = param
        return param

    def _add_conv(self, name, cin, cout, kernel=3):
        self._add("%s.weight" % name, [cout, cin, kernel, kernel], self._rng, desc="Convolution weights")
        self._add("%s.bias" % name, [cout], self._rng, init="Constant", desc="Convolution bias")

    def _add_tconv(self, name, cin, cout):
        self._add("%s.weight" % name, [cin, cout, 2, 2], self._rng, fan_in_axis=1, desc="Transposed convolution weights")
        self._add("%s.bias" % name, [cout], self._rng, init="Constant", desc="Transposed convolution bias")

    def _add_bn(self, name, channels):
        self._add("%s.gamma" % name, [channels], self._rng, init="Constant", init_value=1.0, desc="Batchnorm scale")
        self._add("%s.beta" % name, [channels], self._rng, init="Constant", desc="Batchnorm shift")
        self._add("%s.running_mean" % name, [channels], self._rng, init="Constant", trainable=False,
                  desc="Batchnorm running mean")
        self._add("%s.running_var" % name, [channels], self._rng, init="Constant", init_value=1.0, trainable=False,
                  desc="Batchnorm running variance")

    def _build(self, rng):
        self._rng = rng
        d0, d1, d2 = self.dims
        cin = self.channels_in * self.input_window
        c = self.query_channels

        for stage, (stage_in, stage_out) in enumerate([(cin, d0), (d0, d1), (d1, d2)]):
            self._add_conv("enc%i.conv1" % stage, stage_in, stage_out)
            self._add_bn("enc%i.bn1" % stage, stage_out)
            if stage < self.N_STAGES - 1:
                self._add_conv("enc%i.conv2" % stage, stage_out, stage_out)
                self._add_bn("enc%i.bn2" % stage, stage_out)
            else:
                self._add_conv("enc%i.conv2" % stage, stage_out, c)

        skip = 2 if self.use_skip_connections else 1
        for stage, (stage_in, stage_mid, stage_out) in [(2, (2*c, d2, d1)), (1, (skip*d1, d1, d0)), (0, (skip*d0, d0, d0))]:
            self._add_conv("dec%i.conv" % stage, stage_in, stage_mid)
            self._add_bn("dec%i.bn" % stage, stage_mid)
            self._add_tconv("dec%i.up" % stage, stage_mid, stage_out)
            self._add_bn("dec%i.upbn" % stage, stage_out)
        self._add_conv("out.conv", d0, self.channels_in)
        del self._rng

    def param(self, name):
        """
        :return: the tensor of a named parameter
        """
        param = self._param_map.get(name, None)
        if param is None:
            raise ValueError("Parameter not found in model: %s" % name)
        return param.tensor

    def trainable(self):
        """
        :return: Mapping from name to tensor for the parameters the optimizer updates
        """
        return collections.OrderedDict((p.name, p.tensor) for p in self.params if p.trainable)

    def state_dict(self):
        """
        :return: Ordered mapping from parameter name to a copy of its values
        """
        return collections.OrderedDict((p.name, p.tensor.data.copy()) for p in self.params)

    def load_state_dict(self, state):
        """
        Replace all parameter values. The set of names must match exactly
        """
        if set(state) != set(self._param_map):
            missing = sorted(set(self._param_map) - set(state))
            extra = sorted(set(state) - set(self._param_map))
            raise ConfigError("Parameter names do not match model: missing %s, unexpected %s" % (missing, extra))
        for name, values in state.items():
            param = self._param_map[name]
            if tuple(values.shape) != tuple(param.shape):
                raise ConfigError("Parameter %s has shape %s, model expects %s"
                                  % (name, list(values.shape), list(param.shape)))
            param.tensor.data = np.array(values, dtype=param.tensor.dtype)

    def _conv_block(self, x, name, bn, training, stride=1, act=True):
        x = T.conv2d(x, self.param("%s.weight" % name), self.param("%s.bias" % name), stride=stride, padding=1)
        if bn is None:
            return x
        x = T.batchnorm2d(x, self.param("%s.gamma" % bn), self.param("%s.beta" % bn),
                          self.param("%s.running_mean" % bn), self.param("%s.running_var" % bn),
                          training=training)
        return T.relu(x) if act else x

    def _up_block(self, x, name, bn, training):
        x = T.transposed_conv2d(x, self.param("%s.weight" % name), self.param("%s.bias" % name), stride=2)
        x = T.batchnorm2d(x, self.param("%s.gamma" % bn), self.param("%s.beta" % bn),
                          self.param("%s.running_mean" % bn), self.param("%s.running_var" % bn),
                          training=training)
        return T.relu(x)

    def _window_input(self, frames):
        data = frames.data if isinstance(frames, T.Tensor) else np.asarray(frames)
        if data.ndim == 4:
            data = data[np.newaxis, ...]
        if data.ndim != 5:
            raise DataError("Expected window of shape [N, T, C, H, W], got %s" % list(data.shape))
        n, t, c, h, w = data.shape
        if t != self.input_window:
            raise DataError("Window has %i frames, model expects %i" % (t, self.input_window))
        if c != self.channels_in or [h, w] != self.frame_size:
            raise DataError("Frames have shape %s, model expects %s"
                            % ([c, h, w], [self.channels_in] + self.frame_size))
        dtype = self.params[0].tensor.dtype
        return T.Tensor(data.reshape(n, t*c, h, w), dtype=dtype)

    def encode(self, frames, training=False):
        """
        Encode a window of frames to a query map

        :param frames: Array [N, T, C, H, W] (or [T, C, H, W]) with values in [-1, 1],
                       concatenated along the channel axis before the first convolution
        :param training: Use batch statistics (and update running statistics) in batchnorm
        :return: Tuple of (query map tensor [N, C, H/8, W/8] with unit-norm queries,
                 list of skip features from the first two stages)
        """
        x = self._window_input(frames)
        skips = []
        for stage in range(self.N_STAGES):
            x = self._conv_block(x, "enc%i.conv1" % stage, "enc%i.bn1" % stage, training, stride=2)
            if stage < self.N_STAGES - 1:
                x = self._conv_block(x, "enc%i.conv2" % stage, "enc%i.bn2" % stage, training)
                skips.append(x)
            else:
                x = self._conv_block(x, "enc%i.conv2" % stage, None, training)
        return T.l2_normalize(x, axis=1), skips

    def decode(self, query_map, read_map, skips=None, training=False):
        """
        Decode a frame from queries and read memory features

        :param query_map: Query map tensor [N, C, H, W]
        :param read_map: Read features of the same shape
        :param skips: Skip features from ``encode`` - required iff skip connections are enabled
        :return: Frame tensor [N, channels_in, H_img, W_img] with values in [-1, 1]
        """
        if query_map.shape != read_map.shape or query_map.shape[1] != self.query_channels:
            raise ShapeError("decode", [query_map.shape, read_map.shape],
                             "query and read maps must both have %i channels" % self.query_channels)
        if self.use_skip_connections and not skips:
            raise ValueError("Skip features are required when skip connections are enabled")
        if not self.use_skip_connections and skips:
            raise ValueError("Skip features supplied but skip connections are disabled")

        x = T.concat([query_map, read_map], axis=1)
        for stage in reversed(range(self.N_STAGES)):
            if stage < self.N_STAGES - 1 and self.use_skip_connections:
                x = T.concat([x, skips[stage]], axis=1)
            x = self._conv_block(x, "dec%i.conv" % stage, "dec%i.bn" % stage, training)
            x = self._up_block(x, "dec%i.up" % stage, "dec%i.upbn" % stage, training)
        x = self._conv_block(x, "out.conv", None, training)
        return T.tanh(x)

    def forward(self, frames, bank=None, training=False):
        """
        Encode, read the memory and decode

        :param frames: Input window, see ``encode``
        :param bank: ``MemoryBank`` to read. If None the memory is bypassed and
                     the decoder is fed the queries twice
        :return: ``ForwardResult`` (recon, queries, read, match). ``match`` is
                 None when the memory is bypassed
        """
        queries, skips = self.encode(frames, training=training)
        if bank is None:
            read_map, match = queries, None
        else:
            read_map, match = memory.read(queries, bank)
        recon = self.decode(queries, read_map, skips if self.use_skip_connections else None, training=training)
        return ForwardResult(recon, queries, read_map, match)

    def windows(self, frames):
        """
        Enumerate every complete (input window, target) pair of a frame sequence with stride 1

        :param frames: Array [T, C, H, W]
        :return: Generator of (input window [input_window, C, H, W], target [C, H, W], target frame index)
        """
        for start in range(len(frames) - self.span + 1):
            yield (frames[start:start + self.input_window],
                   frames[start + self.target_index],
                   start + self.target_index)

    def config(self):
        """
        :return: Dictionary of option values, suitable for recreating the model
        """
        return dict((option.attr_name, getattr(self, option.attr_name)) for option in self.OPTIONS)

    def log_config(self, log=None):
        """
        Write model configuration to a log stream

        :param: log Optional logger to use - defaults to class instance logger
        """
        if log is None:
            log = self.log
        log.info("Model: %s", str(self))
        for option in self.OPTIONS:
            log.info(" - %s: %s", option.desc, str(getattr(self, option.attr_name)))
        log.info(" - Query map: %s x %i channels", self.query_size, self.query_channels)
