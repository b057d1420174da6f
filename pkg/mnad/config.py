"""
MNAD - Run configuration from config files, command line flags and the environment

Config files are sectioned ``key = value`` text::

    [model]
    width_scale = 0.125

    [memory]
    memory_items = 10

    [train]
    task = prediction
    epochs = 5

Keys in each section must be options of the class the section configures.
"""
import configparser
import os

from .utils import LogBase, ConfigError
from .model import Model
from .trainer import TrainConfig, EvalConfig
from .data import SynthSpec

SEED_ENV = "MNAD_SEED"

MEMORY_KEYS = ("memory_items", "use_memory", "item_grads", "gamma", "gamma_quantile")

def _options(options, keys=None, exclude=()):
    return [o for o in options if (keys is None or o.attr_name in keys) and o.attr_name not in exclude]

SECTIONS = {
    "model" : _options(Model.OPTIONS, exclude=("task",)),
    "memory" : _options(TrainConfig.OPTIONS, keys=MEMORY_KEYS),
    "train" : _options(TrainConfig.OPTIONS, exclude=MEMORY_KEYS),
    "eval" : _options(EvalConfig.OPTIONS),
    "data" : _options(SynthSpec.OPTIONS),
}

class RunConfig(LogBase):
    """
    Option values for one command, by section

    Values are kept as given (text from files, typed values from the command
    line) and parsed by the classes they configure.
    """

    def __init__(self):
        LogBase.__init__(self)
        self.sections = dict((name, {}) for name in SECTIONS)

    @classmethod
    def from_file(cls, path):
        """
        Read a config file

        :raise: ConfigError for unreadable files, unknown sections or unknown keys
        """
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as f_handle:
                parser.read_file(f_handle)
        except (IOError, OSError) as exc:
            raise ConfigError("Cannot read config file %s: %s" % (path, exc))
        except configparser.Error as exc:
            raise ConfigError("Malformed config file %s: %s" % (path, exc))

        config = cls()
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError("Unknown section [%s] in %s (expected one of %s)"
                                  % (section, path, ", ".join(sorted(SECTIONS))))
            config.update(section, dict(parser.items(section)), source=path)
        return config

    def update(self, section, values, source="command line"):
        """
        Set option values in a section, ignoring None

        :raise: ConfigError if a key is not an option of the section
        """
        known = dict((o.attr_name, o) for o in SECTIONS[section])
        for key, value in values.items():
            if key not in known:
                raise ConfigError("Unknown key '%s' in section [%s] (%s)" % (key, section, source))
            if value is not None:
                # Parse now so that bad values are reported with their source
                known[key].parse(value)
                self.sections[section][key] = value

    def apply_env(self, environ=None):
        """
        Override every seed from the environment
        """
        environ = os.environ if environ is None else environ
        seed = environ.get(SEED_ENV, None)
        if seed is None:
            return
        try:
            seed = int(seed)
        except ValueError:
            raise ConfigError("%s must be an integer, got %s" % (SEED_ENV, seed))
        self.log.info("Seed overridden from %s: %i", SEED_ENV, seed)
        for section in ("model", "train", "eval", "data"):
            self.sections[section]["seed"] = seed

    def get(self, section):
        """
        :return: Copy of the values set in a section
        """
        return dict(self.sections[section])

    def train_config(self, task=None):
        """
        :return: ``TrainConfig`` from the [train] and [memory] sections
        """
        kwargs = self.get("train")
        kwargs.update(self.get("memory"))
        if task is not None:
            kwargs["task"] = task
        return TrainConfig(**kwargs)

    def eval_config(self):
        return EvalConfig(**self.get("eval"))

    def synth_spec(self, **overrides):
        kwargs = self.get("data")
        kwargs.update(dict((k, v) for k, v in overrides.items() if v is not None))
        return SynthSpec(**kwargs)

    def model_options(self):
        options = self.get("model")
        options.setdefault("seed", self.sections["train"].get("seed", None))
        return dict((k, v) for k, v in options.items() if v is not None)

def load_config(path=None, overrides=None, environ=None):
    """
    Build a run configuration

    File values are overridden by command line values, and seeds by ``MNAD_SEED``

    :param path: Optional config file
    :param overrides: Optional mapping from section name to option values
    """
    config = RunConfig.from_file(path) if path else RunConfig()
    for section, values in (overrides or {}).items():
        config.update(section, values)
    config.apply_env(environ)
    return config
