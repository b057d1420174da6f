"""
MNAD - General utility functions
"""
import contextlib
import logging

import numpy as np

NP_DTYPE = np.float32

_PRECISIONS = {32: np.float32, 64: np.float64}

def set_precision(bits):
    """
    Set the default floating point precision for new tensors

    :param bits: 32 (training) or 64 (gradient verification)
    """
    global NP_DTYPE
    if bits not in _PRECISIONS:
        raise ConfigError("Unsupported precision: %s (expected 32 or 64)" % str(bits))
    NP_DTYPE = _PRECISIONS[bits]

def get_dtype():
    """
    :return: Current default numpy floating point type
    """
    return NP_DTYPE

@contextlib.contextmanager
def precision(bits):
    """
    Context manager which temporarily switches the default precision
    """
    previous = NP_DTYPE
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(64 if previous == np.float64 else 32)

def ValueList(value_type):
    """
    Class used with argparse for options which can be given as a space or comma separated list
    """
    def _call(value):
        if not isinstance(value, str):
            return [value_type(v) for v in value]
        return [value_type(v) for v in value.replace(",", " ").split()]
    return _call

def parse_bool(value):
    """
    Parse a boolean option given as text (config files) or a Python value
    """
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError("Not a boolean value: %s" % value)

class LogBase(object):
    """
    Base class that provides a named log
    """
    def __init__(self, **kwargs):
        self.log = logging.getLogger(type(self).__name__)

def get_rng(seed, *stream):
    """
    Get a seeded random generator

    All randomness in the package comes from the Philox counter-based
    generator so that independent streams (e.g. one per clip) can be
    derived from ``(seed, stream ids...)`` without depending on the order
    in which they are requested.

    :param seed: Integer seed
    :param stream: Optional integer stream identifiers
    :return: numpy.random.Generator
    """
    seq = np.random.SeedSequence([int(seed)] + [int(s) for s in stream])
    return np.random.Generator(np.random.Philox(seq))

def to_unit_range(frame):
    """
    Remap frame values from [-1, 1] to [0, 1]
    """
    return (np.asarray(frame, dtype=np.float64) + 1.0) / 2.0

class MnadError(RuntimeError):
    """
    Base class for runtime failures raised by this package
    """

class ShapeError(ValueError):
    """
    Tensor shapes are not valid for an operation

    :attr kind: Name of the operation
    :attr extents: Offending shapes
    """
    def __init__(self, kind, extents, detail=""):
        self.kind = kind
        self.extents = [tuple(e) for e in extents]
        msg = "%s: invalid shapes %s" % (kind, ", ".join(str(e) for e in self.extents))
        if detail:
            msg += " (%s)" % detail
        ValueError.__init__(self, msg)

class ConfigError(ValueError):
    """
    Invalid or inconsistent configuration
    """

class DataError(ValueError):
    """
    Input data could not be read or is inconsistent
    """

class CheckpointError(DataError):
    """
    Checkpoint file is malformed

    :attr offset: Byte offset at which the problem was detected, if known
    """
    def __init__(self, msg, offset=None):
        self.offset = offset
        if offset is not None:
            msg = "%s at byte offset %i" % (msg, offset)
        DataError.__init__(self, msg)

class NumericalError(MnadError):
    """
    Non-finite values were produced where finite values are required
    """
