"""
MNAD - Binary checkpoint files

Layout (all integers little-endian)::

    "MNAD"                      magic
    uint32                      format version
    uint32 + bytes              config echo (JSON, sorted keys)
    tensor table                model parameters
    tensor table                memory items
    uint64, 4 x float64         optimizer step, beta1, beta2, eps, lr
    tensor table                optimizer moments
    uint32 + bytes              RNG state (JSON)

A tensor table is a uint32 count followed by entries of
(uint32 name length, name bytes, uint8 dtype code, uint8 rank,
rank x uint32 extents, raw little-endian data).
"""
import collections
import io
import json
import struct

import numpy as np

from .utils import CheckpointError, ConfigError
from .optim import OptimizerState

MAGIC = b"MNAD"

VERSION = 1

DTYPE_CODES = {
    1 : np.dtype("<f4"),
    2 : np.dtype("<f8"),
    3 : np.dtype("<i8"),
    4 : np.dtype("<u8"),
}

class Checkpoint(object):
    """
    Everything needed to resume training or to evaluate

    :attr config: Dictionary echo of the model and training configuration
    :attr params: Ordered mapping from parameter name to array
    :attr bank: Memory items array [M, C]
    :attr optimizer: ``OptimizerState`` or None
    :attr rng_state: JSON-compatible state of the training random generator
    """

    def __init__(self, config, params, bank, optimizer=None, rng_state=None):
        self.config = config
        self.params = collections.OrderedDict(params)
        self.bank = np.asarray(bank)
        self.optimizer = optimizer
        self.rng_state = rng_state if rng_state is not None else {}

    @property
    def task(self):
        return self.config.get("train", {}).get("task", None)

def _dtype_code(dtype):
    for code, code_dtype in DTYPE_CODES.items():
        if np.dtype(dtype).newbyteorder("<") == code_dtype:
            return code
    raise CheckpointError("Unsupported dtype in checkpoint: %s" % dtype)

def _jsonable(value):
    if isinstance(value, dict):
        return dict((k, _jsonable(v)) for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return {"__array__" : value.tolist(), "dtype" : str(value.dtype)}
    if isinstance(value, np.generic):
        return value.item()
    return value

def _restore(value):
    if isinstance(value, dict):
        if "__array__" in value:
            return np.array(value["__array__"], dtype=value["dtype"])
        return dict((k, _restore(v)) for k, v in value.items())
    if isinstance(value, list):
        return [_restore(v) for v in value]
    return value

def _json_bytes(value):
    return json.dumps(_jsonable(value), sort_keys=True, separators=(",", ":")).encode("utf-8")

class _Writer(object):

    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt, *values):
        self.buf.write(struct.pack("<" + fmt, *values))

    def blob(self, data):
        self.pack("I", len(data))
        self.buf.write(data)

    def table(self, entries):
        self.pack("I", len(entries))
        for name, array in entries.items():
            array = np.asarray(array)
            self.blob(name.encode("utf-8"))
            self.pack("BB", _dtype_code(array.dtype), array.ndim)
            for extent in array.shape:
                self.pack("I", extent)
            self.buf.write(np.ascontiguousarray(array, dtype=DTYPE_CODES[_dtype_code(array.dtype)]).tobytes())

class _Reader(object):

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def read(self, size, what):
        if self.offset + size > len(self.data):
            raise CheckpointError("Checkpoint truncated while reading %s" % what, self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, what):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self.read(struct.calcsize(fmt), what))
        return values if len(values) > 1 else values[0]

    def blob(self, what):
        return self.read(self.unpack("I", what + " length"), what)

    def table(self, what):
        entries = collections.OrderedDict()
        for _ in range(self.unpack("I", what + " count")):
            name = self.blob(what + " entry name").decode("utf-8")
            code, rank = self.unpack("BB", "dtype of %s" % name)
            if code not in DTYPE_CODES:
                raise CheckpointError("Unknown dtype code %i for %s" % (code, name), self.offset - 2)
            shape = [self.unpack("I", "shape of %s" % name) for _ in range(rank)]
            dtype = DTYPE_CODES[code]
            size = int(np.prod(shape)) * dtype.itemsize
            entries[name] = np.frombuffer(self.read(size, "data of %s" % name), dtype=dtype).reshape(shape).copy()
        return entries

def checkpoint_bytes(ckpt):
    """
    Serialize a checkpoint
    """
    writer = _Writer()
    writer.buf.write(MAGIC)
    writer.pack("I", VERSION)
    writer.blob(_json_bytes(ckpt.config))
    writer.table(ckpt.params)
    writer.table(collections.OrderedDict([("memory.items", ckpt.bank)]))
    opt = ckpt.optimizer if ckpt.optimizer is not None else OptimizerState()
    writer.pack("Qdddd", opt.step, opt.beta1, opt.beta2, opt.eps, opt.lr)
    moments = collections.OrderedDict()
    for name in sorted(opt.m):
        moments["m." + name] = opt.m[name]
        moments["v." + name] = opt.v[name]
    writer.table(moments)
    writer.blob(_json_bytes(ckpt.rng_state))
    return writer.buf.getvalue()

def checkpoint_save(ckpt, path):
    """
    Write a checkpoint file
    """
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as f_handle:
        f_handle.write(data)

def checkpoint_parse(data):
    """
    Parse checkpoint bytes

    :raise: CheckpointError for bad magic, unsupported version or truncation
    """
    reader = _Reader(data)
    magic = reader.read(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError("Not a checkpoint file (magic %r)" % magic, 0)
    version = reader.unpack("I", "version")
    if version != VERSION:
        raise CheckpointError("Unsupported checkpoint version %i (expected %i)" % (version, VERSION), 4)
    try:
        config = json.loads(reader.blob("config").decode("utf-8"))
    except ValueError:
        raise CheckpointError("Config echo is not valid JSON", reader.offset)
    params = reader.table("parameter table")
    bank = reader.table("memory table").get("memory.items", None)
    if bank is None:
        raise CheckpointError("Memory items missing from checkpoint", reader.offset)
    opt = OptimizerState()
    opt.step, opt.beta1, opt.beta2, opt.eps, opt.lr = reader.unpack("Qdddd", "optimizer state")
    for name, values in reader.table("optimizer moments").items():
        kind, pname = name.split(".", 1)
        (opt.m if kind == "m" else opt.v)[pname] = values
    rng_state = _restore(json.loads(reader.blob("rng state").decode("utf-8")))
    if reader.offset != len(data):
        raise CheckpointError("Trailing data after checkpoint", reader.offset)
    return Checkpoint(config, params, bank, opt, rng_state)

def checkpoint_load(path, expect=None):
    """
    Read a checkpoint file

    :param expect: Optional mapping of training config keys (e.g. ``task``) to
                   required values
    :raise: ConfigError if the checkpoint was produced with a different configuration
    """
    with open(path, "rb") as f_handle:
        ckpt = checkpoint_parse(f_handle.read())
    train_config = ckpt.config.get("train", {})
    for key, value in (expect or {}).items():
        if value is not None and train_config.get(key, None) != value:
            raise ConfigError("Checkpoint %s was trained with %s=%s, expected %s"
                              % (path, key, train_config.get(key, None), value))
    return ckpt
