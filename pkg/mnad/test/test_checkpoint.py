"""
Tests of the binary checkpoint format
"""
import collections

import numpy as np
import pytest

from mnad.checkpoint import Checkpoint, checkpoint_bytes, checkpoint_parse, checkpoint_save, checkpoint_load
from mnad.optim import OptimizerState
from mnad.utils import CheckpointError, ConfigError, get_rng

def _checkpoint():
    rng = get_rng(0)
    params = collections.OrderedDict([
        ("enc0.conv1.weight", rng.normal(size=(2, 1, 3, 3)).astype(np.float32)),
        ("enc0.bn1.running_mean", np.zeros(2, dtype=np.float32)),
    ])
    opt = OptimizerState(lr=2e-4)
    opt.step = 12
    opt.m["enc0.conv1.weight"] = rng.normal(size=(2, 1, 3, 3)).astype(np.float32)
    opt.v["enc0.conv1.weight"] = rng.uniform(size=(2, 1, 3, 3)).astype(np.float32)
    config = {"model" : {"frame_size" : [16, 16]}, "train" : {"task" : "prediction", "gamma" : 0.01}}
    return Checkpoint(config, params, rng.normal(size=(3, 4)).astype(np.float32), opt, rng.bit_generator.state)

def test_round_trip_byte_identical(tmp_path):
    path = str(tmp_path / "checkpoint.mnad")
    ckpt = _checkpoint()
    checkpoint_save(ckpt, path)
    loaded = checkpoint_load(path)
    assert(checkpoint_bytes(loaded) == checkpoint_bytes(ckpt))
    assert(loaded.task == "prediction")
    assert(list(loaded.params) == list(ckpt.params))
    assert(np.array_equal(loaded.bank, ckpt.bank))
    assert(loaded.optimizer.step == 12 and loaded.optimizer.lr == 2e-4)
    assert(np.array_equal(loaded.optimizer.v["enc0.conv1.weight"], ckpt.optimizer.v["enc0.conv1.weight"]))

def test_rng_state_restored():
    ckpt = _checkpoint()
    loaded = checkpoint_parse(checkpoint_bytes(ckpt))
    rng1, rng2 = get_rng(0), get_rng(0)
    rng1.bit_generator.state = ckpt.rng_state
    rng2.bit_generator.state = loaded.rng_state
    assert(np.array_equal(rng1.uniform(size=5), rng2.uniform(size=5)))

def test_truncated():
    data = checkpoint_bytes(_checkpoint())
    for size in (2, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(CheckpointError) as exc_info:
            checkpoint_parse(data[:size])
        assert(exc_info.value.offset is not None and exc_info.value.offset <= size)

def test_bad_magic():
    data = checkpoint_bytes(_checkpoint())
    with pytest.raises(CheckpointError) as exc_info:
        checkpoint_parse(b"XXXX" + data[4:])
    assert(exc_info.value.offset == 0)

def test_bad_version():
    data = checkpoint_bytes(_checkpoint())
    with pytest.raises(CheckpointError):
        checkpoint_parse(data[:4] + b"\x07\x00\x00\x00" + data[8:])

def test_trailing_data():
    with pytest.raises(CheckpointError):
        checkpoint_parse(checkpoint_bytes(_checkpoint()) + b"\x00")

def test_expected_task(tmp_path):
    path = str(tmp_path / "checkpoint.mnad")
    checkpoint_save(_checkpoint(), path)
    assert(checkpoint_load(path, expect={"task" : "prediction"}).task == "prediction")
    assert(checkpoint_load(path, expect={"task" : None}).task == "prediction")
    with pytest.raises(ConfigError):
        checkpoint_load(path, expect={"task" : "reconstruction"})
