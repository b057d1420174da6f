"""
Tests of the encoder/decoder models
"""
import numpy as np
import pytest

from mnad import get_model_class
from mnad import tensor as T
from mnad.memory import MemoryBank
from mnad.models.tasks import ReconstructionModel, PredictionModel, MotionCueModel
from mnad.tensor import Tensor, Tape, finite_diff_check
from mnad.utils import ConfigError, DataError, ShapeError, precision, get_rng

TINY = dict(frame_size=[16, 16], feature_dims=[8, 8, 8], width_scale=0.25, query_channels=4)

def _frames(shape, seed=0):
    return get_rng(seed).uniform(-1, 1, size=shape)

def test_registry():
    assert(get_model_class("reconstruction") is ReconstructionModel)
    assert(get_model_class("prediction") is PredictionModel)
    assert(get_model_class("motion") is MotionCueModel)
    with pytest.raises(ConfigError):
        get_model_class("segmentation")

def test_task_defaults():
    recon = ReconstructionModel()
    assert(recon.input_window == 1 and recon.target_index == 0 and not recon.use_skip_connections)
    pred = PredictionModel()
    assert(pred.input_window == 4 and pred.target_index == 4 and pred.use_skip_connections)
    motion = MotionCueModel()
    assert(motion.input_window == 16 and motion.target_index == 8 and not motion.use_skip_connections)
    assert(PredictionModel(input_window=2).target_index == 2)

def test_query_map_shape_and_norm():
    model = ReconstructionModel()
    assert(model.query_size == [8, 8])
    queries, skips = model.encode(_frames((2, 1, 1, 64, 64)))
    assert(queries.shape == (2, 64, 8, 8))
    assert(np.allclose(np.linalg.norm(queries.data, axis=1), 1, atol=1e-5))
    assert(skips == [] or len(skips) == 2)

def test_forward_shapes_and_range():
    for model_class in (ReconstructionModel, PredictionModel):
        model = model_class(**TINY)
        frames = _frames((2, model.input_window, 1, 16, 16))
        result = model.forward(frames, MemoryBank.random(5, 4), training=True)
        assert(result.recon.shape == (2, 1, 16, 16))
        assert(np.all(np.abs(result.recon.data) <= 1))
        assert(result.read.shape == result.queries.shape)
        assert(result.match.weights.shape == (2, 4, 5))

def test_decoder_bottleneck_channels():
    model = ReconstructionModel(**TINY)
    assert(model.param("dec2.conv.weight").shape[1] == 2 * model.query_channels)

def test_decoder_channel_mismatch():
    model = ReconstructionModel(**TINY)
    queries, _ = model.encode(_frames((1, 1, 1, 16, 16)))
    with pytest.raises(ShapeError):
        model.decode(queries, Tensor(np.zeros((1, 3, 2, 2))))

def test_skip_features_required():
    model = PredictionModel(**TINY)
    queries, skips = model.encode(_frames((1, 4, 1, 16, 16)))
    assert(len(skips) == 2)
    with pytest.raises(ValueError):
        model.decode(queries, queries)

def test_memory_bypass():
    model = ReconstructionModel(**TINY)
    result = model.forward(_frames((1, 1, 1, 16, 16)), None)
    assert(result.match is None)
    assert(np.array_equal(result.read.data, result.queries.data))

def test_reconstruction_depends_on_encoder_only_through_bottleneck():
    model = ReconstructionModel(**TINY)
    queries, _ = model.encode(_frames((1, 1, 1, 16, 16), 1))
    read = Tensor(queries.data[:, :, ::-1].copy())
    out1 = model.decode(queries, read).data
    # Perturbing the first encoder stage changes nothing once the bottleneck is fixed
    model.param("enc0.conv1.weight").data += 1.0
    out2 = model.decode(queries, read).data
    assert(np.array_equal(out1, out2))

def test_invalid_configs():
    with pytest.raises(ConfigError):
        ReconstructionModel(frame_size=[60, 64])
    with pytest.raises(ConfigError):
        PredictionModel(input_window=4, target_index=2)
    with pytest.raises(ConfigError):
        ReconstructionModel(input_window=2, target_index=2)
    with pytest.raises(ConfigError):
        ReconstructionModel(feature_dims=[8, 8])

def test_window_shape_errors():
    model = PredictionModel(**TINY)
    with pytest.raises(DataError):
        model.encode(_frames((1, 3, 1, 16, 16)))
    with pytest.raises(DataError):
        model.encode(_frames((1, 4, 1, 16, 32)))

def test_windows():
    model = PredictionModel(**TINY)
    frames = _frames((7, 1, 16, 16))
    windows = list(model.windows(frames))
    assert(len(windows) == 3)
    inputs, target, idx = windows[-1]
    assert(idx == 6)
    assert(np.array_equal(inputs, frames[2:6]))
    assert(np.array_equal(target, frames[6]))
    motion = MotionCueModel(**TINY)
    assert([w[2] for w in motion.windows(_frames((17, 1, 16, 16)))] == [8, 9])

def test_init_deterministic():
    state1 = ReconstructionModel(seed=4, **TINY).state_dict()
    state2 = ReconstructionModel(seed=4, **TINY).state_dict()
    assert(all(np.array_equal(state1[name], state2[name]) for name in state1))
    state3 = ReconstructionModel(seed=5, **TINY).state_dict()
    assert(not np.array_equal(state1["enc0.conv1.weight"], state3["enc0.conv1.weight"]))

def test_state_dict_round_trip():
    model = ReconstructionModel(seed=1, **TINY)
    other = ReconstructionModel(seed=2, **TINY)
    other.load_state_dict(model.state_dict())
    frames = _frames((1, 1, 1, 16, 16))
    assert(np.array_equal(model.forward(frames).recon.data, other.forward(frames).recon.data))

def test_state_dict_mismatch():
    model = ReconstructionModel(**TINY)
    state = model.state_dict()
    state.pop("out.conv.bias")
    with pytest.raises(ConfigError):
        model.load_state_dict(state)
    state = model.state_dict()
    state["out.conv.bias"] = np.zeros(3)
    with pytest.raises(ConfigError):
        model.load_state_dict(state)

def test_buffers_not_trainable():
    model = ReconstructionModel(**TINY)
    names = list(model.trainable())
    assert("enc0.bn1.gamma" in names)
    assert("enc0.bn1.running_mean" not in names)

def test_encoder_gradients():
    with precision(64):
        model = ReconstructionModel(seed=3, **TINY)
        bank = MemoryBank.random(3, 4, seed=1)
        frames = _frames((2, 1, 1, 16, 16), 2)
        target = _frames((2, 1, 16, 16), 3)
        def loss(_point):
            recon = model.forward(frames, bank, training=True).recon
            return T.reduce_mean(T.norm(T.reshape(T.sub(recon, target), (2, -1)), axis=1))
        for name in ("enc0.conv1.weight", "enc2.conv2.bias", "dec0.upbn.gamma"):
            assert(finite_diff_check(loss, model.param(name)) < 1e-4)

def test_gradients_reach_encoder():
    model = ReconstructionModel(**TINY)
    frames = _frames((2, 1, 1, 16, 16))
    with Tape() as tape:
        recon = model.forward(frames, MemoryBank.random(3, 4), training=True).recon
        loss = T.reduce_mean(T.mul(recon, recon))
    tape.backward(np.ones(()), output=loss)
    assert(np.any(model.param("enc0.conv1.weight").grad != 0))
