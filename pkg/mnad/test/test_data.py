"""
Tests of clip generation, loading and preprocessing
"""
import os

import numpy as np
import pandas as pd
import pytest

from mnad import data
from mnad.data import Clip, SynthSpec
from mnad.utils import ConfigError, DataError, get_rng

def _write_frames(path, n_frames, start=0, shape=(8, 12)):
    os.makedirs(path)
    rng = get_rng(0)
    frames = []
    for idx in range(start, start + n_frames):
        frame = rng.integers(0, 256, size=shape).astype(np.uint8)
        data.write_pgm(os.path.join(path, "frame_%06d.pgm" % idx), frame)
        frames.append(frame)
    return frames

def test_pgm_round_trip(tmp_path):
    frame = get_rng(1).integers(0, 256, size=(7, 9)).astype(np.uint8)
    path = str(tmp_path / "frame.pgm")
    data.write_pgm(path, frame)
    assert(np.all(data.read_pgm(path) == frame))

def test_pgm_header_comments(tmp_path):
    path = str(tmp_path / "frame.pgm")
    with open(path, "wb") as f_handle:
        f_handle.write(b"P5\n# a comment\n2 1\n255\n\x00\xff")
    assert(list(data.read_pgm(path)[0]) == [0, 255])

def test_pgm_malformed(tmp_path):
    path = str(tmp_path / "frame.pgm")
    for content in (b"P6\n2 1\n255\n\x00\xff", b"P5\n2 1\n65535\n\x00\xff", b"P5\n2 2\n255\n\x00\xff", b"P5\n2"):
        with open(path, "wb") as f_handle:
            f_handle.write(content)
        with pytest.raises(DataError):
            data.read_pgm(path)

def test_preprocess_range_and_requantize():
    frame = np.arange(256, dtype=np.uint8).reshape(16, 16)
    pre = data.preprocess(frame)
    assert(pre.shape == (1, 16, 16))
    assert(pre.min() == -1 and pre.max() == 1)
    assert(np.abs(data.to_uint8(pre)[..., 0].astype(int) - frame.astype(int)).max() <= 1)

def test_preprocess_resize():
    frame = np.full((32, 48), 128, dtype=np.uint8)
    pre = data.preprocess(frame, target_size=(16, 16))
    assert(pre.shape == (1, 16, 16))
    assert(np.allclose(pre, 128 * 2.0 / 255 - 1, atol=1e-6))

def test_preprocess_not_8bit():
    with pytest.raises(DataError):
        data.preprocess(np.full((4, 4), 300))

def test_synthetic_deterministic():
    spec = SynthSpec(split="test", canvas=[32, 32], anomalies=["vertical", "speed"], seed=7)
    clips1 = data.gen_synthetic(spec, 3, 20)
    clips2 = data.gen_synthetic(spec, 3, 20)
    for clip1, clip2 in zip(clips1, clips2):
        assert(np.array_equal(clip1.frames, clip2.frames))
        assert(np.array_equal(clip1.labels, clip2.labels))

def test_synthetic_clip_independent_of_count():
    spec = SynthSpec(canvas=[32, 32], seed=3)
    assert(np.array_equal(data.gen_synthetic(spec, 1, 10)[0].frames, data.gen_synthetic(spec, 4, 10)[0].frames))

def test_synthetic_range_and_shape():
    clip = data.gen_synthetic(SynthSpec(canvas=[32, 48]), 1, 5)[0]
    assert(clip.frames.shape == (5, 1, 32, 48))
    assert(clip.frames.min() >= -1 and clip.frames.max() <= 1)
    assert(clip.labels.sum() == 0)

def test_synthetic_onset_labels():
    spec = SynthSpec(split="test", canvas=[32, 32], anomalies=["disc"], onset=5, duration=4, noise=0)
    clip = data.gen_synthetic(spec, 1, 12)[0]
    assert(list(clip.labels) == [0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0])
    normal = data.gen_synthetic(SynthSpec(split="test", canvas=[32, 32], noise=0), 1, 12)[0]
    # The anomaly only changes the labelled frames
    assert(np.array_equal(clip.frames[:4], normal.frames[:4]))
    assert(not np.array_equal(clip.frames[4], normal.frames[4]))

def test_synthetic_anomalies_only_in_test():
    with pytest.raises(ConfigError):
        SynthSpec(split="train", anomalies=["vertical"])
    with pytest.raises(ConfigError):
        SynthSpec(split="test", anomalies=["teleport"])

def test_synthetic_clip_too_short():
    with pytest.raises(ConfigError):
        data.gen_synthetic(SynthSpec(), 1, 3, min_len=4)

def test_load_frame_dir(tmp_path):
    path = str(tmp_path / "video")
    frames = _write_frames(path, 5, start=1)
    pd.DataFrame({"frame_index" : [1, 2, 3, 4, 5], "label" : [0, 0, 1, 1, 0]}).to_csv(
        os.path.join(path, "labels.csv"), index=False)
    clip = data.load_frame_dir(path)
    assert(len(clip) == 5)
    assert(clip.video_id == "video")
    assert(list(clip.indices) == [1, 2, 3, 4, 5])
    assert(list(clip.labels) == [0, 0, 1, 1, 0])
    assert(clip.labelled)
    assert(np.abs(data.to_uint8(clip.frames[2])[..., 0].astype(int) - frames[2].astype(int)).max() <= 1)

def test_load_frame_dir_missing_labels(tmp_path):
    path = str(tmp_path / "video")
    _write_frames(path, 3)
    clip = data.load_frame_dir(path)
    assert(list(clip.labels) == [0, 0, 0])
    assert(not clip.labelled)

def test_load_frame_dir_partial_labels(tmp_path):
    path = str(tmp_path / "video")
    _write_frames(path, 4)
    pd.DataFrame({"frame_index" : [2], "label" : [1]}).to_csv(os.path.join(path, "labels.csv"), index=False)
    assert(list(data.load_frame_dir(path).labels) == [0, 0, 1, 0])

def test_load_frame_dir_label_out_of_range(tmp_path):
    path = str(tmp_path / "video")
    _write_frames(path, 3)
    pd.DataFrame({"frame_index" : [7], "label" : [1]}).to_csv(os.path.join(path, "labels.csv"), index=False)
    with pytest.raises(DataError):
        data.load_frame_dir(path)

def test_load_frame_dir_gap(tmp_path):
    path = str(tmp_path / "video")
    _write_frames(path, 3)
    os.remove(os.path.join(path, "frame_000001.pgm"))
    with pytest.raises(DataError):
        data.load_frame_dir(path)

def test_load_frame_dir_empty(tmp_path):
    with pytest.raises(DataError):
        data.load_frame_dir(str(tmp_path))

def test_dataset_round_trip(tmp_path):
    spec = SynthSpec(split="test", canvas=[16, 16], object_size=4, anomalies=["speed"], seed=2)
    clips = data.gen_synthetic(spec, 2, 6)
    data.write_dataset(clips, str(tmp_path), "test")
    loaded = data.load_dataset(str(tmp_path), "test")
    assert([c.video_id for c in loaded] == ["000", "001"])
    for clip, reloaded in zip(clips, loaded):
        assert(np.array_equal(clip.labels, reloaded.labels))
        assert(np.abs(clip.frames - reloaded.frames).max() < 1e-6)

def test_load_dataset_passthrough():
    clips = [Clip(np.zeros((2, 1, 8, 8)))]
    assert(data.load_dataset(clips) == clips)

def test_clip_label_count():
    with pytest.raises(DataError):
        Clip(np.zeros((3, 1, 4, 4)), labels=[0, 1])
