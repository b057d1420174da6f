"""
MNAD - Video clips: synthetic generation, frame directories and preprocessing

Frames are stored as float arrays [T, C, H, W] with values in [-1, 1].
On disk a dataset has the layout::

    <root>/<split>/<video_id>/frame_%06d.pgm
    <root>/<split>/<video_id>/labels.csv      (optional, columns frame_index,label)
"""
import os
import logging
import re
import glob

import six
import numpy as np
import pandas as pd
from scipy import ndimage

from .utils import LogBase, ValueList, ConfigError, DataError, get_rng, get_dtype
from .model import ModelOption, apply_options

ANOMALY_TYPES = ("vertical", "speed", "disc")

SPLITS = {"train" : 0, "val" : 1, "test" : 2}

FRAME_PATTERN = re.compile(r"^frame_(\d{6})\.pgm$")

LABELS_FILE = "labels.csv"

def preprocess(frame, target_size=None):
    """
    Resize an 8-bit frame and map it to [-1, 1]

    :param frame: Array [H, W] or [H, W, C] of 8-bit gray levels
    :param target_size: Optional (height, width). Bilinear interpolation is used
    :return: Float array [C, H, W] with values in [-1, 1]
    """
    frame = np.asarray(frame)
    if frame.size and (frame.min() < 0 or frame.max() > 255):
        raise DataError("Source frame is not 8-bit: values in [%s, %s]" % (frame.min(), frame.max()))
    frame = frame.astype(np.float64)
    if frame.ndim == 2:
        frame = frame[..., np.newaxis]
    if frame.ndim != 3:
        raise DataError("Expected frame of shape [H, W] or [H, W, C], got %s" % list(frame.shape))
    if target_size is not None:
        target_size = list(target_size)
        if len(target_size) != 2 or min(target_size) <= 0:
            raise ValueError("Target size must be two positive extents: %s" % target_size)
        if list(frame.shape[:2]) != target_size:
            zoom = [float(target_size[0]) / frame.shape[0], float(target_size[1]) / frame.shape[1], 1.0]
            frame = ndimage.zoom(frame, zoom, order=1, mode="nearest")
    return (frame.transpose(2, 0, 1) * 2.0 / 255.0 - 1.0).astype(get_dtype())

def to_uint8(frame):
    """
    Map a [C, H, W] frame in [-1, 1] back to 8-bit gray levels [H, W, C]
    """
    levels = np.round((np.asarray(frame, dtype=np.float64) + 1.0) * 255.0 / 2.0)
    return np.clip(levels, 0, 255).astype(np.uint8).transpose(1, 2, 0)

def read_pgm(path):
    """
    Read a binary grayscale (P5) PGM file with 8-bit depth

    :return: uint8 array [H, W]
    """
    with open(path, "rb") as f_handle:
        content = f_handle.read()

    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(content) and content[pos:pos+1].isspace():
            pos += 1
        if content[pos:pos+1] == b"#":
            while pos < len(content) and content[pos:pos+1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(content) and not content[pos:pos+1].isspace():
            pos += 1
        if start == pos:
            raise DataError("Malformed PGM header in %s: truncated" % path)
        tokens.append(content[start:pos])
    if tokens[0] != b"P5":
        raise DataError("Malformed PGM header in %s: magic %r is not P5" % (path, tokens[0]))
    try:
        width, height, maxval = [int(t) for t in tokens[1:]]
    except ValueError:
        raise DataError("Malformed PGM header in %s: non-numeric size or depth" % path)
    if width <= 0 or height <= 0 or not 0 < maxval <= 255:
        raise DataError("Malformed PGM header in %s: size %ix%i, maximum value %i (8-bit only)"
                        % (path, width, height, maxval))
    pos += 1
    data = content[pos:pos + width*height]
    if len(data) != width*height:
        raise DataError("PGM file %s is truncated: %i of %i pixels" % (path, len(data), width*height))
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()

def write_pgm(path, frame):
    """
    Write an 8-bit [H, W] array as a binary (P5) PGM file
    """
    frame = np.asarray(frame, dtype=np.uint8)
    if frame.ndim == 3 and frame.shape[2] == 1:
        frame = frame[..., 0]
    if frame.ndim != 2:
        raise DataError("PGM frames must be single channel, got shape %s" % list(frame.shape))
    with open(path, "wb") as f_handle:
        f_handle.write(b"P5\n%i %i\n255\n" % (frame.shape[1], frame.shape[0]))
        f_handle.write(frame.tobytes())

class Clip(LogBase):
    """
    An ordered sequence of frames from one video

    :attr frames: Array [T, C, H, W] with values in [-1, 1]
    :attr labels: Array [T] of 0 (normal) / 1 (abnormal)
    :attr video_id: Video identifier
    :attr indices: Frame number of each frame (file numbering for frames read from disk)
    :attr source: ``synthetic`` or ``disk``
    :attr labelled: Whether the labels are ground truth (False when defaulted)
    """

    def __init__(self, frames, labels=None, video_id="0", indices=None, source="synthetic", labelled=True):
        LogBase.__init__(self)
        self.frames = np.asarray(frames)
        if self.frames.ndim != 4:
            raise DataError("Clip frames must be [T, C, H, W], got %s" % list(self.frames.shape))
        n_frames = len(self.frames)
        if labels is None:
            labels, labelled = np.zeros(n_frames, dtype=int), False
        self.labels = np.asarray(labels, dtype=int)
        if self.labels.shape != (n_frames,):
            raise DataError("Clip %s has %i frames but %i labels" % (video_id, n_frames, self.labels.size))
        self.indices = np.arange(n_frames) if indices is None else np.asarray(indices, dtype=int)
        self.video_id = str(video_id)
        self.source = source
        self.labelled = labelled

    def __len__(self):
        return len(self.frames)

    @property
    def frame_shape(self):
        return list(self.frames.shape[1:])

    def __str__(self):
        return "Clip %s: %i frames of %s, %i abnormal (%s)" % (
            self.video_id, len(self), self.frame_shape, int(self.labels.sum()), self.source)

class SynthSpec(LogBase):
    """
    Description of a synthetic video set

    Normal motion is squares moving horizontally at constant velocity,
    wrapping around the canvas. Abnormal clips additionally contain one
    object that is visible for ``duration`` frames from ``onset`` and is
    either a square moving vertically, a square moving three times faster,
    or a disc.
    """
    OPTIONS = [
        ModelOption("split", "Dataset split (train, val or test)", default="train"),
        ModelOption("canvas", "Frame height and width", type=ValueList(int), default=[64, 64]),
        ModelOption("n_objects", "Number of normally moving objects", type=int, default=2),
        ModelOption("object_size", "Object size in pixels", type=int, default=10),
        ModelOption("speed", "Normal object speed in pixels per frame", type=float, default=2.0),
        ModelOption("anomalies", "Anomaly types (vertical, speed, disc)", type=ValueList(str), default=[]),
        ModelOption("onset", "Frame number (from 1) at which the anomaly appears, random if not given",
                    type=int, default=None),
        ModelOption("duration", "Number of frames the anomaly is visible for", type=int, default=10),
        ModelOption("noise", "Standard deviation of pixel noise in gray levels", type=float, default=2.0),
        ModelOption("background", "Background gray level", type=int, default=40),
        ModelOption("foreground", "Object gray level", type=int, default=200),
        ModelOption("seed", "Random seed", type=int, default=0),
    ]

    def __init__(self, **kwargs):
        LogBase.__init__(self)
        apply_options(self, self.OPTIONS, {}, kwargs)
        self.canvas = list(self.canvas)
        self.anomalies = [a for a in self.anomalies if a]
        if self.split not in SPLITS:
            raise ConfigError("Unknown split: %s (expected one of %s)" % (self.split, ", ".join(SPLITS)))
        unknown = [a for a in self.anomalies if a not in ANOMALY_TYPES]
        if unknown:
            raise ConfigError("Unknown anomaly types: %s (expected %s)" % (unknown, ", ".join(ANOMALY_TYPES)))
        if self.anomalies and self.split != "test":
            raise ConfigError("Anomalies requested for the %s split - only test data may contain anomalies"
                              % self.split)
        if len(self.canvas) != 2 or min(self.canvas) < self.object_size or self.object_size < 1:
            raise ConfigError("Canvas %s cannot hold objects of size %i" % (self.canvas, self.object_size))
        if self.duration < 1:
            raise ConfigError("Anomaly duration must be at least one frame")

    def log_config(self, log=None):
        if log is None:
            log = self.log
        for option in self.OPTIONS:
            log.info(" - %s: %s", option.desc, str(getattr(self, option.attr_name)))

def _square_mask(grid_y, grid_x, y, x, size, height, width):
    return ((grid_y - int(round(y))) % height < size) & ((grid_x - int(round(x))) % width < size)

def _disc_mask(grid_y, grid_x, y, x, size, height, width):
    radius = size / 2.0
    cy, cx = y + radius, x + radius
    dy = (grid_y - cy + height / 2.0) % height - height / 2.0
    dx = (grid_x - cx + width / 2.0) % width - width / 2.0
    return dy**2 + dx**2 <= radius**2

def _gen_clip(spec, clip_idx, clip_len):
    rng = get_rng(spec.seed, SPLITS[spec.split], clip_idx)
    height, width = spec.canvas
    size = spec.object_size
    grid_y, grid_x = np.mgrid[0:height, 0:width]

    objects = []
    for _ in range(spec.n_objects):
        y = rng.integers(0, height - size + 1)
        x = rng.uniform(0, width)
        vx = spec.speed * rng.choice([-1.0, 1.0])
        objects.append((y, x, vx))

    labels = np.zeros(clip_len, dtype=int)
    anomaly = None
    if spec.anomalies:
        kind = spec.anomalies[rng.integers(0, len(spec.anomalies))]
        if spec.onset is not None:
            start = spec.onset - 1
        else:
            start = int(rng.integers(0, max(clip_len - spec.duration, 0) + 1))
        start = max(start, 0)
        stop = min(start + spec.duration, clip_len)
        labels[start:stop] = 1
        y, x = rng.uniform(0, height - size), rng.uniform(0, width)
        direction = rng.choice([-1.0, 1.0])
        anomaly = (kind, start, stop, y, x, direction)

    frames = np.empty((clip_len, height, width), dtype=np.float64)
    for t in range(clip_len):
        mask = np.zeros((height, width), dtype=bool)
        for y, x, vx in objects:
            mask |= _square_mask(grid_y, grid_x, y, x + vx*t, size, height, width)
        if anomaly is not None and anomaly[1] <= t < anomaly[2]:
            kind, start, _, y, x, direction = anomaly
            steps = t - start
            if kind == "vertical":
                mask |= _square_mask(grid_y, grid_x, y + direction*spec.speed*steps, x, size, height, width)
            elif kind == "speed":
                mask |= _square_mask(grid_y, grid_x, y, x + 3*direction*spec.speed*steps, size, height, width)
            else:
                mask |= _disc_mask(grid_y, grid_x, y, x + direction*spec.speed*steps, size, height, width)
        frames[t] = np.where(mask, spec.foreground, spec.background)

    if spec.noise > 0:
        frames += rng.normal(0, spec.noise, size=frames.shape)
    frames = np.clip(np.round(frames), 0, 255)
    frames = np.stack([preprocess(f) for f in frames.astype(np.uint8)])
    return Clip(frames, labels, video_id="%03d" % clip_idx, source="synthetic")

def gen_synthetic(spec, n_clips, clip_len, min_len=1):
    """
    Generate synthetic clips

    Each clip has its own random stream derived from (seed, split, clip number)
    so the output does not depend on generation order.

    :param spec: ``SynthSpec``
    :param n_clips: Number of clips
    :param clip_len: Frames per clip
    :param min_len: Minimum clip length, e.g. the model's window span
    :return: List of ``Clip``
    """
    if clip_len < min_len:
        raise ConfigError("Clip length %i is shorter than the required %i frames" % (clip_len, min_len))
    if n_clips < 1:
        raise ConfigError("Number of clips must be positive")
    return [_gen_clip(spec, idx, clip_len) for idx in range(n_clips)]

def _read_labels(path, indices, log):
    table = pd.read_csv(path)
    if list(table.columns[:2]) != ["frame_index", "label"]:
        raise DataError("Labels file %s must have columns frame_index,label" % path)
    known = set(int(i) for i in indices)
    labels = dict((int(i), 0) for i in indices)
    for frame_index, label in zip(table["frame_index"], table["label"]):
        if int(frame_index) not in known:
            raise DataError("Label for frame %i in %s is out of range [%i, %i]"
                            % (frame_index, path, min(known), max(known)))
        if label not in (0, 1):
            raise DataError("Label for frame %i in %s must be 0 or 1, got %s" % (frame_index, path, label))
        labels[int(frame_index)] = int(label)
    missing = len(known) - len(set(int(i) for i in table["frame_index"]))
    if missing > 0:
        log.warning("%i frames have no label in %s - assuming normal", missing, path)
    return np.array([labels[int(i)] for i in indices], dtype=int)

def load_frame_dir(path, labels_path=None, target_size=None, video_id=None):
    """
    Load a directory of ``frame_%06d.pgm`` files as a clip

    :param path: Directory path
    :param labels_path: Optional labels CSV. Defaults to ``labels.csv`` in the
                        directory if present
    :param target_size: Optional (height, width) to resize frames to
    :param video_id: Identifier - defaults to the directory name
    :return: ``Clip``
    """
    log = logging.getLogger(__name__)
    if not os.path.isdir(path):
        raise DataError("Frame directory not found: %s" % path)
    found = {}
    for fname in os.listdir(path):
        match = FRAME_PATTERN.match(fname)
        if match:
            found[int(match.group(1))] = os.path.join(path, fname)
    if not found:
        raise DataError("No frame_%%06d.pgm files found in %s" % path)
    first = min(found)
    indices = list(range(first, first + len(found)))
    for idx in indices:
        if idx not in found:
            raise DataError("Frame %i is missing from %s (frames must be numbered contiguously)" % (idx, path))

    frames = np.stack([preprocess(read_pgm(found[idx]), target_size) for idx in indices])

    if labels_path is None and os.path.exists(os.path.join(path, LABELS_FILE)):
        labels_path = os.path.join(path, LABELS_FILE)
    if labels_path is None:
        log.warning("No labels for %s - assuming all %i frames are normal", path, len(indices))
        labels, labelled = None, False
    else:
        labels, labelled = _read_labels(labels_path, indices, log), True

    if video_id is None:
        video_id = os.path.basename(os.path.normpath(path))
    return Clip(frames, labels, video_id=video_id, indices=indices, source="disk", labelled=labelled)

def write_clip(clip, path):
    """
    Write a clip as a frame directory with its labels
    """
    if not os.path.isdir(path):
        os.makedirs(path)
    for idx, frame in zip(clip.indices, clip.frames):
        write_pgm(os.path.join(path, "frame_%06d.pgm" % idx), to_uint8(frame))
    pd.DataFrame({"frame_index" : clip.indices, "label" : clip.labels}).to_csv(
        os.path.join(path, LABELS_FILE), index=False)

def write_dataset(clips, root, split):
    """
    Materialize clips in the dataset directory layout
    """
    for clip in clips:
        write_clip(clip, os.path.join(root, split, clip.video_id))

def load_dataset(data, split=None, target_size=None):
    """
    Load clips

    :param data: Dataset root directory (with ``split``), a single frame directory,
                 or a sequence of ``Clip`` objects which is returned unchanged
    :return: List of ``Clip`` ordered by video id
    """
    if not isinstance(data, six.string_types):
        return list(data)
    root = os.path.join(data, split) if split else data
    if not os.path.isdir(root):
        raise DataError("Dataset directory not found: %s" % root)
    if glob.glob(os.path.join(root, "frame_*.pgm")):
        return [load_frame_dir(root, target_size=target_size)]
    videos = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not videos:
        raise DataError("No videos found in %s" % root)
    return [load_frame_dir(os.path.join(root, video), target_size=target_size) for video in videos]
