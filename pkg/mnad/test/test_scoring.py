"""
Tests of abnormality scores and AUC
"""
import itertools
import math
import os

import numpy as np
import pytest

from mnad import scoring
from mnad.scoring import ScoreTrace, RunningMinMax, TRACE_COLUMNS
from mnad.utils import ShapeError, DataError, get_rng

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")

def _oracle_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))

def _oracle_psnr(recon, frame):
    mse = sum((a - b) ** 2 for a, b in zip(recon.flatten(), frame.flatten())) / recon.size
    return 10 * math.log10(1.0 / mse)

def _oracle_minmax(values):
    low, high = min(values), max(values)
    return [0.0 if high == low else (v - low) / (high - low) for v in values]

def test_psnr_matches_oracle():
    for seed in range(100):
        rng = get_rng(seed)
        recon, frame = rng.uniform(size=(2, 1, 6, 5))
        assert(abs(scoring.psnr(recon, frame).db - _oracle_psnr(recon, frame)) < 1e-9)

def test_psnr_identical_frames_clamped():
    frame = np.full((1, 4, 4), 0.5)
    result = scoring.psnr(frame, frame)
    assert(result.db == 100.0 and result.clamped)

def test_psnr_decreases_with_error():
    frame = get_rng(0).uniform(size=(1, 8, 8))
    noise = get_rng(1).normal(size=frame.shape)
    values = [scoring.psnr(frame + scale * noise, frame).db for scale in (0.01, 0.02, 0.05, 0.1)]
    assert(all(a > b for a, b in zip(values[:-1], values[1:])))

def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        scoring.psnr(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))

def test_minmax_examples():
    assert(np.allclose(scoring.minmax_normalize([1, 2, 3]), [0, 0.5, 1]))
    assert(np.all(scoring.minmax_normalize([4, 4, 4]) == 0))
    assert(np.all(scoring.minmax_normalize([7]) == 0))
    with pytest.raises(ValueError):
        scoring.minmax_normalize([])

def test_minmax_scoped():
    values = [1, 3, 10, 20, 5]
    scopes = ["a", "a", "b", "b", "c"]
    assert(np.allclose(scoring.normalize_scoped(values, scopes), [0, 1, 0, 1, 0]))

def test_distance_score_matches_oracle():
    for seed in range(100):
        rng = get_rng(seed)
        queries = rng.normal(size=(6, 4))
        queries /= np.linalg.norm(queries, axis=1, keepdims=True)
        items = rng.normal(size=(3, 4))
        items /= np.linalg.norm(items, axis=1, keepdims=True)
        expected = np.mean([min(np.linalg.norm(q - p) for p in items) for q in queries])
        assert(abs(scoring.distance_score(queries, items) - expected) < 1e-9)

def test_fuse_example():
    assert(np.isclose(scoring.fuse(0.2, 0.4, 0.7), 0.68))

def test_abnormality_score_matches_oracle():
    for seed in range(100):
        rng = get_rng(seed)
        psnrs, dists = rng.uniform(10, 40, size=8), rng.uniform(0, 1, size=8)
        lam = rng.uniform()
        expected = [lam * (1 - gp) + (1 - lam) * gd
                    for gp, gd in zip(_oracle_minmax(list(psnrs)), _oracle_minmax(list(dists)))]
        assert(np.allclose(scoring.abnormality_score(psnrs, dists, lam), expected, atol=1e-9))

def test_abnormality_score_range_and_direction():
    rng = get_rng(3)
    psnrs, dists = rng.uniform(10, 40, size=50), rng.uniform(0, 1, size=50)
    scores = scoring.abnormality_score(psnrs, dists, 0.6)
    assert(np.all(scores >= 0) and np.all(scores <= 1))
    worst = np.argmin(psnrs)
    only_psnr = scoring.abnormality_score(psnrs, dists, 1.0)
    assert(np.isclose(only_psnr[worst], 1))

def test_abnormality_score_single_frame():
    assert(np.all(scoring.abnormality_score([30.0], [0.4], 0.7) == 0))

def test_abnormality_score_invalid():
    with pytest.raises(ShapeError):
        scoring.abnormality_score([1, 2], [1], 0.5)
    with pytest.raises(ValueError):
        scoring.abnormality_score([1, 2], [1, 2], 1.5)

def test_roc_auc_matches_oracle():
    for seed in range(100):
        rng = get_rng(seed)
        n = int(rng.integers(4, 30))
        # Coarse scores so that ties occur
        scores = np.round(rng.uniform(size=n), 1)
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        assert(abs(scoring.roc_auc(scores, labels) - _oracle_auc(scores, labels)) < 1e-9)

def test_roc_auc_examples():
    assert(scoring.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0)
    assert(scoring.roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0)
    assert(scoring.roc_auc([0.5, 0.5], [0, 1]) == 0.5)

def test_roc_auc_monotone_invariance():
    rng = get_rng(4)
    scores = rng.uniform(size=40)
    labels = rng.integers(0, 2, size=40)
    labels[:2] = [0, 1]
    assert(np.isclose(scoring.roc_auc(scores, labels), scoring.roc_auc(np.exp(3 * scores) + 2, labels)))

def test_roc_auc_single_class():
    with pytest.raises(ValueError):
        scoring.roc_auc([0.1, 0.2], [0, 0])

def test_running_minmax():
    norm = RunningMinMax()
    assert(norm(5.0) == 0)
    assert(norm(7.0) == 1)
    assert(norm(6.0) == 0.5)
    assert(norm(3.0) == 0)

def _trace():
    trace = ScoreTrace()
    for video, psnrs in (("000", [30, 20, 25]), ("001", [40, 35])):
        for idx, value in enumerate(psnrs):
            trace.add(video, idx, value, 0.1 * idx, label=int(value < 25), gate_flag="updated")
    return trace

def test_trace_per_video():
    frame = _trace().finalize(1.0, "per-video")
    assert(list(frame.columns) == TRACE_COLUMNS)
    assert(np.allclose(frame["g_psnr"], [1, 0, 0.5, 1, 0]))
    assert(np.allclose(frame["score"], [0, 1, 0.5, 0, 1]))

def test_trace_global():
    frame = _trace().finalize(1.0, "global")
    assert(np.allclose(frame["g_psnr"], [0.5, 0, 0.25, 1, 0.75]))

def test_trace_score_consistent_with_columns():
    trace = _trace()
    # A single frame video and a constant video have degenerate scopes
    trace.add("002", 0, 28.0, 0.3, label=0)
    for idx in range(3):
        trace.add("003", idx, 33.0, 0.2, label=0)
    frame = trace.finalize(0.7)
    assert(np.allclose(frame["score"], 0.7 * (1 - frame["g_psnr"]) + 0.3 * frame["g_dist"]))
    degenerate = frame["video_id"].isin(["002", "003"])
    assert(np.all(frame["g_psnr"][degenerate] == 1))
    assert(np.all(frame["score"][degenerate] == 0))

def test_normalized_psnr():
    assert(np.allclose(scoring.normalized_psnr([30, 20, 25]), [1, 0, 0.5]))
    assert(np.all(scoring.normalized_psnr([30.0]) == 1))

def test_trace_auc_and_labels():
    trace = _trace()
    trace.finalize(1.0)
    assert(trace.has_both_classes())
    # One abnormal frame, tied with the worst normal frame of the other video
    assert(trace.auc() == 0.875)
    assert(trace.gate_skips() == 0)

def test_trace_empty():
    with pytest.raises(DataError):
        ScoreTrace().finalize(0.7)

def test_trace_unlabelled_csv(tmp_path):
    trace = ScoreTrace()
    trace.add("000", 0, 30.0, 0.1)
    trace.add("000", 1, 20.0, 0.2)
    trace.finalize(0.7)
    assert(not trace.has_both_classes())
    path = str(tmp_path / "trace.csv")
    trace.to_csv(path)
    with open(path) as f_handle:
        lines = f_handle.read().splitlines()
    with open(os.path.join(GOLDEN_DIR, "trace_header.txt")) as f_handle:
        assert(lines[0] == f_handle.read().strip())
    assert(lines[1].split(",")[7] == "")
