"""
Scale tests on the default 64x64 synthetic set. These train several models
and only run with --runslow
"""
import time

import numpy as np
import pytest

from mnad import data
from mnad.data import SynthSpec
from mnad.memory import MemoryBank
from mnad.trainer import TrainConfig, EvalConfig, train, evaluate, score_stream

pytestmark = pytest.mark.slow

EPOCHS = 20

def _train_clips():
    return data.gen_synthetic(SynthSpec(seed=0), 8, 32)

def _test_clips():
    return data.gen_synthetic(SynthSpec(split="test", anomalies=["vertical", "speed", "disc"],
                                        duration=10, seed=0), 8, 32)

def _anomaly_dense_clips():
    normal = data.gen_synthetic(SynthSpec(split="test", seed=5), 2, 32)
    dense = data.gen_synthetic(SynthSpec(split="test", anomalies=["vertical", "speed", "disc"],
                                         duration=24, seed=5), 4, 32)
    for idx, clip in enumerate(normal + dense):
        clip.video_id = "%03d" % idx
    return normal + dense

@pytest.fixture(scope="module")
def checkpoints():
    clips = _train_clips()
    runs = {}
    for name, options in (("full", {}), ("no_separate", {"separate_weight" : 0.0}),
                          ("no_memory", {"use_memory" : False})):
        runs[name], _ = train(TrainConfig(epochs=EPOCHS, seed=0, **options), clips)
    return runs

def test_memory_effect(checkpoints):
    clips = _test_clips()
    with_memory = evaluate(checkpoints["full"], clips).auc
    without_memory = evaluate(checkpoints["no_memory"], clips).auc
    assert(with_memory >= 0.85)
    assert(with_memory >= without_memory)

def test_separateness_effect(checkpoints):
    full, twin = checkpoints["full"], checkpoints["no_separate"]
    assert(MemoryBank(full.bank).min_pairwise_distance() > MemoryBank(twin.bank).min_pairwise_distance())
    clips = _test_clips()
    assert(evaluate(full, clips).auc >= evaluate(twin, clips).auc)

def test_gate_passes_normal_frames(checkpoints):
    frame = evaluate(checkpoints["full"], _anomaly_dense_clips()).trace.frame
    skipped = (frame["gate_flag"] == "abnormal-skipped").values
    labels = frame["label"].astype(int).values
    assert((~skipped[labels == 0]).sum() > 0)
    assert(skipped[labels == 1].mean() > skipped[labels == 0].mean())

def test_gate_effect(checkpoints):
    clips = _anomaly_dense_clips()
    gated = evaluate(checkpoints["full"], clips)
    ungated = evaluate(checkpoints["full"], clips, EvalConfig(gate=False))
    assert(0 < gated.trace.gate_skips() < len(gated.trace))
    assert(gated.auc >= ungated.auc)

def test_ablation_toggles_change_only_their_path(checkpoints):
    clips = _test_clips()
    base = evaluate(checkpoints["full"], clips).trace.frame
    psnr_only = evaluate(checkpoints["full"], clips, EvalConfig(score_weight=1.0)).trace.frame
    # The score weight only changes the fused score
    for column in ("psnr_db", "dist", "g_psnr", "g_dist", "gate_flag"):
        assert(base[column].equals(psnr_only[column]))
    assert(np.allclose(psnr_only["score"], 1 - psnr_only["g_psnr"]))
    ungated = evaluate(checkpoints["full"], clips, EvalConfig(gate=False)).trace.frame
    assert(set(ungated["gate_flag"]) == {"updated"})

def test_throughput(checkpoints):
    clip = data.gen_synthetic(SynthSpec(split="test", seed=9), 1, 200)[0]
    start = time.perf_counter()
    n_frames = sum(1 for _ in score_stream(checkpoints["full"], clip))
    rate = n_frames / (time.perf_counter() - start)
    assert(n_frames == 200)
    assert(rate >= 100)
