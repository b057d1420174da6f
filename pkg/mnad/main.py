"""
MNAD - Command line interface

Subcommands:

  gendata   Generate a synthetic dataset in the frame directory layout
  train     Train a model on the normal clips of a dataset
  eval      Score the test clips of a dataset and report the frame-level AUC
  score     Stream per-frame scores for one frame directory
"""
import argparse
import logging
import math
import os
import sys
import time

import numpy as np
import pandas as pd

from . import __version__
from .utils import ConfigError, DataError, NumericalError, parse_bool
from .config import SECTIONS, load_config
from .data import gen_synthetic, write_dataset, load_dataset, load_frame_dir
from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .trainer import Trainer, evaluate, score_stream, CHECKPOINT_FILE
from .scoring import TRACE_COLUMNS

EXIT_CODES = [
    (ConfigError, 2),
    (DataError, 3),
    (NumericalError, 4),
]

STREAM_HEADER = "# normalization=running-minmax"

LOG = logging.getLogger(__name__)

def _add_options(group, section, exclude=()):
    """
    Add command line arguments for the options of a config section

    Boolean options which default to off become switches. Those which default
    to on are turned off by dedicated switches (e.g. ``--no-memory``).
    """
    for option in SECTIONS[section]:
        if option.attr_name in exclude:
            continue
        kwargs = {"dest" : "%s.%s" % (section, option.attr_name), "help" : option.desc, "default" : None}
        if option.type is parse_bool and option.default is False:
            kwargs.update(action="store_const", const=True)
        elif option.type is parse_bool and option.default is True:
            continue
        else:
            kwargs["type"] = option.type
        group.add_argument(*option.clargs, **kwargs)

def _common(parser):
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--force", action="store_true", default=False,
                        help="Write into an existing non-empty output directory")
    parser.add_argument("--config", help="Config file with [model], [memory], [train], [eval] and [data] sections")
    parser.add_argument("--debug", action="store_true", default=False, help="Enable debug logging")

def build_parser():
    """
    :return: argparse.ArgumentParser with one sub-parser per command
    """
    parser = argparse.ArgumentParser(prog="mnad", description="Memory-guided video anomaly detection %s" % __version__)
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command")

    gendata = subparsers.add_parser("gendata", help="Generate a synthetic dataset")
    _common(gendata)
    gendata.add_argument("--clips", type=int, default=8, help="Number of clips")
    gendata.add_argument("--len", dest="clip_len", type=int, default=64, help="Frames per clip")
    _add_options(gendata.add_argument_group("Synthetic data options"), "data")

    train = subparsers.add_parser("train", help="Train a model on normal clips")
    _common(train)
    train.add_argument("--data", required=True, help="Dataset root directory")
    train.add_argument("--split", default="train", help="Dataset split to train on")
    _add_options(train.add_argument_group("Model options"), "model", exclude=("seed",))
    group = train.add_argument_group("Memory options")
    _add_options(group, "memory")
    group.add_argument("--no-memory", dest="memory.use_memory", action="store_const", const=False, default=None,
                       help="Bypass the memory (memory-free baseline)")
    _add_options(train.add_argument_group("Training options"), "train")

    evaluate_parser = subparsers.add_parser("eval", help="Score test clips and report the frame-level AUC")
    _common(evaluate_parser)
    evaluate_parser.add_argument("--checkpoint", required=True, help="Checkpoint file")
    evaluate_parser.add_argument("--data", required=True, help="Dataset root directory")
    evaluate_parser.add_argument("--split", default="test", help="Dataset split to evaluate")
    evaluate_parser.add_argument("--task", help="Refuse checkpoints trained for a different task")
    evaluate_parser.add_argument("--persist-memory", action="store_true", default=False,
                                 help="Save a new checkpoint containing the memory as evolved during evaluation")
    group = evaluate_parser.add_argument_group("Evaluation options")
    _add_options(group, "eval")
    group.add_argument("--gate-off", dest="eval.gate", action="store_const", const=False, default=None,
                       help="Update the memory with every test frame")

    score = subparsers.add_parser("score", help="Stream per-frame scores for a frame directory")
    _common(score)
    score.add_argument("--checkpoint", required=True, help="Checkpoint file")
    score.add_argument("--frames", required=True, help="Directory of frame_%%06d.pgm files")
    score.add_argument("--labels", help="Optional labels CSV")
    group = score.add_argument_group("Scoring options")
    _add_options(group, "eval", exclude=("scope", "clone_bank", "query_samples", "dump_errors", "seed"))
    group.add_argument("--gate-off", dest="eval.gate", action="store_const", const=False, default=None,
                       help="Update the memory with every frame")
    return parser

def _overrides(args):
    overrides = dict((section, {}) for section in SECTIONS)
    for dest, value in vars(args).items():
        if "." in dest:
            section, key = dest.split(".", 1)
            overrides[section][key] = value
    return overrides

def _prepare_out(path, force):
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ConfigError("Output directory %s exists and is not empty (use --force to overwrite)" % path)
    if not os.path.isdir(path):
        os.makedirs(path)

def cmd_gendata(args, config):
    spec = config.synth_spec()
    spec.log_config()
    clips = gen_synthetic(spec, args.clips, args.clip_len)
    write_dataset(clips, args.out, spec.split)
    LOG.info("Wrote %i %s clips of %i frames to %s", len(clips), spec.split, args.clip_len, args.out)

def cmd_train(args, config):
    train_config = config.train_config()
    trainer = Trainer(train_config, **config.model_options())
    clips = load_dataset(args.data, args.split, target_size=trainer.model.frame_size)
    trainer.train(clips, args.out)
    LOG.info("Checkpoint saved to %s", os.path.join(args.out, CHECKPOINT_FILE))

def cmd_eval(args, config):
    ckpt = checkpoint_load(args.checkpoint, expect={"task" : args.task})
    eval_config = config.eval_config()
    clips = load_dataset(args.data, args.split, target_size=ckpt.config["model"]["frame_size"])
    result = evaluate(ckpt, clips, eval_config)

    result.trace.to_csv(os.path.join(args.out, "trace.csv"))
    result.queries.to_csv(os.path.join(args.out, "queries.csv"), index=False, float_format="%.8g")
    if result.bank is not None:
        bank = pd.DataFrame(result.bank.values, columns=["c%i" % c for c in range(result.bank.dims)])
        bank.to_csv(os.path.join(args.out, "memory.csv"), index=False, float_format="%.8g")
    if result.errors:
        error_dir = os.path.join(args.out, "errors")
        if not os.path.isdir(error_dir):
            os.makedirs(error_dir)
        for video_id, errors in result.errors.items():
            np.save(os.path.join(error_dir, "%s.npy" % video_id), errors)
    if args.persist_memory:
        if result.bank is None:
            LOG.warning("Checkpoint was trained without memory - nothing to persist")
        else:
            persisted = Checkpoint(ckpt.config, ckpt.params, result.bank.values, ckpt.optimizer, ckpt.rng_state)
            checkpoint_save(persisted, os.path.join(args.out, CHECKPOINT_FILE))

    frame = result.trace.frame
    print("frames=%i abnormal=%i gate_skipped=%i psnr_clamped=%i" % (
        len(frame), int((frame["label"] == 1).sum()), result.trace.gate_skips(), result.clamped))
    print("AUC=%s" % ("%.6f" % result.auc if result.auc is not None else "nan"))

def cmd_score(args, config):
    ckpt = checkpoint_load(args.checkpoint)
    clip = load_frame_dir(args.frames, args.labels, target_size=ckpt.config["model"]["frame_size"])
    path = os.path.join(args.out, "scores.csv")
    n_frames, start = 0, time.perf_counter()
    with open(path, "w") as f_handle:
        f_handle.write(STREAM_HEADER + "\n")
        f_handle.write(",".join(TRACE_COLUMNS) + "\n")
        for row in score_stream(ckpt, clip, config.eval_config()):
            pd.DataFrame([row], columns=TRACE_COLUMNS).to_csv(f_handle, header=False, index=False,
                                                              float_format="%.10g")
            f_handle.flush()
            n_frames += 1
    elapsed = time.perf_counter() - start
    rate = n_frames / elapsed if elapsed > 0 else math.inf
    LOG.info("Scored %i frames in %.3fs (%.1f frames/s)", n_frames, elapsed, rate)
    print("frames=%i fps=%.1f" % (n_frames, rate))

COMMANDS = {
    "gendata" : cmd_gendata,
    "train" : cmd_train,
    "eval" : cmd_eval,
    "score" : cmd_score,
}

def main(argv=None):
    """
    Command line entry point

    :return: Exit code - 0 on success, 2 for configuration errors, 3 for data
             errors and 4 when training is aborted on a non-finite loss
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2

    logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO,
                        format="%(levelname)s:%(name)s:%(message)s")
    try:
        config = load_config(args.config, _overrides(args))
        _prepare_out(args.out, args.force)
        COMMANDS[args.command](args, config)
    except tuple(exc_type for exc_type, _ in EXIT_CODES) as exc:
        LOG.error(str(exc))
        LOG.debug("Traceback", exc_info=True)
        for exc_type, code in EXIT_CODES:
            if isinstance(exc, exc_type):
                return code
    return 0

if __name__ == "__main__":
    sys.exit(main())
