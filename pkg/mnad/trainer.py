"""
MNAD - Training loop, evaluation driver and streaming scorer
"""
import collections
import math
import os

import numpy as np
import pandas as pd

from .utils import LogBase, ConfigError, DataError, NumericalError, parse_bool, get_rng, to_unit_range
from .tensor import Tensor, Tape
from .optim import AdamOptimizer
from .model import ModelOption, apply_options, get_model_class
from .memory import MemoryBank, assign, update, regular_score, gated_update
from .losses import LossWeights, reconstruction_loss, compactness_loss, separateness_loss, total_loss
from .scoring import ScoreTrace, RunningMinMax, SCOPES, distance_score, psnr, fuse, TRACE_COLUMNS
from .checkpoint import Checkpoint, checkpoint_save

LOG_COLUMNS = ["step", "epoch", "lr", "L_rec", "L_compact", "L_separate", "L_total"]

LOG_HEADER = "# losses summed over query locations, averaged over batch"

CHECKPOINT_FILE = "checkpoint.mnad"

TRAIN_LOG_FILE = "train_log.csv"

TASK_DEFAULTS = {
    "reconstruction" : dict(lr=2e-5, compact_weight=0.01, separate_weight=0.01, margin=1.0,
                            score_weight=0.7, gamma=0.015),
    "prediction" : dict(lr=2e-4, compact_weight=0.1, separate_weight=0.1, margin=1.0,
                        score_weight=0.6, gamma=0.01),
}
TASK_DEFAULTS["motion"] = TASK_DEFAULTS["reconstruction"]

def task_defaults(task):
    if task not in TASK_DEFAULTS:
        raise ConfigError("No such task: %s (expected one of %s)" % (task, ", ".join(sorted(TASK_DEFAULTS))))
    return TASK_DEFAULTS[task]

class TrainConfig(LogBase):
    """
    Training configuration

    Options left unset take the defaults of the selected task.
    """
    OPTIONS = [
        ModelOption("task", "Task model (reconstruction, prediction or motion)", default="reconstruction"),
        ModelOption("epochs", "Number of training epochs", type=int, default=20),
        ModelOption("batch_size", "Windows per optimizer step", type=int, default=4),
        ModelOption("lr", "Initial learning rate", type=float, default=None),
        ModelOption("compact_weight", "Weight of the feature compactness loss", type=float, default=None),
        ModelOption("separate_weight", "Weight of the feature separateness loss", type=float, default=None),
        ModelOption("margin", "Margin of the feature separateness loss", type=float, default=None),
        ModelOption("score_weight", "Weight of the PSNR term in the abnormality score", type=float, default=None),
        ModelOption("gamma", "Regular score threshold for test time memory updates", type=float, default=None),
        ModelOption("gamma_quantile", "Quantile of the training regular scores taken as gamma when gamma is not given "
                    "(0 keeps the task default)", type=float, default=0.95),
        ModelOption("memory_items", "Number of memory items", type=int, default=10),
        ModelOption("use_memory", "Read the memory (false trains the memory-free baseline)", type=parse_bool,
                    default=True),
        ModelOption("item_grads", "Also update memory items from loss gradients", type=parse_bool, default=False),
        ModelOption("seed", "Random seed", type=int, default=0),
    ]

    def __init__(self, **kwargs):
        LogBase.__init__(self)
        task = kwargs.get("task", None) or "reconstruction"
        apply_options(self, self.OPTIONS, task_defaults(task), kwargs)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("Epochs and batch size must be positive")
        if not self.lr > 0:
            raise ConfigError("Learning rate must be positive: %s" % self.lr)
        if self.use_memory and self.memory_items < 2:
            raise ConfigError("At least two memory items are needed (memory_items=%i)" % self.memory_items)
        if not 0 <= self.score_weight <= 1:
            raise ConfigError("Score weight must lie in [0, 1]: %s" % self.score_weight)
        if not 0 <= self.gamma_quantile <= 1:
            raise ConfigError("Gamma quantile must lie in [0, 1]: %s" % self.gamma_quantile)
        self.fit_gamma = self.gamma_quantile > 0 and kwargs.get("gamma", None) is None
        self.loss_weights = LossWeights(self.compact_weight, self.separate_weight, self.margin)

    def as_dict(self):
        return dict((option.attr_name, getattr(self, option.attr_name)) for option in self.OPTIONS)

    def log_config(self, log=None):
        if log is None:
            log = self.log
        for option in self.OPTIONS:
            log.info(" - %s: %s", option.desc, str(getattr(self, option.attr_name)))

class EvalConfig(LogBase):
    """
    Evaluation configuration. Unset score weight and gamma come from the checkpoint
    """
    OPTIONS = [
        ModelOption("score_weight", "Weight of the PSNR term in the abnormality score", type=float, default=None,
                    clargs=["--lambda"]),
        ModelOption("gamma", "Regular score threshold for memory updates", type=float, default=None),
        ModelOption("gate", "Skip memory updates for frames above the threshold", type=parse_bool, default=True),
        ModelOption("scope", "Min-max normalization scope (per-video or global)", default="per-video"),
        ModelOption("clone_bank", "Start every video from the checkpoint memory", type=parse_bool, default=False),
        ModelOption("query_samples", "Query embeddings sampled per frame for export", type=int, default=4),
        ModelOption("dump_errors", "Keep per-pixel error maps", type=parse_bool, default=False),
        ModelOption("seed", "Seed for query sampling", type=int, default=0),
    ]

    def __init__(self, **kwargs):
        LogBase.__init__(self)
        apply_options(self, self.OPTIONS, {}, kwargs)
        if self.scope not in SCOPES:
            raise ConfigError("Unknown normalization scope: %s (expected one of %s)" % (self.scope, ", ".join(SCOPES)))

    def resolve(self, ckpt):
        """
        :return: Tuple of (score weight, gamma) with unset values taken from the checkpoint
        """
        train = ckpt.config.get("train", {})
        lam = self.score_weight if self.score_weight is not None else train["score_weight"]
        gamma = self.gamma if self.gamma is not None else train["gamma"]
        if not self.gate:
            gamma = math.inf
        if not gamma > 0:
            raise ConfigError("Gate threshold must be positive: %s" % gamma)
        if not 0 <= lam <= 1:
            raise ConfigError("Score weight must lie in [0, 1]: %s" % lam)
        return lam, gamma

def model_from_checkpoint(ckpt):
    """
    Recreate the model stored in a checkpoint
    """
    model_class = get_model_class(ckpt.task)
    model = model_class(**ckpt.config["model"])
    model.load_state_dict(ckpt.params)
    return model

class Trainer(LogBase):
    """
    End-to-end training of the encoder/decoder and the memory

    Each step reads the memory with the current items, takes an Adam step on
    the weighted sum of the reconstruction, compactness and separateness
    losses, and then updates the items with the batch's queries.

    :attr model: ``Model``
    :attr bank: ``MemoryBank``
    :attr history: List of training log rows
    """

    def __init__(self, config, **model_options):
        LogBase.__init__(self)
        self.config = config
        model_class = get_model_class(config.task)
        model_options.setdefault("seed", config.seed)
        self.model = model_class(**model_options)
        self.bank = MemoryBank.random(config.memory_items, self.model.query_channels, seed=config.seed,
                                      requires_grad=config.item_grads)
        self.rng = get_rng(config.seed, 3)
        self.optimizer = None
        self.history = []

    def _samples(self, clips):
        samples = []
        for clip_idx, clip in enumerate(clips):
            if clip.labels.any():
                raise DataError("Training clip %s contains abnormal frames" % clip.video_id)
            for start in range(len(clip) - self.model.span + 1):
                samples.append((clip_idx, start))
        if not samples:
            raise ConfigError("Training clips are shorter than the model window (%i frames)" % self.model.span)
        return samples

    def _batch(self, clips, samples):
        inputs, targets = [], []
        for clip_idx, start in samples:
            frames = clips[clip_idx].frames
            inputs.append(frames[start:start + self.model.input_window])
            targets.append(frames[start + self.model.target_index])
        return np.stack(inputs), np.stack(targets)

    def step(self, inputs, targets):
        """
        One optimizer step followed by the memory update

        :return: ``LossBreakdown``
        """
        cfg = self.config
        self.optimizer.zero_grad()
        bank = self.bank if cfg.use_memory else None
        with Tape() as tape:
            result = self.model.forward(inputs, bank, training=True)
            rec = reconstruction_loss(result.recon, Tensor(targets, dtype=result.recon.dtype))
            if cfg.use_memory:
                assignment = assign(result.match)
                compact = compactness_loss(result.queries, self.bank.items, assignment.nearest)
                separate = separateness_loss(result.queries, self.bank.items, assignment.nearest,
                                             assignment.second, cfg.margin)
            else:
                compact = separate = Tensor(0.0, dtype=result.recon.dtype)
            total, breakdown = total_loss((rec, compact, separate), cfg.loss_weights)
        if not np.isfinite(breakdown.total):
            raise NumericalError("Non-finite training loss at step %i: %s" % (self.optimizer.state.step, breakdown))

        tape.backward(np.ones_like(total.data), output=total)
        lr = self.optimizer.step()
        if cfg.use_memory:
            if cfg.item_grads:
                self.bank.renormalize()
            self.bank.items.data = update(self.bank, result.queries.data).items.data
        return breakdown, lr

    def regular_scores(self, clips):
        """
        Regular score of every training window under the current model and memory

        The memory is read but not updated.

        :return: Array with one score per window
        """
        bank = self.bank if self.config.use_memory else None
        scores = []
        for clip in clips:
            for inputs, target, _ in self.model.windows(clip.frames):
                recon = self.model.forward(inputs[np.newaxis, ...], bank, training=False).recon.data[0]
                scores.append(regular_score(to_unit_range(target), to_unit_range(recon)))
        return np.array(scores)

    def calibrate_gamma(self, clips):
        """
        Set gamma to a quantile of the training regular scores, so that normal
        frames like the training ones mostly pass the test time gate

        :return: The new gamma
        """
        cfg = self.config
        scores = self.regular_scores(clips)
        gamma = float(np.quantile(scores, cfg.gamma_quantile))
        if not gamma > 0:
            self.log.warning("Training regular scores are all zero - keeping gamma=%g", cfg.gamma)
            return cfg.gamma
        self.log.info("Gamma calibrated to %.6g (quantile %g of %i training scores, task default %g)",
                      gamma, cfg.gamma_quantile, len(scores), cfg.gamma)
        cfg.gamma = gamma
        return gamma

    def checkpoint(self):
        """
        :return: ``Checkpoint`` of the current state
        """
        config = {"model" : self.model.config(), "train" : self.config.as_dict()}
        return Checkpoint(config, self.model.state_dict(), self.bank.values,
                          self.optimizer.state if self.optimizer is not None else None,
                          self.rng.bit_generator.state)

    def log_frame(self):
        return pd.DataFrame(self.history, columns=LOG_COLUMNS)

    def write_log(self, path):
        with open(path, "w") as f_handle:
            f_handle.write(LOG_HEADER + "\n")
            self.log_frame().to_csv(f_handle, index=False, float_format="%.10g")

    def train(self, clips, out_dir=None):
        """
        Train on normal clips

        :param clips: Sequence of ``Clip`` containing only normal frames
        :param out_dir: Optional directory for the per-epoch checkpoint and the training log
        :return: Tuple of (``Checkpoint``, training log DataFrame)
        """
        cfg = self.config
        self.model.log_config()
        cfg.log_config()
        clips = list(clips)
        samples = self._samples(clips)
        n_batches = int(math.ceil(len(samples) / float(cfg.batch_size)))
        params = self.model.trainable()
        if cfg.use_memory and cfg.item_grads:
            params["memory.items"] = self.bank.items
        self.optimizer = AdamOptimizer(params, lr=cfg.lr, total_steps=cfg.epochs * n_batches)
        self.log.info("Training on %i windows from %i clips: %i steps per epoch", len(samples), len(clips), n_batches)

        for epoch in range(cfg.epochs):
            order = self.rng.permutation(len(samples))
            epoch_rec = []
            for batch in range(n_batches):
                chosen = [samples[idx] for idx in order[batch * cfg.batch_size:(batch + 1) * cfg.batch_size]]
                inputs, targets = self._batch(clips, chosen)
                try:
                    breakdown, lr = self.step(inputs, targets)
                except NumericalError:
                    if out_dir is not None:
                        self.write_log(os.path.join(out_dir, TRAIN_LOG_FILE))
                        self.log.error("Training aborted - last good checkpoint retained in %s", out_dir)
                    raise
                row = collections.OrderedDict([("step", self.optimizer.state.step), ("epoch", epoch + 1), ("lr", lr)])
                row.update(breakdown.as_row())
                self.history.append(row)
                epoch_rec.append(breakdown.rec)
                self.log.debug("Step %i: %s", row["step"], breakdown)
            self.log.info("Epoch %i/%i: mean L_rec %.6f, min item distance %.4f", epoch + 1, cfg.epochs,
                          np.mean(epoch_rec), self.bank.min_pairwise_distance())
            if out_dir is not None:
                checkpoint_save(self.checkpoint(), os.path.join(out_dir, CHECKPOINT_FILE))
                self.write_log(os.path.join(out_dir, TRAIN_LOG_FILE))

        if cfg.fit_gamma and cfg.use_memory:
            self.calibrate_gamma(clips)
            if out_dir is not None:
                checkpoint_save(self.checkpoint(), os.path.join(out_dir, CHECKPOINT_FILE))

        return self.checkpoint(), self.log_frame()

def train(config, clips, out_dir=None, **model_options):
    """
    Train a model from a ``TrainConfig`` - see ``Trainer.train``
    """
    return Trainer(config, **model_options).train(clips, out_dir)

EvalResult = collections.namedtuple("EvalResult", ["trace", "auc", "bank", "queries", "errors", "clamped"])

class FrameScorer(LogBase):
    """
    Scores frames in order, updating the memory through the regular score gate

    :attr bank: Current ``MemoryBank`` (None for a memory-free model)
    :attr clamped: Number of frames whose PSNR hit the clamp
    """

    def __init__(self, model, bank, gamma):
        LogBase.__init__(self)
        self.model = model
        self.bank = bank
        self.gamma = gamma
        self.clamped = 0

    def score(self, inputs, target):
        """
        :return: Tuple of (``Psnr``, distance, gate flag, queries [C, H, W], reconstruction [C, H, W])
        """
        result = self.model.forward(inputs[np.newaxis, ...], self.bank, training=False)
        recon = result.recon.data[0]
        queries = result.queries.data[0]
        target01, recon01 = to_unit_range(target), to_unit_range(recon)
        frame_psnr = psnr(recon01, target01)
        if frame_psnr.clamped:
            self.clamped += 1
        if self.bank is None:
            return frame_psnr, 0.0, "no-memory", queries, recon
        dist = distance_score(queries, self.bank.items.data)
        decision = gated_update(self.bank, queries, regular_score(target01, recon01), self.gamma, "test")
        self.bank = decision.bank
        return frame_psnr, dist, decision.flag, queries, recon

def evaluate(ckpt, clips, eval_config=None):
    """
    Score every frame of the test clips

    Videos are processed in order and frames in order within each video, so
    the memory evolves online. The checkpoint itself is not modified.

    :param ckpt: ``Checkpoint``
    :param clips: Sequence of ``Clip``
    :param eval_config: ``EvalConfig``
    :return: ``EvalResult`` (trace, AUC or None if the labels lack a class,
             final memory bank, sampled query DataFrame, error maps by video id,
             number of frames with clamped PSNR)
    """
    eval_config = eval_config if eval_config is not None else EvalConfig()
    log = eval_config.log
    lam, gamma = eval_config.resolve(ckpt)
    model = model_from_checkpoint(ckpt)
    use_memory = ckpt.config.get("train", {}).get("use_memory", True)
    initial = MemoryBank(ckpt.bank.copy()) if use_memory else None
    scorer = FrameScorer(model, initial.copy() if use_memory else None, gamma)
    rng = get_rng(eval_config.seed, 4)

    trace = ScoreTrace()
    query_rows, errors = [], {}
    for clip in clips:
        if eval_config.clone_bank and use_memory:
            scorer.bank = initial.copy()
        clip_errors = []
        for inputs, target, idx in model.windows(clip.frames):
            frame_psnr, dist, flag, queries, recon = scorer.score(inputs, target)
            label = int(clip.labels[idx]) if clip.labelled else None
            trace.add(clip.video_id, clip.indices[idx], frame_psnr.db, dist, label, flag)
            if frame_psnr.clamped:
                log.debug("Video %s frame %i reconstructed exactly - PSNR clamped to %g dB",
                          clip.video_id, clip.indices[idx], frame_psnr.db)
            rows = queries.reshape(queries.shape[0], -1).T
            for k in rng.choice(len(rows), size=min(eval_config.query_samples, len(rows)), replace=False):
                query_rows.append([clip.video_id, int(clip.indices[idx]), label, int(k)] + list(rows[k]))
            if eval_config.dump_errors:
                diff = to_unit_range(recon) - to_unit_range(target)
                clip_errors.append(np.sqrt((diff * diff).sum(axis=0)))
        if clip_errors:
            errors[clip.video_id] = np.stack(clip_errors)

    trace.finalize(lam, eval_config.scope)
    auc = trace.auc() if trace.has_both_classes() else None
    n_queries = model.query_channels
    queries = pd.DataFrame(query_rows, columns=["video_id", "frame_index", "label", "k"]
                           + ["q%i" % c for c in range(n_queries)])
    log.info("Scored %i frames from %i videos, %i memory updates skipped by the gate",
             len(trace), len(clips), trace.gate_skips())
    if scorer.clamped:
        log.warning("%i frames were reconstructed exactly and have clamped PSNR", scorer.clamped)
    if auc is not None:
        log.info("Frame-level AUC: %.4f", auc)
    return EvalResult(trace, auc, scorer.bank, queries, errors, scorer.clamped)

def score_stream(ckpt, clip, eval_config=None):
    """
    Score frames one at a time with running min-max normalization

    :return: Generator of trace rows (dictionaries with ``TRACE_COLUMNS`` keys)
    """
    eval_config = eval_config if eval_config is not None else EvalConfig()
    lam, gamma = eval_config.resolve(ckpt)
    model = model_from_checkpoint(ckpt)
    use_memory = ckpt.config.get("train", {}).get("use_memory", True)
    scorer = FrameScorer(model, MemoryBank(ckpt.bank.copy()) if use_memory else None, gamma)
    g_inv, g_dist = RunningMinMax(), RunningMinMax()
    for inputs, target, idx in model.windows(clip.frames):
        frame_psnr, dist, flag, _, _ = scorer.score(inputs, target)
        if frame_psnr.clamped:
            eval_config.log.warning("Video %s frame %i reconstructed exactly - PSNR clamped to %g dB",
                                    clip.video_id, clip.indices[idx], frame_psnr.db)
        gp, gd = 1 - g_inv(-frame_psnr.db), g_dist(dist)
        yield dict(zip(TRACE_COLUMNS, [
            clip.video_id, int(clip.indices[idx]), frame_psnr.db, dist, gp, gd, float(fuse(gp, gd, lam)),
            int(clip.labels[idx]) if clip.labelled else None, flag,
        ]))
