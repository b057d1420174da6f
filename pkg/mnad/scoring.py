"""
MNAD - Abnormality scores and frame-level evaluation
"""
import collections

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .utils import LogBase, ShapeError, DataError

TRACE_COLUMNS = ["video_id", "frame_index", "psnr_db", "dist", "g_psnr", "g_dist", "score", "label", "gate_flag"]

SCOPES = ("per-video", "global")

Psnr = collections.namedtuple("Psnr", ["db", "clamped"])

def distance_score(queries, items):
    """
    Mean distance between each query and its nearest item

    :param queries: Query rows [K, C] or a query map [C, H, W]
    :param items: Memory items [M, C] (array or ``MemoryBank``)
    """
    items = getattr(items, "values", items)
    items = np.asarray(items, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 3:
        queries = queries.reshape(queries.shape[0], -1).T
    if queries.shape[-1] != items.shape[-1]:
        raise ShapeError("distance_score", [queries.shape, items.shape], "query and item dimensions differ")
    nearest = np.argmax(queries @ items.T, axis=1)
    return float(np.linalg.norm(queries - items[nearest], axis=1).mean())

def psnr(recon, frame, peak=1.0, max_db=100.0):
    """
    Peak signal to noise ratio in dB of frames on the [0, 1] scale

    :return: ``Psnr`` (db, clamped). Identical frames give ``max_db`` with ``clamped`` set
    """
    recon = np.asarray(recon, dtype=np.float64)
    frame = np.asarray(frame, dtype=np.float64)
    if recon.shape != frame.shape:
        raise ShapeError("psnr", [recon.shape, frame.shape], "frames differ in shape")
    mse = np.square(recon - frame).mean()
    if mse == 0:
        return Psnr(max_db, True)
    return Psnr(float(10 * np.log10(peak**2 / mse)), False)

def minmax_normalize(values):
    """
    Rescale values to [0, 1]. A constant sequence maps to all zeros
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("Cannot normalize an empty sequence")
    low, high = values.min(), values.max()
    if high == low:
        return np.zeros_like(values)
    return (values - low) / (high - low)

def normalize_scoped(values, scopes=None):
    """
    Min-max normalize separately within each scope

    :param values: Sequence of values
    :param scopes: Optional sequence of scope labels (e.g. video ids) of the same
                   length. If None the whole sequence is one scope
    """
    values = np.asarray(values, dtype=np.float64)
    if scopes is None:
        return minmax_normalize(values)
    scopes = np.asarray(scopes)
    if scopes.shape != values.shape:
        raise ShapeError("normalize_scoped", [values.shape, scopes.shape], "one scope label per value")
    ret = np.zeros_like(values)
    for scope in pd.unique(scopes):
        mask = scopes == scope
        ret[mask] = minmax_normalize(values[mask])
    return ret

class RunningMinMax(object):
    """
    Min-max normalization against the extremes seen so far, for streaming use
    """

    def __init__(self):
        self.low = None
        self.high = None

    def __call__(self, value):
        value = float(value)
        self.low = value if self.low is None else min(self.low, value)
        self.high = value if self.high is None else max(self.high, value)
        if self.high == self.low:
            return 0.0
        return (value - self.low) / (self.high - self.low)

def fuse(g_psnr, g_dist, lam):
    """
    Abnormality score from normalized PSNR and distance terms
    """
    if not 0 <= lam <= 1:
        raise ValueError("Score weight must lie in [0, 1]: %g" % lam)
    return lam * (1 - np.asarray(g_psnr)) + (1 - lam) * np.asarray(g_dist)

def normalized_psnr(psnr_values, scopes=None):
    """
    Normalized PSNR term g(P) of the abnormality score

    Computed as 1 - g(-P), which is equal unless the scope is degenerate. A
    constant (or single frame) scope then maps to 1 so that its frames score 0
    """
    return 1 - normalize_scoped(-np.asarray(psnr_values, dtype=np.float64), scopes)

def abnormality_score(psnr_values, dist_values, lam, scopes=None):
    """
    Abnormality score of each frame

    :param psnr_values: PSNR of each frame
    :param dist_values: Query/item distance of each frame
    :param lam: Weight of the PSNR term in [0, 1]
    :param scopes: Optional normalization scope label for each frame
    :return: Array of scores in [0, 1]
    """
    if len(psnr_values) != len(dist_values):
        raise ShapeError("abnormality_score", [(len(psnr_values),), (len(dist_values),)], "sequence lengths differ")
    return fuse(normalized_psnr(psnr_values, scopes), normalize_scoped(dist_values, scopes), lam)

def roc_auc(scores, labels):
    """
    Area under the ROC curve

    Computed from average ranks, i.e. the probability that a randomly chosen
    abnormal frame scores higher than a randomly chosen normal one with ties
    counting one half.

    :param scores: Score of each frame (higher is more abnormal)
    :param labels: 0 (normal) / 1 (abnormal) for each frame
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ShapeError("roc_auc", [scores.shape, labels.shape], "one label per score")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != len(labels):
        raise ValueError("Labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both normal and abnormal frames (%i normal, %i abnormal)" % (n_neg, n_pos))
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))

class ScoreTrace(LogBase):
    """
    Per-frame scores of an evaluation run

    Rows are added in processing order with ``add``; ``finalize`` then fills
    in the normalized terms and the fused score.

    :attr frame: pandas.DataFrame with columns ``TRACE_COLUMNS``
    """

    def __init__(self, rows=None):
        LogBase.__init__(self)
        self._rows = list(rows) if rows is not None else []
        self.frame = None

    def add(self, video_id, frame_index, psnr_db, dist, label=None, gate_flag=""):
        self._rows.append(collections.OrderedDict([
            ("video_id", video_id), ("frame_index", int(frame_index)),
            ("psnr_db", float(psnr_db)), ("dist", float(dist)),
            ("g_psnr", np.nan), ("g_dist", np.nan), ("score", np.nan),
            ("label", label), ("gate_flag", gate_flag),
        ]))

    def __len__(self):
        return len(self._rows)

    def finalize(self, lam, scope="per-video"):
        """
        Normalize the PSNR and distance terms and compute the fused score

        :param lam: Weight of the PSNR term
        :param scope: ``per-video`` or ``global`` normalization
        :return: The completed DataFrame
        """
        if scope not in SCOPES:
            raise ValueError("Unknown normalization scope: %s (expected one of %s)" % (scope, ", ".join(SCOPES)))
        if not self._rows:
            raise DataError("No frames were scored")
        frame = pd.DataFrame(self._rows, columns=TRACE_COLUMNS)
        scopes = frame["video_id"].astype(str).values if scope == "per-video" else None
        frame["g_psnr"] = normalized_psnr(frame["psnr_db"].values, scopes)
        frame["g_dist"] = normalize_scoped(frame["dist"].values, scopes)
        frame["score"] = fuse(frame["g_psnr"].values, frame["g_dist"].values, lam)
        frame["label"] = frame["label"].astype("Int64")
        self.frame = frame
        return frame

    def has_both_classes(self):
        labels = self.frame["label"].dropna()
        return (labels == 0).any() and (labels == 1).any()

    def auc(self):
        """
        :return: Frame-level AUC over all labelled frames
        """
        labelled = self.frame.dropna(subset=["label"])
        return roc_auc(labelled["score"].values, labelled["label"].astype(int).values)

    def gate_skips(self):
        return int((self.frame["gate_flag"] == "abnormal-skipped").sum())

    def to_csv(self, path):
        self.frame.to_csv(path, index=False, columns=TRACE_COLUMNS, float_format="%.10g")
