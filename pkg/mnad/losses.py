"""
MNAD - Training objectives

The feature losses are summed over the query locations of each frame and
averaged over the batch, as is the reconstruction loss.
"""
import collections

import numpy as np

from .utils import ShapeError
from . import tensor as T
from .memory import query_rows

class LossWeights(object):
    """
    Weights of the feature losses

    :attr compact: Weight of the compactness loss
    :attr separate: Weight of the separateness loss
    :attr margin: Margin of the separateness hinge
    """

    def __init__(self, compact=0.01, separate=0.01, margin=1.0):
        if compact < 0 or separate < 0:
            raise ValueError("Loss weights must not be negative: %g, %g" % (compact, separate))
        if not margin > 0:
            raise ValueError("Separateness margin must be positive: %g" % margin)
        self.compact = compact
        self.separate = separate
        self.margin = margin

    def __str__(self):
        return "Loss weights: compact=%g separate=%g margin=%g" % (self.compact, self.separate, self.margin)

class LossBreakdown(collections.namedtuple("LossBreakdown", ["rec", "compact", "separate", "total"])):
    """
    Values of each loss term for one batch, as floats
    """

    def as_row(self):
        return collections.OrderedDict([
            ("L_rec", self.rec), ("L_compact", self.compact),
            ("L_separate", self.separate), ("L_total", self.total),
        ])

def _rows(queries):
    return query_rows(queries) if queries.ndim == 4 else queries

def reconstruction_loss(recon, target):
    """
    L2 distance between each output frame and its target, averaged over the batch

    :param recon: Tensor [N, C, H, W]
    :param target: Tensor or array of the same shape
    """
    target = T.as_tensor(target, dtype=recon.dtype)
    if recon.shape != target.shape:
        raise ShapeError("reconstruction_loss", [recon.shape, target.shape], "frames differ in shape")
    n = recon.shape[0]
    diff = T.reshape(T.sub(recon, target), (n, -1))
    return T.reduce_mean(T.norm(diff, axis=1))

def _item_distances(rows, items, indices):
    picked = T.take(items, np.asarray(indices).reshape(-1))
    picked = T.reshape(picked, rows.shape)
    return T.norm(T.sub(rows, picked), axis=-1)

def compactness_loss(queries, items, nearest):
    """
    Sum of distances between each query and its nearest item

    :param queries: Query map [N, C, H, W] or rows [N, K, C]
    :param items: Memory items tensor [M, C]
    :param nearest: Nearest item index for each query [N, K]
    """
    rows = _rows(queries)
    dists = _item_distances(rows, items, nearest)
    return T.reduce_mean(T.reduce_sum(dists, axis=1))

def separateness_loss(queries, items, nearest, second, margin):
    """
    Hinge on the difference between nearest and second nearest item distances

    Zero for a query whose second nearest item is at least ``margin`` further
    away than its nearest item.
    """
    if items.shape[0] < 2:
        raise ValueError("Separateness loss needs at least two memory items (M=%i)" % items.shape[0])
    if not margin > 0:
        raise ValueError("Separateness margin must be positive: %g" % margin)
    rows = _rows(queries)
    d_pos = _item_distances(rows, items, nearest)
    d_neg = _item_distances(rows, items, second)
    hinge = T.relu(T.add(T.sub(d_pos, d_neg), margin))
    return T.reduce_mean(T.reduce_sum(hinge, axis=1))

def total_loss(parts, weights):
    """
    Weighted sum of the reconstruction, compactness and separateness losses

    :param parts: Tuple of (rec, compact, separate) tensors
    :param weights: ``LossWeights``
    :return: Tuple of (total tensor, ``LossBreakdown``)
    """
    rec, compact, separate = parts
    total = T.add(T.add(rec, T.mul(compact, weights.compact)), T.mul(separate, weights.separate))
    breakdown = LossBreakdown(float(rec.data), float(compact.data), float(separate.data), float(total.data))
    return total, breakdown
