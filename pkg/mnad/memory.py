"""
MNAD - Memory of prototypical normal features

Items are unit-norm vectors. Reading aggregates the items for each query
with softmax matching probabilities; updating moves each item towards the
queries for which it is the nearest item, then renormalizes it.
"""
import collections

import numpy as np
from scipy.special import softmax

from .utils import LogBase, ShapeError, get_rng, get_dtype
from .dist import UnitSphere
from . import tensor as T

class MemoryBank(LogBase):
    """
    A bank of M unit-norm memory items

    :attr items: Tensor [M, C]. Constant unless the bank was created with
                 ``requires_grad=True``, in which case losses also produce
                 gradients for the items
    """

    def __init__(self, items, requires_grad=False):
        LogBase.__init__(self)
        items = np.asarray(items)
        if items.ndim != 2 or items.shape[0] < 1 or items.shape[1] < 1:
            raise ShapeError("memory", [items.shape], "items must be a non-empty [M, C] array")
        self.items = T.Tensor(items, requires_grad=requires_grad, dtype=items.dtype
                              if np.issubdtype(items.dtype, np.floating) else get_dtype(), name="memory.items")

    @classmethod
    def random(cls, n_items, dims, seed=0, requires_grad=False):
        """
        Create a bank with items drawn uniformly on the unit sphere
        """
        values = UnitSphere().sample((n_items, dims), get_rng(seed, 2))
        return cls(values.astype(get_dtype()), requires_grad=requires_grad)

    @property
    def n_items(self):
        return self.items.shape[0]

    @property
    def dims(self):
        return self.items.shape[1]

    @property
    def values(self):
        """
        Copy of the items as a numpy array [M, C]
        """
        return self.items.data.copy()

    def copy(self):
        return MemoryBank(self.values, requires_grad=self.items.requires_grad)

    def renormalize(self):
        """
        Project the items back onto the unit sphere (after an optimizer step)
        """
        norms = np.linalg.norm(self.items.data, axis=1, keepdims=True)
        self.items.data = (self.items.data / np.where(norms > 0, norms, 1)).astype(self.items.dtype)

    def min_pairwise_distance(self):
        """
        :return: Smallest Euclidean distance between two distinct items
        """
        items = self.items.data.astype(np.float64)
        if len(items) < 2:
            return 0.0
        dists = np.linalg.norm(items[:, None, :] - items[None, :, :], axis=-1)
        return float(dists[np.triu_indices(len(items), k=1)].min())

    def __str__(self):
        return "Memory bank: %i items x %i channels" % (self.n_items, self.dims)

class MatchWeights(object):
    """
    Read probabilities of each query for each item

    :attr weights: Tensor [N, K, M], softmax over items of item/query dot products
    :attr scores: Array [N, K, M] of the dot products themselves
    """

    def __init__(self, weights, scores):
        self.weights = weights
        self.scores = scores

    def matrix(self, batch_idx=0):
        """
        :return: The M x K matrix of probabilities for one batch element (columns sum to 1)
        """
        return self.weights.data[batch_idx].T.copy()

Assignment = collections.namedtuple("Assignment", ["nearest", "second", "sets"])

UpdateWeights = collections.namedtuple("UpdateWeights", ["v", "v_prime", "sets"])

GateDecision = collections.namedtuple("GateDecision", ["bank", "updated", "flag"])

def query_rows(query_map):
    """
    Rearrange a query map [N, C, H, W] to rows of queries [N, K, C] with K = H * W
    """
    n, c, h, w = query_map.shape
    return T.reshape(T.transpose(query_map, (0, 2, 3, 1)), (n, h * w, c))

def _query_array(queries):
    queries = queries.data if isinstance(queries, T.Tensor) else np.asarray(queries)
    if queries.ndim == 4:
        queries = queries.transpose(0, 2, 3, 1).reshape(-1, queries.shape[1])
    elif queries.ndim == 3:
        queries = queries.transpose(1, 2, 0).reshape(-1, queries.shape[0])
    if queries.ndim != 2:
        raise ShapeError("memory", [queries.shape], "expected query rows [K, C] or a query map")
    return queries.astype(np.float64)

def read(query_map, bank):
    """
    Read the memory for every query

    :param query_map: Tensor [N, C, H, W] of unit-norm queries
    :param bank: ``MemoryBank`` with C-dimensional items
    :return: Tuple of (read map tensor [N, C, H, W], ``MatchWeights``)
    """
    n, c, h, w = query_map.shape
    if c != bank.dims:
        raise ShapeError("read", [query_map.shape, bank.items.shape], "query and item dimensions differ")
    rows = query_rows(query_map)
    scores = T.matmul(rows, T.transpose(bank.items, (1, 0)))
    weights = T.softmax(scores, axis=-1)
    read_rows = T.matmul(weights, bank.items)
    read_map = T.transpose(T.reshape(read_rows, (n, h, w, c)), (0, 3, 1, 2))
    return read_map, MatchWeights(weights, scores.data)

def assign(match):
    """
    Find the nearest and second nearest item for every query

    Ties are broken in favour of the lowest item index.

    :param match: ``MatchWeights`` or an array [N, K, M] / [K, M] of probabilities
    :return: ``Assignment`` with ``nearest`` and ``second`` index arrays shaped like
             the query axes, and ``sets``: for each batch element, a list over items
             of the query indices assigned to that item
    """
    weights = match.weights.data if isinstance(match, MatchWeights) else np.asarray(match)
    squeeze = weights.ndim == 2
    if squeeze:
        weights = weights[np.newaxis, ...]
    n_items = weights.shape[-1]
    if n_items < 2:
        raise ValueError("At least two memory items are needed to find a second nearest item (M=%i)" % n_items)
    nearest = np.argmax(weights, axis=-1)
    masked = weights.astype(np.float64)
    np.put_along_axis(masked, nearest[..., np.newaxis], -np.inf, axis=-1)
    second = np.argmax(masked, axis=-1)
    sets = [[np.flatnonzero(nearest[b] == m) for m in range(n_items)] for b in range(len(nearest))]
    if squeeze:
        return Assignment(nearest[0], second[0], sets[0])
    return Assignment(nearest, second, sets)

def update_weights(bank, queries):
    """
    Matching probabilities used by the item update

    :param bank: ``MemoryBank``
    :param queries: Query rows [K, C] or a query map
    :return: ``UpdateWeights``: ``v`` [M, K] is a softmax over queries for each item,
             ``v_prime`` [M, K] is ``v`` divided by its maximum over each item's
             assignment set (zero outside the set), ``sets`` the assignment sets
    """
    queries = _query_array(queries)
    items = bank.items.data.astype(np.float64)
    if queries.shape[1] != items.shape[1]:
        raise ShapeError("update", [queries.shape, items.shape], "query and item dimensions differ")
    scores = items @ queries.T
    nearest = np.argmax(softmax(scores, axis=0), axis=0)
    v = softmax(scores, axis=1)
    v_prime = np.zeros_like(v)
    sets = []
    for m in range(len(items)):
        members = np.flatnonzero(nearest == m)
        sets.append(members)
        if len(members):
            v_prime[m, members] = v[m, members] / v[m, members].max()
    return UpdateWeights(v, v_prime, sets)

def update(bank, queries):
    """
    Move each item towards the queries assigned to it and renormalize

    Items with no assigned queries are unchanged. This is a state update,
    not a gradient step.

    :param bank: ``MemoryBank``
    :param queries: Query rows [K, C] or a query map ([C, H, W] or [N, C, H, W])
    :return: New ``MemoryBank``
    """
    queries = _query_array(queries)
    weights = update_weights(bank, queries)
    items = bank.items.data.astype(np.float64)
    new_items = items.copy()
    for m, members in enumerate(weights.sets):
        if len(members) == 0:
            continue
        moved = items[m] + weights.v_prime[m, members] @ queries[members]
        new_items[m] = moved / np.linalg.norm(moved)
    return MemoryBank(new_items.astype(bank.items.dtype), requires_grad=bank.items.requires_grad)

def regular_score(frame, recon):
    """
    Reconstruction error weighted towards the pixels with the largest errors

    Frames are [C, H, W] (or [H, W]) arrays on a common scale, normally [0, 1].

    :return: Weighted regular score. Zero when the frames are identical
    """
    frame = np.asarray(frame, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if frame.shape != recon.shape:
        raise ShapeError("regular_score", [frame.shape, recon.shape], "frames differ in shape")
    diff = recon - frame
    errors = np.abs(diff) if diff.ndim < 3 else np.sqrt((diff * diff).sum(axis=0))
    weights = 1 - np.exp(-errors)
    total = weights.sum()
    if total == 0:
        return 0.0
    return float(((weights / total) * errors).sum())

def gated_update(bank, queries, score, gamma, phase):
    """
    Update the memory unless a test frame looks abnormal

    :param bank: ``MemoryBank``
    :param queries: Queries of the frame
    :param score: Regular score of the frame
    :param gamma: Threshold. At test time the update is skipped when ``score > gamma``
    :param phase: ``train`` (always update) or ``test``
    :return: ``GateDecision`` (bank, updated flag, ``updated`` / ``abnormal-skipped``)
    """
    if not gamma > 0:
        raise ValueError("Gate threshold must be positive: %s" % gamma)
    if phase not in ("train", "test"):
        raise ValueError("Unknown phase: %s" % phase)
    if phase == "train" or score <= gamma:
        return GateDecision(update(bank, queries), True, "updated")
    return GateDecision(bank, False, "abnormal-skipped")
