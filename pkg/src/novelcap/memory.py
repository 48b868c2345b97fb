"""Per-image key-value object memory.

Each detection contributes one slot: the appearance feature is the key,
the one-hot class label is the value. A read turns query/key similarity
into addressing weights and mixes the values into a class distribution.
Two addressing modes exist:

  softmax   -- weights = softmax(q . K^T), distribution = weights @ V.
               Cross-entropy is taken on the mixed distribution directly.
  raw-logit -- (q . K^T) @ V is treated as a vector of class logits and
               fed through a regular softmax cross-entropy.

softmax is the default; raw similarity mixing is not a distribution and
cross-entropy on it is undefined for negative similarities.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DomainError, EmptyMemoryError, ShapeError
from .numerics import FLOAT, cross_entropy, softmax

log = logging.getLogger(__name__)

ADDRESSING_MODES = ("softmax", "raw-logit")


@dataclass(frozen=True)
class Detection:
    """One detector output: appearance feature, class index, confidence."""

    feature: np.ndarray
    label: int
    score: float

    def __post_init__(self):
        feat = np.asarray(self.feature, dtype=FLOAT)
        object.__setattr__(self, "feature", feat)
        if not np.all(np.isfinite(feat)):
            raise DomainError("memory: detection feature contains non-finite entries")
        if self.label < 0:
            raise DomainError(f"memory: detection label {self.label} is negative")
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"memory: detection score {self.score} outside [0, 1]")


@dataclass
class QueryResult:
    """Outcome of one memory read."""

    distribution: np.ndarray
    argmax_class: int
    argmax_word: str | None = None


class ObjectMemory:
    """Append-only slot store with capacity ``n_det``, built fresh per image."""

    def __init__(self, capacity: int, key_dim: int, n_classes: int):
        if capacity < 1:
            raise DomainError(f"memory: capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.key_dim = key_dim
        self.n_classes = n_classes
        self.keys = np.zeros((0, key_dim), dtype=FLOAT)
        self.values = np.zeros((0, n_classes), dtype=FLOAT)
        self.labels: list[int] = []

    @property
    def n(self) -> int:
        return len(self.labels)

    def write(self, det: Detection) -> "ObjectMemory":
        """Append one key-value slot; order of insertion is preserved."""
        if self.n >= self.capacity:
            raise CapacityError(f"memory: capacity {self.capacity} exceeded; select top detections first")
        if det.feature.shape != (self.key_dim,):
            raise ShapeError(f"memory: key shape {det.feature.shape} != ({self.key_dim},)")
        if det.label >= self.n_classes:
            raise DomainError(f"memory: label {det.label} out of range for {self.n_classes} classes")
        onehot = np.zeros(self.n_classes, dtype=FLOAT)
        onehot[det.label] = 1.0
        self.keys = np.vstack([self.keys, det.feature[None, :]])
        self.values = np.vstack([self.values, onehot[None, :]])
        self.labels.append(det.label)
        return self


def select_top_detections(dets: list[Detection], n_det: int) -> list[Detection]:
    """The ``n_det`` highest-confidence detections, stable under score ties."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in order[:n_det]]


def build_memory(dets: list[Detection], n_det: int, key_dim: int, n_classes: int,
                 key_projection: np.ndarray | None = None) -> ObjectMemory:
    """Memory from the top-``n_det`` detections; keys optionally projected."""
    mem = ObjectMemory(n_det, key_dim, n_classes)
    for det in select_top_detections(dets, n_det):
        if key_projection is not None:
            det = Detection(key_projection @ det.feature, det.label, det.score)
        mem.write(det)
    return mem


def make_query(h_prev: np.ndarray, w_query: np.ndarray) -> np.ndarray:
    """Project a decoder hidden state into the detection-feature space."""
    if w_query.shape[1] != h_prev.shape[0]:
        raise ShapeError(f"memory: query transform {w_query.shape} does not accept hidden state {h_prev.shape}")
    return w_query @ h_prev


def memory_read(q: np.ndarray, mem: ObjectMemory, det_map=None,
                addressing: str = "softmax") -> tuple[QueryResult, np.ndarray]:
    """Content-based read: similarity, addressing weights, mixed class scores.

    Returns the QueryResult and the raw class-score vector (a probability
    distribution in softmax mode, unnormalized logits in raw-logit mode).
    Argmax ties break toward the lowest class index.
    """
    if mem.n == 0:
        raise EmptyMemoryError("memory: read on an empty memory")
    if addressing not in ADDRESSING_MODES:
        raise DomainError(f"memory: unknown addressing mode {addressing!r}")
    sims = mem.keys @ q
    if addressing == "softmax":
        weights = softmax(sims)
        scores = weights @ mem.values
        distribution = scores
    else:
        scores = sims @ mem.values
        distribution = softmax(scores)
    argmax_class = int(np.argmax(distribution))  # np.argmax takes the first (lowest) index on ties
    word = det_map.word_for_class(argmax_class) if det_map is not None else None
    return QueryResult(distribution=distribution, argmax_class=argmax_class, argmax_word=word), scores


@dataclass
class ReadCache:
    """Forward intermediates one read needs for its backward pass."""

    q: np.ndarray
    sims: np.ndarray
    weights: np.ndarray | None
    scores: np.ndarray
    target_class: int
    step: int


def read_loss_forward(q: np.ndarray, mem: ObjectMemory, target_class: int,
                      addressing: str, step: int) -> tuple[float, ReadCache]:
    """Cross-entropy of one read against the annotated class."""
    if mem.n == 0:
        raise EmptyMemoryError("memory: read on an empty memory")
    sims = mem.keys @ q
    if addressing == "softmax":
        weights = softmax(sims)
        scores = weights @ mem.values
        loss = float(-np.log(scores[target_class]))
        cache = ReadCache(q=q, sims=sims, weights=weights, scores=scores,
                          target_class=target_class, step=step)
    else:
        scores = sims @ mem.values
        loss, _ = cross_entropy(scores, target_class)
        cache = ReadCache(q=q, sims=sims, weights=None, scores=scores,
                          target_class=target_class, step=step)
    return loss, cache


def read_loss_backward(cache: ReadCache, mem: ObjectMemory, addressing: str,
                       scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the read loss w.r.t. the query and the slot keys.

    ``scale`` multiplies the loss (batch averaging). Returns (dq, dkeys)
    with dkeys shaped like mem.keys.
    """
    if addressing == "softmax":
        # loss = -log(sum of weights on slots labeled target)
        w = cache.weights
        p = cache.scores[cache.target_class]
        dalpha = -mem.values[:, cache.target_class] / p
        dsims = w * (dalpha - float(w @ dalpha))
    else:
        probs = softmax(cache.scores)
        dscores = probs.copy()
        dscores[cache.target_class] -= 1.0
        dsims = mem.values @ dscores
    dsims = dsims * scale
    dq = mem.keys.T @ dsims
    dkeys = np.outer(dsims, cache.q)
    return dq, dkeys


def memory_loss_forward(hiddens: list[np.ndarray], original: list[int], a: list[int],
                        det_map, mem: ObjectMemory, w_query: np.ndarray,
                        addressing: str = "softmax") -> tuple[float, list[ReadCache]]:
    """Masked memory loss over one sentence.

    For each step with a[t] = 1: query from the pre-step hidden state,
    read the memory, cross-entropy against the class of the original
    word. Steps whose word has no detection class, or whose class has no
    slot in the memory under softmax addressing (where its probability
    would be exactly zero), are skipped with a warning.
    """
    total = 0.0
    caches: list[ReadCache] = []
    for t, weight in enumerate(a):
        if not weight:
            continue
        target_class = det_map.class_for_word_id(original[t])
        if target_class is None:
            log.warning("memory: masked word id %d at step %d has no detection class; step skipped",
                        original[t], t)
            continue
        if mem.n == 0:
            log.warning("memory: no detections available for a masked step; step skipped")
            continue
        if addressing == "softmax" and target_class not in mem.labels:
            # expected when the annotated object fell below the top-n_det
            # cut; its mixed probability would be exactly zero
            log.debug("memory: class %d absent from memory slots at step %d; step skipped",
                      target_class, t)
            continue
        q = make_query(hiddens[t], w_query)
        loss, cache = read_loss_forward(q, mem, target_class, addressing, step=t)
        total += loss
        caches.append(cache)
    return total, caches
