"""End-to-end orchestration: joint training and three-step captioning.

Training: rewrite targets, run the teacher-forced decoder, read the
per-image detection memory at every masked step, and apply Adam to the
summed gradients of both losses in one update.

Captioning: (i) decode greedily, emitting placeholders; (ii) build the
key-value memory from the image's top detections; (iii) query the memory
with the hidden state recorded before each placeholder and substitute
the retrieved word. Filling is a pure post-process: non-placeholder
positions are untouched.
"""

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import HeldOutSplit
from .decoder import CaptionModel, backward_pass, decode_greedy, forward_teacher_forced, sequence_loss
from .errors import NumericError
from .memory import (Detection, ObjectMemory, build_memory, make_query, memory_loss_forward,
                     memory_read, read_loss_backward, select_top_detections)
from .numerics import FLOAT, AdamState, adam_step
from .vocabulary import PLACEHOLDER, DetectableSet, Vocabulary, mask_weights, rewrite_targets

log = logging.getLogger(__name__)


@dataclass
class TrainExample:
    """One (image feature, encoded reference, detections) training pair."""

    feature: np.ndarray
    targets: list[int]
    detections: list[Detection]


def make_batch(examples: list[TrainExample], pad_id: int) -> list[TrainExample]:
    """Pad every sequence in the batch to the longest one with <PAD>."""
    width = max(len(ex.targets) for ex in examples)
    return [TrainExample(ex.feature, ex.targets + [pad_id] * (width - len(ex.targets)), ex.detections)
            for ex in examples]


@dataclass
class Caption:
    """Finished caption: surface tokens, with novel words as raw strings."""

    tokens: list[str]
    placeholder_count_unfilled: int = 0


def _strip_padding(targets: list[int], pad_id: int) -> list[int]:
    end = len(targets)
    while end > 1 and targets[end - 1] == pad_id:
        end -= 1
    return targets[:end]


def _memory_for_example(detections, n_det, key_dim, n_classes, w_key):
    """Memory plus the raw top features (needed for the key-transform grad)."""
    top = select_top_detections(detections, n_det)
    mem = ObjectMemory(n_det, key_dim, n_classes)
    raw = np.zeros((len(top), key_dim), dtype=FLOAT)
    for i, det in enumerate(top):
        raw[i] = det.feature
        key = w_key @ det.feature if w_key is not None else det.feature
        mem.write(Detection(feature=key, label=det.label, score=det.score))
    return mem, raw


def example_losses(model: CaptionModel, feature, targets: list[int], detections,
                   pd: DetectableSet, *, go_id: int, pad_id: int, n_det: int,
                   addressing: str = "softmax", bptt_through_query: bool = True,
                   max_steps: int | None = None, rewrite: bool = True,
                   grads: dict[str, np.ndarray] | None = None,
                   scale: float = 1.0) -> tuple[float, float, dict[str, np.ndarray]]:
    """Both losses and their gradients for a single example.

    ``scale`` multiplies the gradients (1/batch for batch means). With
    ``rewrite`` off (the no-placeholder baseline) the raw targets are
    used and the memory loss is skipped entirely.
    """
    original = _strip_padding(list(targets), pad_id)
    if rewrite:
        decoder_targets = rewrite_targets(original, pd)
        mask = mask_weights(original, pd)
    else:
        decoder_targets = original
        mask = [0] * len(original)
    cache = forward_teacher_forced(decoder_targets, feature, model, go_id, max_steps)
    n_steps = len(cache.targets)
    loss_seq, dlogits = sequence_loss(cache.logits, cache.targets, pad_id)

    loss_mem = 0.0
    dq_by_step: dict[int, np.ndarray] = {}
    if grads is None:
        grads = model.zero_grads()
    if any(mask[:n_steps]):
        mem, raw_feats = _memory_for_example(detections, n_det, model.key_dim, pd.n_classes, model.w_key)
        loss_mem, read_caches = memory_loss_forward(cache.hiddens, original[:n_steps], mask[:n_steps],
                                                    pd, mem, model.w_query, addressing)
        for rc in read_caches:
            dq, dkeys = read_loss_backward(rc, mem, addressing, scale=scale)
            dq_by_step[rc.step] = dq
            if model.has_key_projection:
                grads["w_key"] += dkeys.T @ raw_feats
    backward_pass(model, cache, dlogits * scale, dq_by_step, bptt_through_query, grads)
    return loss_seq, loss_mem, grads


def joint_loss(model: CaptionModel, feature, targets: list[int], detections, pd: DetectableSet,
               *, go_id: int, pad_id: int, n_det: int, addressing: str = "softmax",
               max_steps: int | None = None, rewrite: bool = True) -> float:
    """Forward-only total loss; the reference for finite-difference checks."""
    original = _strip_padding(list(targets), pad_id)
    if rewrite:
        decoder_targets = rewrite_targets(original, pd)
        mask = mask_weights(original, pd)
    else:
        decoder_targets = original
        mask = [0] * len(original)
    cache = forward_teacher_forced(decoder_targets, feature, model, go_id, max_steps)
    n_steps = len(cache.targets)
    loss_seq, _ = sequence_loss(cache.logits, cache.targets, pad_id)
    loss_mem = 0.0
    if any(mask[:n_steps]):
        mem, _ = _memory_for_example(detections, n_det, model.key_dim, pd.n_classes, model.w_key)
        loss_mem, _ = memory_loss_forward(cache.hiddens, original[:n_steps], mask[:n_steps],
                                          pd, mem, model.w_query, addressing)
    return loss_seq + loss_mem


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients down to a global L2 norm of ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def train_step(batch: list[TrainExample], model: CaptionModel, pd: DetectableSet,
               opt_states: dict[str, AdamState], vocab: Vocabulary, *, n_det: int,
               max_steps: int | None = None, addressing: str = "softmax",
               bptt_through_query: bool = True, clip_norm: float = 5.0,
               rewrite: bool = True) -> tuple[float, float, float]:
    """One joint update over a batch; returns (loss_seq, loss_mem, total).

    Losses are batch means; the sequence and memory gradients are summed
    before the single Adam application, so one step minimizes their sum.
    """
    b = len(batch)
    grads = model.zero_grads()
    loss_seq_total = 0.0
    loss_mem_total = 0.0
    for ex in batch:
        ls, lm, _ = example_losses(model, ex.feature, ex.targets, ex.detections, pd,
                                   go_id=vocab.go_id, pad_id=vocab.pad_id, n_det=n_det,
                                   addressing=addressing, bptt_through_query=bptt_through_query,
                                   max_steps=max_steps, rewrite=rewrite, grads=grads, scale=1.0 / b)
        loss_seq_total += ls
        loss_mem_total += lm
    loss_seq = loss_seq_total / b
    loss_mem = loss_mem_total / b
    if not np.isfinite(loss_seq + loss_mem):
        raise NumericError(f"pipeline: non-finite training loss ({loss_seq}, {loss_mem})")
    clip_gradients(grads, clip_norm)
    for name, p in model.params().items():
        adam_step(p, grads[name], opt_states[name])
    return loss_seq, loss_mem, loss_seq + loss_mem


# ---------------------------------------------------------------------------
# Captioning
# ---------------------------------------------------------------------------


def fill_placeholders(trace, mem: ObjectMemory, model: CaptionModel, vocab: Vocabulary,
                      det_map: DetectableSet, addressing: str = "softmax") -> tuple[Caption, int]:
    """Substitute each emitted placeholder with its memory query result.

    With an empty memory the literal placeholder token stays in the
    output. Returns the caption and the number of memory reads performed.
    """
    placeholder_at = set(trace.placeholder_positions)
    tokens: list[str] = []
    unfilled = 0
    reads = 0
    skip = {vocab.go_id, vocab.pad_id, vocab.eos_id}
    for pos, tok_id in enumerate(trace.ids):
        if pos in placeholder_at:
            if mem.n == 0:
                tokens.append(PLACEHOLDER)
                unfilled += 1
            else:
                q = make_query(trace.hiddens[pos], model.w_query)
                result, _ = memory_read(q, mem, det_map, addressing)
                tokens.append(result.argmax_word)
                reads += 1
        elif tok_id in skip:
            continue
        else:
            tokens.append(vocab.word_of(tok_id))
    return Caption(tokens=tokens, placeholder_count_unfilled=unfilled), reads


def caption_image(image_feature, detections, model: CaptionModel, vocab: Vocabulary,
                  det_map: DetectableSet, n_det: int, max_steps: int,
                  addressing: str = "softmax") -> Caption:
    """Decode with placeholders, build the memory, fill the placeholders."""
    trace = decode_greedy(image_feature, model, vocab.go_id, vocab.eos_id,
                          vocab.placeholder_id, max_steps)
    mem = build_memory(detections, n_det, model.key_dim, det_map.n_classes,
                       key_projection=model.w_key)
    caption, _ = fill_placeholders(trace, mem, model, vocab, det_map, addressing)
    return caption


def caption_no_memory(image_feature, detections, model: CaptionModel, vocab: Vocabulary,
                      det_map: DetectableSet, n_det: int, max_steps: int,
                      rng: np.random.Generator) -> Caption:
    """Ablation: placeholders get a uniformly random top-detection label
    instead of a memory read."""
    trace = decode_greedy(image_feature, model, vocab.go_id, vocab.eos_id,
                          vocab.placeholder_id, max_steps)
    labels = [d.label for d in select_top_detections(detections, n_det)]
    placeholder_at = set(trace.placeholder_positions)
    tokens: list[str] = []
    unfilled = 0
    skip = {vocab.go_id, vocab.pad_id, vocab.eos_id}
    for pos, tok_id in enumerate(trace.ids):
        if pos in placeholder_at:
            if not labels:
                tokens.append(PLACEHOLDER)
                unfilled += 1
            else:
                tokens.append(det_map.word_for_class(labels[int(rng.integers(len(labels)))]))
        elif tok_id in skip:
            continue
        else:
            tokens.append(vocab.word_of(tok_id))
    return Caption(tokens=tokens, placeholder_count_unfilled=unfilled)


def caption_plain(image_feature, model: CaptionModel, vocab: Vocabulary,
                  max_steps: int) -> Caption:
    """No-placeholder baseline: decode and map ids straight to words."""
    trace = decode_greedy(image_feature, model, vocab.go_id, vocab.eos_id,
                          vocab.placeholder_id, max_steps)
    skip = {vocab.go_id, vocab.pad_id, vocab.eos_id}
    tokens = [vocab.word_of(i) for i in trace.ids if i not in skip]
    return Caption(tokens=tokens, placeholder_count_unfilled=0)


# ---------------------------------------------------------------------------
# Full training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss_seq: float
    loss_mem: float
    total: float
    val_f1: float


@dataclass
class TrainResult:
    model: CaptionModel
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = -1.0
    best_params: dict[str, np.ndarray] | None = None


def train_model(split: HeldOutSplit, vocab: Vocabulary, det_map: DetectableSet, cfg,
                mode: str = "dnoc", log_fn=None) -> TrainResult:
    """Train on the split per the run config; track the best-validation model.

    ``mode`` is "dnoc" (placeholder rewriting + memory loss) or
    "no-placeholder" (the plain-decoder baseline). The model snapshot with
    the best validation F1 is kept in ``best_params``. Selection scores
    the held-out words; for the baseline those are structurally zero (its
    vocabulary cannot contain them), so it is selected on the detectable
    known words instead.
    """
    from .evaluation import average_f1_over  # local import, no module cycle

    rewrite = mode != "no-placeholder"
    if rewrite:
        selection_words = split.held_out_words
    else:
        selection_words = tuple(sorted(vocab.word_of(i) for i in det_map.pd_ids))
    model = CaptionModel(vocab.size, hidden_size=cfg.hidden_size, embed_size=cfg.embed_size,
                         image_dim=cfg.image_dim, key_dim=cfg.key_dim,
                         key_projection=cfg.key_projection, image_to_cell=cfg.image_to_cell,
                         seed=cfg.seed)
    opt_states = {name: AdamState.for_param(p, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                                            eps=cfg.eps, weight_decay=cfg.weight_decay)
                  for name, p in model.params().items()}
    pairs = [TrainExample(rec.feature, vocab.encode(ref, append_eos=True), rec.detections)
             for rec in split.train for ref in rec.references]
    result = TrainResult(model=model)
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(pairs))
        sums = np.zeros(2)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [pairs[i] for i in order[start:start + cfg.batch_size]]
            batch = make_batch(chunk, vocab.pad_id)
            ls, lm, _ = train_step(batch, model, det_map, opt_states, vocab, n_det=cfg.n_det,
                                   max_steps=cfg.max_steps, addressing=cfg.addressing,
                                   bptt_through_query=cfg.bptt_through_query,
                                   clip_norm=cfg.clip_norm, rewrite=rewrite)
            sums += (ls, lm)
            n_batches += 1
        loss_seq, loss_mem = sums / max(n_batches, 1)
        captioner = make_captioner(model, vocab, det_map, cfg, mode)
        val_f1 = average_f1_over(split.val, captioner, selection_words)
        stats = EpochStats(epoch=epoch, loss_seq=loss_seq, loss_mem=loss_mem,
                           total=loss_seq + loss_mem, val_f1=val_f1)
        result.history.append(stats)
        if log_fn is not None:
            log_fn(f"epoch={epoch} loss_smp={loss_seq:.6f} loss_mem={loss_mem:.6f} "
                   f"total={stats.total:.6f} val_f1={val_f1!r}")
        if val_f1 > result.best_val_f1:
            result.best_val_f1 = val_f1
            result.best_epoch = epoch
            result.best_params = {k: v.copy() for k, v in model.params().items()}
    return result


def make_captioner(model: CaptionModel, vocab: Vocabulary, det_map: DetectableSet, cfg,
                   mode: str = "dnoc"):
    """Record -> Caption callable for one of the three evaluation modes."""
    if mode == "dnoc":
        def captioner(rec):
            return caption_image(rec.feature, rec.detections, model, vocab, det_map,
                                 cfg.n_det, cfg.max_steps, cfg.addressing)
    elif mode == "no-memory":
        def captioner(rec):
            rng = np.random.default_rng([cfg.seed, zlib.crc32(rec.image_id.encode())])
            return caption_no_memory(rec.feature, rec.detections, model, vocab, det_map,
                                     cfg.n_det, cfg.max_steps, rng)
    elif mode == "no-placeholder":
        def captioner(rec):
            return caption_plain(rec.feature, model, vocab, cfg.max_steps)
    else:
        raise ValueError(f"pipeline: unknown captioning mode {mode!r}")
    return captioner
