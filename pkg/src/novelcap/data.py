"""Synthetic corpus generation, held-out splits, and dataset files.

The synthetic world replaces a CNN and an object detector at desk scale:
every object owns an anchor vector, an image feature is the sum of its
objects' anchors plus noise, and the mock detector emits one noisy
detection per present object plus a few lower-confidence distractor
detections of absent classes. Anchors are drawn from a shared low-rank
latent basis so the feature geometry of held-out objects is reachable
from the known ones, the way real detector features share one space.

Dataset files are line-delimited JSON records; the world config is a
plain key-value text file; the split manifest is a single JSON document.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, DomainError, ParseError, SchemaError
from .memory import Detection
from .numerics import FLOAT

DEFAULT_INVENTORY = (
    "apple", "bear", "bird", "boat", "bottle", "bus", "car", "cat", "chair", "couch",
    "dog", "elephant", "horse", "microwave", "motorcycle", "pizza", "racket",
    "suitcase", "table", "zebra",
)

DEFAULT_HELD_OUT = ("bottle", "bus", "couch", "microwave", "pizza", "racket", "suitcase", "zebra")

DEFAULT_TEMPLATES = (
    "a {} is in the picture",
    "there is a {} here",
    "a {} sits on the ground",
    "you can see a {} today",
    "a small {} is shown",
    "a {} is looking at a {}",
    "a {} is next to a {}",
    "there is a {} near a {}",
    "a {} and a {} are here",
    "a {} and a {} sit near a {}",
    "there is a {} with a {} and a {}",
)


@dataclass
class DatasetRecord:
    """One image worth of data: feature, reference sentences, detections."""

    image_id: str
    feature: np.ndarray
    references: list[list[str]]
    detections: list[Detection]


@dataclass
class HeldOutSplit:
    """Train/val/test partition where train never mentions a held-out word."""

    train: list[DatasetRecord]
    val: list[DatasetRecord]
    test: list[DatasetRecord]
    held_out_words: tuple[str, ...]


@dataclass
class SyntheticWorld:
    """Generator configuration: inventory, anchors, templates, noise."""

    names: tuple[str, ...]
    anchors: np.ndarray  # (n_objects, dim), unit rows, pairwise distinct
    templates: tuple[str, ...]
    noise_scale: float
    seed: int
    latent_rank: int = 10
    distractors: int = 3
    refs_per_image: int = 2
    present_score: tuple[float, float] = (0.55, 1.0)
    distractor_score: tuple[float, float] = (0.5, 0.85)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DomainError("data: duplicate object names in the inventory")
        dists = np.linalg.norm(self.anchors[:, None, :] - self.anchors[None, :, :], axis=2)
        np.fill_diagonal(dists, np.inf)
        if dists.min() < 1e-9:
            raise DomainError("data: anchor vectors must be pairwise distinct")

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]


def _make_anchors(rng: np.random.Generator, n: int, dim: int, latent_rank: int) -> np.ndarray:
    """Unit anchors in a shared low-rank subspace of the feature space.

    The shared basis means every class, held-out ones included, lies in
    the subspace the known classes span, the way detector features of a
    novel object live in the same space as familiar ones. Pairwise cosine
    is capped so the classes stay separable.
    """
    rank = min(latent_rank, dim)
    basis = rng.normal(size=(dim, rank)) / np.sqrt(rank)
    anchors = np.empty((n, dim), dtype=FLOAT)
    for i in range(n):
        # farthest-of-50 draws keeps the worst anchor pair well separated
        best = None
        best_cos = np.inf
        for _ in range(50):
            z = rng.normal(size=rank)
            a = basis @ z
            a /= np.linalg.norm(a)
            worst = np.max(anchors[:i] @ a) if i else -1.0
            if worst < best_cos:
                best_cos = worst
                best = a
        if best_cos >= 0.95:
            raise DomainError("data: could not sample separable anchor vectors")
        anchors[i] = best
    # later draws are squeezed into gaps; shuffle the class assignment so
    # crowding is not systematic in class index
    return anchors[rng.permutation(n)]


def make_world(names: tuple[str, ...] = DEFAULT_INVENTORY, dim: int = 32, seed: int = 7,
               noise_scale: float = 0.03, templates: tuple[str, ...] = DEFAULT_TEMPLATES,
               latent_rank: int = 10, **kwargs) -> SyntheticWorld:
    rng = np.random.default_rng(seed)
    anchors = _make_anchors(rng, len(names), dim, latent_rank)
    return SyntheticWorld(names=tuple(names), anchors=anchors, templates=tuple(templates),
                          noise_scale=noise_scale, seed=seed, latent_rank=latent_rank, **kwargs)


def _templates_by_slots(templates) -> dict[int, list[str]]:
    pools: dict[int, list[str]] = {}
    for t in templates:
        pools.setdefault(t.count("{}"), []).append(t)
    return pools


def generate_synthetic(world: SyntheticWorld, n_images: int,
                       objects_per_image: tuple[int, int] = (1, 2)) -> list[DatasetRecord]:
    """Seeded corpus: sampled objects, summed-anchor features, mock detections.

    Object frequencies are kept balanced by redrawing the whole corpus if
    any object exceeds three times the median frequency.
    """
    lo, hi = objects_per_image
    n_obj = len(world.names)
    if n_obj < 4:
        raise DomainError("data: inventory must contain at least 4 objects")
    if lo < 1 or hi < lo:
        raise DomainError(f"data: bad objects_per_image range ({lo}, {hi})")
    if hi > n_obj:
        raise DomainError(f"data: objects_per_image {hi} exceeds the {n_obj}-object inventory")
    pools = _templates_by_slots(world.templates)
    for k in range(lo, hi + 1):
        if k not in pools:
            raise DomainError(f"data: no sentence template with {k} object slots")
    rng = np.random.default_rng(world.seed)
    for _ in range(100):
        records = _generate_once(world, n_images, lo, hi, pools, rng)
        counts = np.zeros(n_obj, dtype=int)
        for rec in records:
            mentioned = set(tok for ref in rec.references for tok in ref)
            for i, name in enumerate(world.names):
                if name in mentioned:
                    counts[i] += 1
        median = max(float(np.median(counts)), 1.0)
        if counts.max() <= 3.0 * median:
            return records
    raise DomainError("data: could not draw a label-balanced corpus in 100 attempts")


def _generate_once(world, n_images, lo, hi, pools, rng) -> list[DatasetRecord]:
    n_obj = len(world.names)
    records = []
    for i in range(n_images):
        k = int(rng.integers(lo, hi + 1))
        present = np.sort(rng.choice(n_obj, size=k, replace=False))
        noise = rng.normal(0.0, 1.0, world.dim) * world.noise_scale
        feature = world.anchors[present].sum(axis=0) + noise
        references = []
        for _ in range(world.refs_per_image):
            template = pools[k][int(rng.integers(len(pools[k])))]
            # canonical mention order (class-index order) keeps the slot ->
            # object correspondence learnable from the summed feature
            references.append(template.format(*(world.names[j] for j in present)).split())
        detections = []
        for j in present:
            key = world.anchors[j] + rng.normal(0.0, 1.0, world.dim) * world.noise_scale
            score = float(rng.uniform(*world.present_score))
            detections.append(Detection(feature=key, label=int(j), score=score))
        absent = [j for j in range(n_obj) if j not in set(int(p) for p in present)]
        n_distract = min(world.distractors, len(absent))
        if n_distract > 0:
            for j in rng.choice(absent, size=n_distract, replace=False):
                key = world.anchors[j] + rng.normal(0.0, 1.0, world.dim) * world.noise_scale
                score = float(rng.uniform(*world.distractor_score))
                detections.append(Detection(feature=key, label=int(j), score=score))
        records.append(DatasetRecord(image_id=f"synth-{i:05d}", feature=feature.astype(FLOAT),
                                     references=references, detections=detections))
    return records


def record_mentions(record: DatasetRecord, words) -> bool:
    words = set(words)
    return any(tok in words for ref in record.references for tok in ref)


def build_heldout_split(records: list[DatasetRecord], held_out_words,
                        ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                        seed: int = 0) -> HeldOutSplit:
    """Partition records so no training reference mentions a held-out word.

    Records mentioning any held-out word form the evaluation pool and are
    dealt alternately to test and val (test first, and test coverage of
    every held-out word is enforced). The remaining records are split by
    ``ratios``. Detections are never filtered: the mock detector knows
    all classes, held-out ones included.
    """
    held = tuple(held_out_words)
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise DomainError(f"data: split ratios {ratios} must be non-negative and sum to 1")
    for w in held:
        if not any(record_mentions(r, [w]) for r in records):
            raise CoverageError(f"data: held-out word {w!r} appears in no record")
    rng = np.random.default_rng(seed)
    pool = [r for r in records if record_mentions(r, held)]
    safe = [r for r in records if not record_mentions(r, held)]

    pool_order = [pool[i] for i in rng.permutation(len(pool))]
    eval_test = [r for i, r in enumerate(pool_order) if i % 2 == 0]
    eval_val = [r for i, r in enumerate(pool_order) if i % 2 == 1]
    for w in held:
        if not any(record_mentions(r, [w]) for r in eval_test):
            idx = next(i for i, r in enumerate(eval_val) if record_mentions(r, [w]))
            eval_test.append(eval_val.pop(idx))

    safe_order = [safe[i] for i in rng.permutation(len(safe))]
    n = len(safe_order)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    train = safe_order[:n_train]
    val = safe_order[n_train:n_train + n_val] + eval_val
    test = safe_order[n_train + n_val:] + eval_test
    return HeldOutSplit(train=train, val=val, test=test, held_out_words=held)


# ---------------------------------------------------------------------------
# Dataset files: one JSON object per line
# ---------------------------------------------------------------------------


def _validate_record_dict(d: dict, line_no: int, feature_dim: int | None) -> int:
    for key in ("image_id", "feature", "references", "detections"):
        if key not in d:
            raise SchemaError(f"data: line {line_no}: missing field {key!r}")
    if not d["references"] or any(len(ref) == 0 for ref in d["references"]):
        raise SchemaError(f"data: line {line_no}: references must be non-empty")
    if feature_dim is not None and len(d["feature"]) != feature_dim:
        raise SchemaError(
            f"data: line {line_no}: feature length {len(d['feature'])} != {feature_dim}")
    return len(d["feature"])


def save_dataset(records: list[DatasetRecord], path) -> None:
    dim = None
    with open(path, "w", encoding="utf-8") as f:
        for i, rec in enumerate(records):
            d = {
                "image_id": rec.image_id,
                "feature": [float(x) for x in rec.feature],
                "references": [list(ref) for ref in rec.references],
                "detections": [
                    {"feature": [float(x) for x in det.feature],
                     "label": int(det.label), "score": float(det.score)}
                    for det in rec.detections
                ],
            }
            dim = _validate_record_dict(d, i + 1, dim)
            f.write(json.dumps(d, separators=(",", ":")) + "\n")


def load_dataset(path) -> list[DatasetRecord]:
    records = []
    dim = None
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"data: line {line_no}: malformed record ({e.msg})") from e
            dim = _validate_record_dict(d, line_no, dim)
            try:
                dets = [Detection(feature=np.asarray(x["feature"], dtype=FLOAT),
                                  label=int(x["label"]), score=float(x["score"]))
                        for x in d["detections"]]
                rec = DatasetRecord(image_id=str(d["image_id"]),
                                    feature=np.asarray(d["feature"], dtype=FLOAT),
                                    references=[[str(t) for t in ref] for ref in d["references"]],
                                    detections=dets)
            except (KeyError, TypeError, ValueError) as e:
                raise SchemaError(f"data: line {line_no}: {e}") from e
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# World config: plain "key = value" text
# ---------------------------------------------------------------------------

_WORLD_KEYS = ("inventory", "templates", "noise_scale", "seed", "dim", "latent_rank",
               "distractors", "refs_per_image", "present_score", "distractor_score")


def save_world_config(world: SyntheticWorld, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("inventory = " + " ".join(world.names) + "\n")
        f.write("templates = " + " | ".join(world.templates) + "\n")
        f.write(f"noise_scale = {world.noise_scale!r}\n")
        f.write(f"seed = {world.seed}\n")
        f.write(f"dim = {world.dim}\n")
        f.write(f"latent_rank = {world.latent_rank}\n")
        f.write(f"distractors = {world.distractors}\n")
        f.write(f"refs_per_image = {world.refs_per_image}\n")
        f.write(f"present_score = {world.present_score[0]!r} {world.present_score[1]!r}\n")
        f.write(f"distractor_score = {world.distractor_score[0]!r} {world.distractor_score[1]!r}\n")


def load_world_config(path) -> SyntheticWorld:
    raw: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParseError(f"data: line {line_no}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if key not in _WORLD_KEYS:
                raise ParseError(f"data: line {line_no}: unknown world key {key!r}")
            raw[key] = value.strip()
    try:
        names = tuple(raw["inventory"].split())
        templates = tuple(t.strip() for t in raw["templates"].split("|"))
        kwargs = {}
        if "distractors" in raw:
            kwargs["distractors"] = int(raw["distractors"])
        if "refs_per_image" in raw:
            kwargs["refs_per_image"] = int(raw["refs_per_image"])
        if "present_score" in raw:
            a, b = raw["present_score"].split()
            kwargs["present_score"] = (float(a), float(b))
        if "distractor_score" in raw:
            a, b = raw["distractor_score"].split()
            kwargs["distractor_score"] = (float(a), float(b))
        return make_world(names=names, dim=int(raw.get("dim", 32)), seed=int(raw["seed"]),
                          noise_scale=float(raw["noise_scale"]), templates=templates,
                          latent_rank=int(raw.get("latent_rank", 10)), **kwargs)
    except KeyError as e:
        raise ParseError(f"data: world config is missing required key {e.args[0]!r}") from e
    except ValueError as e:
        raise ParseError(f"data: world config: {e}") from e


# ---------------------------------------------------------------------------
# Split manifest
# ---------------------------------------------------------------------------


def save_manifest(split: HeldOutSplit, class_names, path) -> None:
    doc = {
        "held_out_words": list(split.held_out_words),
        "class_names": list(class_names),
        "known_words": [w for w in class_names if w not in split.held_out_words],
        "train": [r.image_id for r in split.train],
        "val": [r.image_id for r in split.val],
        "test": [r.image_id for r in split.test],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"data: manifest line {e.lineno}: {e.msg}") from e
    for key in ("held_out_words", "class_names", "train", "val", "test"):
        if key not in doc:
            raise SchemaError(f"data: manifest is missing field {key!r}")
    return doc


def manifest_hash(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]


def split_from_manifest(records: list[DatasetRecord], manifest: dict) -> HeldOutSplit:
    by_id = {r.image_id: r for r in records}
    out = {}
    for part in ("train", "val", "test"):
        try:
            out[part] = [by_id[i] for i in manifest[part]]
        except KeyError as e:
            raise CoverageError(f"data: manifest names unknown record id {e.args[0]!r}") from e
    return HeldOutSplit(train=out["train"], val=out["val"], test=out["test"],
                        held_out_words=tuple(manifest["held_out_words"]))
