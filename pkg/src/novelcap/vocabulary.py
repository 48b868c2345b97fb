"""Word/id bookkeeping, the detectable-word set, and target rewriting.

Sentences are plain lists of token ids. The placeholder token is an
ordinary trainable vocabulary entry; ``rewrite_targets`` swaps every
detectable word in a training sentence for it, and ``mask_weights``
marks exactly those positions so the memory loss knows where to fire.
"""

from collections import Counter
from dataclasses import dataclass, field

from .errors import DomainError

GO = "<GO>"
EOS = "<EOS>"
PAD = "<PAD>"
UNKNOWN = "<UNKNOWN>"
PLACEHOLDER = "<PL>"

SPECIAL_TOKENS = (GO, EOS, PAD, UNKNOWN, PLACEHOLDER)


@dataclass(frozen=True)
class Vocabulary:
    """Dense bidirectional word <-> id map with the five special tokens.

    Ids are 0..size-1: corpus words first (by descending frequency, ties
    alphabetical), then the specials in a fixed order. Immutable after
    construction.
    """

    words: tuple[str, ...]
    index: dict[str, int] = field(compare=False)

    def __post_init__(self):
        for tok in SPECIAL_TOKENS:
            if self.words.count(tok) != 1:
                raise DomainError(f"vocabulary: special token {tok} must appear exactly once")

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def go_id(self) -> int:
        return self.index[GO]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unknown_id(self) -> int:
        return self.index[UNKNOWN]

    @property
    def placeholder_id(self) -> int:
        return self.index[PLACEHOLDER]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.index[tok] for tok in SPECIAL_TOKENS)

    def id_of(self, word: str) -> int:
        """Id for a surface word; unknown words map to <UNKNOWN>."""
        return self.index.get(word, self.unknown_id)

    def word_of(self, word_id: int) -> str:
        return self.words[word_id]

    def encode(self, tokens: list[str], append_eos: bool = False) -> list[int]:
        ids = [self.id_of(t) for t in tokens]
        if append_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids: list[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def save(self, path) -> None:
        """One word per line, line number = id. Round-trips bit-exact."""
        with open(path, "w", encoding="utf-8") as f:
            for w in self.words:
                f.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            words = tuple(line.rstrip("\n") for line in f)
        return cls(words=words, index={w: i for i, w in enumerate(words)})


def build_vocabulary(training_sentences: list[list[str]], min_count: int = 1) -> Vocabulary:
    """Vocabulary from tokenized, lowercased sentences.

    Words below ``min_count`` are dropped (they will encode to <UNKNOWN>).
    Two builds from the same corpus assign identical ids.
    """
    if not training_sentences:
        raise DomainError("vocabulary: cannot build from an empty corpus")
    counts = Counter()
    for sent in training_sentences:
        counts.update(sent)
    kept = sorted((w for w, c in counts.items() if c >= min_count and w not in SPECIAL_TOKENS),
                  key=lambda w: (-counts[w], w))
    words = tuple(kept) + SPECIAL_TOKENS
    return Vocabulary(words=words, index={w: i for i, w in enumerate(words)})


@dataclass(frozen=True)
class DetectableSet:
    """Words that appear both in the caption vocabulary and as detector classes.

    ``class_words[c]`` is the surface name of detection class c. Classes
    whose name is absent from the vocabulary are novel: they carry no word
    id and can enter captions only as raw strings.
    """

    pd_ids: frozenset[int]
    class_words: tuple[str, ...]
    class_word_ids: tuple[int | None, ...]
    placeholder_id: int
    _word_to_class: dict[int, int] = field(compare=False)

    @property
    def n_classes(self) -> int:
        return len(self.class_words)

    def word_for_class(self, class_index: int) -> str:
        return self.class_words[class_index]

    def is_novel(self, class_index: int) -> bool:
        return self.class_word_ids[class_index] is None

    def class_for_word_id(self, word_id: int) -> int | None:
        return self._word_to_class.get(word_id)


def intersect_detectable(vocab: Vocabulary, detection_classes: list[str]) -> DetectableSet:
    """Intersect the vocabulary with the detector's class-name list.

    Class names must be single lowercase tokens. An empty intersection is
    legal; out-of-vocabulary classes are marked novel.
    """
    seen = set()
    for name in detection_classes:
        if " " in name or not name:
            raise DomainError(f"vocabulary: detection class {name!r} is not a single token")
        if name in seen:
            raise DomainError(f"vocabulary: duplicate detection class {name!r}")
        seen.add(name)
    word_ids = []
    for name in detection_classes:
        wid = vocab.index.get(name)
        if wid is not None and wid in vocab.special_ids:
            wid = None
        word_ids.append(wid)
    pd_ids = frozenset(wid for wid in word_ids if wid is not None)
    return DetectableSet(
        pd_ids=pd_ids,
        class_words=tuple(detection_classes),
        class_word_ids=tuple(word_ids),
        placeholder_id=vocab.placeholder_id,
        _word_to_class={wid: c for c, wid in enumerate(word_ids) if wid is not None},
    )


def rewrite_targets(sentence: list[int], pd: DetectableSet) -> list[int]:
    """Replace every detectable word id with the placeholder id.

    Length-preserving and idempotent; special tokens pass through.
    """
    return [pd.placeholder_id if i in pd.pd_ids else i for i in sentence]


def mask_weights(original: list[int], pd: DetectableSet) -> list[int]:
    """Binary per-step weights: 1 exactly where the original word is detectable."""
    return [1 if i in pd.pd_ids else 0 for i in original]


def check_sequence(ids: list[int], vocab: Vocabulary) -> None:
    """Validate the token-sequence invariants; raises DomainError on violation."""
    for i in ids:
        if not 0 <= i < vocab.size:
            raise DomainError(f"vocabulary: token id {i} out of range for vocabulary of {vocab.size}")
    if vocab.eos_id in ids:
        tail = ids[ids.index(vocab.eos_id) + 1:]
        if any(i != vocab.pad_id for i in tail):
            raise DomainError("vocabulary: tokens other than <PAD> follow <EOS>")
