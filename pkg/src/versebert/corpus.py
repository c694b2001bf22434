"""Verse corpus handling: loading, validation, dedup, sentiment grouping, splits, synthesis.

Corpus files are UTF-8 delimiter-separated text (tab by default) with a header
row naming a subset of the record fields; an empty cell means the field is
absent. Label taxonomies (meters, variants, rhymes, sentiments, genders) are
fixed module data with stable orderings so integer class ids never drift
between runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import preprocess
from .errors import (
    EmptyStratum,
    LabelOutOfRange,
    MalformedRow,
    MissingColumn,
    UnknownLabel,
    UnmappedTopic,
)

# Meter names, classical (16) then non-classical (12); orderings are by
# decreasing corpus frequency and are frozen.
CLASSICAL_METERS = (
    "Taweel", "Kamel", "Baseet", "Khafif", "Wafer", "Rajaz", "Ramel",
    "Mutaqarib", "Saree", "Munsarih", "Mujtath", "Hazaj", "Madeed",
    "Mutadarak", "Muqtadab", "Mudari",
)
NON_CLASSICAL_METERS = (
    "Muashah", "Free form", "Colloquial", "Doubeet", "Mawalia", "Masehube",
    "Selselah", "Zajal", "Kankan", "Hajini", "Sakhri", "Luaihani",
)
ALL_METERS = CLASSICAL_METERS + NON_CLASSICAL_METERS

# The seven recognized meter variants.
VARIANTS = ("Complete", "Majzuu", "Mashture", "Manhuk", "Maktuu", "Ahuth", "Mukhala")

# The 25 meter-variant combinations kept for the sub-meter task, alphabetical.
SUB_METERS = (
    "Baseet Complete", "Baseet Mukhala", "Hazaj Majzuu", "Kamel Ahuth",
    "Kamel Complete", "Kamel Majzuu", "Khafif Complete", "Khafif Majzuu",
    "Madeed Majzuu", "Mudari Majzuu", "Mujtath Majzuu", "Munsarih Complete",
    "Muqtadab Majzuu", "Mutadarak Complete", "Mutadarak Mashture",
    "Mutaqarib Complete", "Rajaz Complete", "Rajaz Majzuu", "Rajaz Mashture",
    "Ramel Complete", "Ramel Majzuu", "Saree Complete", "Taweel Complete",
    "Wafer Complete", "Wafer Majzuu",
)

# 28 Arabic letters in alphabetical order, then the three letter-variant
# rhymes (Laa, Taa Marbutah, Waw Hamza). Label strings are the characters
# themselves.
ARABIC_LETTERS = tuple("ابتثجحخدذرزسشصضطظعغفقكلمنهوي")
RHYMES = ARABIC_LETTERS + ("لا", "ة", "ؤ")

SENTIMENTS = ("Anger", "Love", "Spirituality", "Sadness")
GENDERS = ("Female", "Male")

# Poem-type -> grouped emotion. Keys are the bare type names; ``group_sentiment``
# also accepts the "<Type> Poems" form.
SENTIMENT_BY_TOPIC = {
    "Slander": "Anger",
    "Romantic": "Love",
    "Parting": "Love",
    "Longing": "Love",
    "Spinning": "Love",
    "Religious": "Spirituality",
    "Invocation": "Spirituality",
    "Mercy": "Spirituality",
    "Elegy": "Sadness",
}

TASK_IDS = ("SentimentT", "MeterClassical", "MeterAll", "SubMeter", "Gender", "Rhyme")


@dataclass(frozen=True)
class LabelTaxonomy:
    """Ordered label set for one classification task; name <-> id is a bijection."""

    task_id: str
    labels: tuple[str, ...]
    label_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "label_index", {n: i for i, n in enumerate(self.labels)})

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    def index(self, name: str) -> int:
        try:
            return self.label_index[name]
        except KeyError:
            raise LabelOutOfRange(f"label {name!r} is not in task {self.task_id}") from None

    def name(self, idx: int) -> str:
        if not 0 <= idx < len(self.labels):
            raise LabelOutOfRange(f"label id {idx} out of range for task {self.task_id}")
        return self.labels[idx]


_TASK_LABELS = {
    "SentimentT": SENTIMENTS,
    "MeterClassical": CLASSICAL_METERS,
    "MeterAll": ALL_METERS,
    "SubMeter": SUB_METERS,
    "Gender": GENDERS,
    "Rhyme": RHYMES,
}
_TASK_BY_LOWER = {t.lower(): t for t in TASK_IDS}


def taxonomy(task_id: str) -> LabelTaxonomy:
    """Look up a task taxonomy; task names are case-insensitive."""
    canonical = _TASK_BY_LOWER.get(task_id.lower())
    if canonical is None:
        raise UnknownLabel(f"unknown task id {task_id!r}; expected one of {TASK_IDS}")
    return LabelTaxonomy(canonical, _TASK_LABELS[canonical])


def export_taxonomies(path) -> None:
    """Write the task_id -> ordered label list mapping as a JSON document."""
    doc = {t: list(_TASK_LABELS[t]) for t in TASK_IDS}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


FIELDS = (
    "verse_id", "hemistich1", "hemistich2", "meter", "variant", "rhyme",
    "poet_name", "gender", "era", "topic",
)


@dataclass(frozen=True)
class VerseRecord:
    verse_id: int
    hemistich1: str
    hemistich2: Optional[str] = None
    meter: Optional[str] = None
    variant: Optional[str] = None
    rhyme: Optional[str] = None
    poet_name: Optional[str] = None
    gender: Optional[str] = None
    era: Optional[str] = None
    topic: Optional[str] = None


@dataclass(frozen=True)
class CorpusStore:
    """Immutable record collection; safe for concurrent reads."""

    records: tuple[VerseRecord, ...]
    provenance: str

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[VerseRecord]:
        return iter(self.records)


_LABEL_DOMAINS = {
    "meter": ALL_METERS,
    "variant": VARIANTS,
    "rhyme": RHYMES,
    "gender": GENDERS,
}


def load_corpus(path, delimiter: str = "\t") -> CorpusStore:
    """Parse a corpus file into records; verse_ids are assigned sequentially from 0.

    Raises ``MissingColumn`` when the header lacks hemistich1, ``MalformedRow``
    on wrong field counts, and ``UnknownLabel`` when a closed-taxonomy column
    (meter, variant, rhyme, gender) holds an unrecognized value.
    """
    with open(path, encoding="utf-8") as fh:
        rows = [line.rstrip("\n") for line in fh]
    if not rows:
        raise MissingColumn("empty file: header with 'hemistich1' required")
    header = rows[0].split(delimiter)
    for col in header:
        if col not in FIELDS:
            raise MalformedRow(f"line 1: unknown column {col!r}")
    if "hemistich1" not in header:
        raise MissingColumn("hemistich1")

    records = []
    next_id = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if row == "":
            continue
        cells = row.split(delimiter)
        if len(cells) != len(header):
            raise MalformedRow(
                f"line {lineno}: expected {len(header)} fields, got {len(cells)}"
            )
        values = {col: cell for col, cell in zip(header, cells) if cell != ""}
        if "hemistich1" not in values:
            raise MalformedRow(f"line {lineno}: empty hemistich1")
        for col, domain in _LABEL_DOMAINS.items():
            val = values.get(col)
            if val is not None and val not in domain:
                raise UnknownLabel(f"line {lineno}: {col}={val!r}")
        values.pop("verse_id", None)
        records.append(VerseRecord(verse_id=next_id, **values))
        next_id += 1
    return CorpusStore(tuple(records), provenance=str(path))


def write_corpus(store: CorpusStore, path, delimiter: str = "\t") -> None:
    """Write all fields with a full header; absent fields become empty cells."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(FIELDS) + "\n")
        for r in store.records:
            cells = [str(getattr(r, f)) if getattr(r, f) is not None else "" for f in FIELDS]
            fh.write(delimiter.join(cells) + "\n")


def _dedup_key(record: VerseRecord) -> tuple[str, str]:
    h1 = preprocess.clean_hemistich(record.hemistich1)
    h2 = preprocess.clean_hemistich(record.hemistich2) if record.hemistich2 else ""
    return (h1, h2)


def deduplicate(store: CorpusStore) -> CorpusStore:
    """Keep the first occurrence of each normalized full-verse text, order preserved."""
    seen = set()
    survivors = []
    for r in store.records:
        key = _dedup_key(r)
        if key in seen:
            continue
        seen.add(key)
        survivors.append(r)
    return CorpusStore(tuple(survivors), store.provenance)


def group_sentiment(topic: str) -> str:
    """Map a poem-type name to its grouped emotion label."""
    base = topic.strip()
    if base.endswith(" Poems"):
        base = base[: -len(" Poems")]
    try:
        return SENTIMENT_BY_TOPIC[base]
    except KeyError:
        raise UnmappedTopic(topic) from None


def split(
    corpus: CorpusStore,
    ratio: float,
    seed: int,
    stratify_by: Optional[str] = None,
) -> tuple[CorpusStore, CorpusStore]:
    """Deterministic train/val partition; floor(n*ratio) records per stratum go to train.

    Without stratification the whole corpus forms one stratum. Output stores
    preserve corpus order; membership depends only on (corpus, ratio, seed).
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)

    strata: dict[object, list[int]] = {}
    for idx, r in enumerate(corpus.records):
        if stratify_by is None:
            key = None
        else:
            key = getattr(r, stratify_by)
            if key is None:
                raise EmptyStratum(
                    f"record {r.verse_id} has no {stratify_by!r} label"
                )
        strata.setdefault(key, []).append(idx)
    for key, members in strata.items():
        if not members:
            raise EmptyStratum(str(key))

    train_idx: set[int] = set()
    for key in strata:  # insertion order = first appearance, stable
        members = strata[key]
        perm = rng.permutation(len(members))
        n_train = math.floor(len(members) * ratio)
        train_idx.update(members[i] for i in perm[:n_train])

    train = tuple(r for i, r in enumerate(corpus.records) if i in train_idx)
    val = tuple(r for i, r in enumerate(corpus.records) if i not in train_idx)
    return (
        CorpusStore(train, f"{corpus.provenance}|train"),
        CorpusStore(val, f"{corpus.provenance}|val"),
    )


def task_label(record: VerseRecord, task_id: str) -> Optional[str]:
    """The record's label for a task, or None when the record is unlabeled for it."""
    task = taxonomy(task_id).task_id
    if task == "SentimentT":
        if record.topic is None:
            return None
        try:
            return group_sentiment(record.topic)
        except UnmappedTopic:
            return None
    if task == "MeterClassical":
        return record.meter if record.meter in CLASSICAL_METERS else None
    if task == "MeterAll":
        return record.meter
    if task == "SubMeter":
        if record.meter is None or record.variant is None:
            return None
        combined = f"{record.meter} {record.variant}"
        return combined if combined in SUB_METERS else None
    if task == "Gender":
        return record.gender
    return record.rhyme


def task_pairs(corpus: CorpusStore, task_id: str) -> list[tuple[VerseRecord, str]]:
    """(record, label) pairs for records that carry the task's label."""
    pairs = []
    for r in corpus.records:
        label = task_label(r, task_id)
        if label is not None:
            pairs.append((r, label))
    return pairs


# Synthetic corpus generation. Verses are built from a 10-letter alphabet:
# filler words (2-4 letters, never two equal adjacent letters), one
# class-marker word per verse for marker tasks (doubled-letter pattern,
# disjoint from fillers by construction), and for the rhyme task a final
# single-letter word that IS the label.
_SYNTH_ALPHABET = tuple("ابتثجحخدذر")
_TYPES_BY_SENTIMENT = {
    "Anger": ("Slander",),
    "Love": ("Romantic", "Parting", "Longing", "Spinning"),
    "Spirituality": ("Religious", "Invocation", "Mercy"),
    "Sadness": ("Elegy",),
}
_FILLER_POOL_SIZE = 60


def _filler_pool(rng: np.random.Generator) -> list[str]:
    pool: list[str] = []
    seen = set()
    while len(pool) < _FILLER_POOL_SIZE:
        length = int(rng.integers(2, 5))
        chars = [str(rng.choice(_SYNTH_ALPHABET))]
        while len(chars) < length:
            c = str(rng.choice(_SYNTH_ALPHABET))
            if c != chars[-1]:
                chars.append(c)
        word = "".join(chars)
        if word not in seen:
            seen.add(word)
            pool.append(word)
    return pool


def _marker_word(k: int) -> str:
    a = _SYNTH_ALPHABET[k // len(_SYNTH_ALPHABET)]
    b = _SYNTH_ALPHABET[k % len(_SYNTH_ALPHABET)]
    return a * 2 + b * 2


def generate_synthetic(n: int, seed: int, signal: str) -> CorpusStore:
    """Generate n verses with a perfectly learnable label planted for ``signal``.

    Labels cycle over the task's classes (balanced to within one record). The
    rhyme label equals the verse's final letter; every other task plants a
    class-specific marker word. Pure function of (n, seed, signal).
    """
    if n <= 0:
        raise ValueError("n must be positive")
    task = taxonomy(signal).task_id
    rng = np.random.default_rng(seed)
    pool = _filler_pool(rng)

    if task == "Rhyme":
        classes: tuple[str, ...] = _SYNTH_ALPHABET
    else:
        classes = _TASK_LABELS[task]

    records = []
    for i in range(n):
        k = i % len(classes)
        n_fillers = int(rng.integers(4, 12))
        words = [pool[int(rng.integers(0, len(pool)))] for _ in range(n_fillers)]

        fields: dict[str, Optional[str]] = {}
        if task == "Rhyme":
            letter = classes[k]
            words.append(letter)
            fields["rhyme"] = letter
            single = False
        else:
            words.insert(int(rng.integers(0, len(words) + 1)), _marker_word(k))
            single = rng.random() < 0.1
            if task == "SentimentT":
                sentiment = classes[k]
                types = _TYPES_BY_SENTIMENT[sentiment]
                fields["topic"] = str(rng.choice(types)) + " Poems"
            elif task == "MeterClassical" or task == "MeterAll":
                fields["meter"] = classes[k]
            elif task == "SubMeter":
                meter, variant = classes[k].rsplit(" ", 1)
                fields["meter"] = meter
                fields["variant"] = variant
            elif task == "Gender":
                fields["gender"] = classes[k]

        if single:
            h1, h2 = " ".join(words), None
        else:
            cut = max(1, len(words) // 2)
            h1, h2 = " ".join(words[:cut]), " ".join(words[cut:])
        records.append(VerseRecord(verse_id=i, hemistich1=h1, hemistich2=h2, **fields))
    return CorpusStore(tuple(records), provenance=f"synthetic({seed})")
