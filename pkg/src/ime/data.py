"""Quadruple dataset ingestion, vocabularies, augmentation and synthesis.

Datasets are directories with `train.txt`, `valid.txt` and `test.txt`, each
a 4-column TSV: head TAB relation TAB tail TAB timestamp.  Timestamps are
opaque labels (each distinct string becomes one discrete index).  All
functions here are pure over immutable inputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

__all__ = [
    "RawQuadruple",
    "Quadruple",
    "Vocabulary",
    "ParseError",
    "parse_quadruple_file",
    "build_vocabulary",
    "index_quadruples",
    "labels_of",
    "augment_reciprocal",
    "build_filter_index",
    "TKGDataset",
    "DatasetStatistics",
    "REFERENCE_STATS",
    "check_reference_statistics",
    "generate_synthetic",
    "write_splits",
    "SPLIT_NAMES",
]

SPLIT_NAMES = ("train", "valid", "test")


class RawQuadruple(NamedTuple):
    head: str
    relation: str
    tail: str
    timestamp: str


class Quadruple(NamedTuple):
    s: int
    r: int
    o: int
    t: int


class ParseError(ValueError):
    """A malformed line in a quadruple file, with file and line number."""


def parse_quadruple_file(path) -> list[RawQuadruple]:
    """Read one 4-column TSV file; empty lines are skipped, order preserved."""
    quads: list[RawQuadruple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            if any(not f for f in fields):
                raise ParseError(f"{path}:{lineno}: empty field")
            quads.append(RawQuadruple(*fields))
    return quads


@dataclass
class Vocabulary:
    """Dense label<->index bijections for entities, relations, timestamps."""

    entities: list[str]
    relations: list[str]
    timestamps: list[str]

    def __post_init__(self):
        self.entity_index = {label: i for i, label in enumerate(self.entities)}
        self.relation_index = {label: i for i, label in enumerate(self.relations)}
        self.timestamp_index = {label: i for i, label in enumerate(self.timestamps)}
        for labels, index in (
            (self.entities, self.entity_index),
            (self.relations, self.relation_index),
            (self.timestamps, self.timestamp_index),
        ):
            if len(labels) != len(index):
                raise ValueError("duplicate labels in vocabulary")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_timestamps(self) -> int:
        return len(self.timestamps)

    def write_tsv(self, out_dir) -> None:
        """Dump label TAB index files, one per element kind."""
        os.makedirs(out_dir, exist_ok=True)
        for fname, labels in (
            ("entities.tsv", self.entities),
            ("relations.tsv", self.relations),
            ("timestamps.tsv", self.timestamps),
        ):
            with open(os.path.join(out_dir, fname), "w", encoding="utf-8") as fh:
                for i, label in enumerate(labels):
                    fh.write(f"{label}\t{i}\n")


def build_vocabulary(quads: Iterable[RawQuadruple]) -> Vocabulary:
    """Index labels in first-occurrence order over the given quadruples."""
    entities: dict[str, None] = {}
    relations: dict[str, None] = {}
    timestamps: dict[str, None] = {}
    n = 0
    for q in quads:
        entities.setdefault(q.head)
        entities.setdefault(q.tail)
        relations.setdefault(q.relation)
        timestamps.setdefault(q.timestamp)
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty quadruple list")
    return Vocabulary(list(entities), list(relations), list(timestamps))


def index_quadruples(quads: Iterable[RawQuadruple], vocab: Vocabulary) -> list[Quadruple]:
    return [
        Quadruple(
            vocab.entity_index[q.head],
            vocab.relation_index[q.relation],
            vocab.entity_index[q.tail],
            vocab.timestamp_index[q.timestamp],
        )
        for q in quads
    ]


def labels_of(quad: Quadruple, vocab: Vocabulary) -> RawQuadruple:
    """Inverse of `index_quadruples` for one fact (relation must be unaugmented)."""
    return RawQuadruple(
        vocab.entities[quad.s],
        vocab.relations[quad.r],
        vocab.entities[quad.o],
        vocab.timestamps[quad.t],
    )


def augment_reciprocal(quads: list[Quadruple], n_relations: int) -> list[Quadruple]:
    """Append the inverse fact (o, r + |R|, s, t) for every (s, r, o, t)."""
    for q in quads:
        if q.r >= n_relations:
            raise ValueError(f"relation index {q.r} already augmented (|R| = {n_relations})")
    return list(quads) + [Quadruple(q.o, q.r + n_relations, q.s, q.t) for q in quads]


def build_filter_index(quads: Iterable[Quadruple]) -> dict[tuple[int, int, int], set[int]]:
    """Map (s, r, t) to every true tail seen across the given quadruples."""
    index: dict[tuple[int, int, int], set[int]] = {}
    for q in quads:
        index.setdefault((q.s, q.r, q.t), set()).add(q.o)
    return index


@dataclass(frozen=True)
class DatasetStatistics:
    n_entities: int
    n_relations: int
    n_timestamps: int
    n_train: int
    n_valid: int
    n_test: int


# Published counts for the standard benchmark distributions.
REFERENCE_STATS = {
    "icews14": DatasetStatistics(6869, 230, 365, 72826, 8941, 8963),
    "icews05-15": DatasetStatistics(10094, 251, 4017, 368962, 46275, 46092),
    "gdelt": DatasetStatistics(500, 20, 366, 2735685, 341961, 341961),
}


def check_reference_statistics(stats: DatasetStatistics, name: str) -> None:
    """Raise if the parsed dataset does not match the published counts."""
    key = name.lower()
    if key not in REFERENCE_STATS:
        raise KeyError(f"no reference statistics for dataset {name!r}; known: {sorted(REFERENCE_STATS)}")
    expected = REFERENCE_STATS[key]
    if stats != expected:
        raise ValueError(f"dataset statistics mismatch for {name}: parsed {stats}, expected {expected}")


class TKGDataset:
    """A loaded dataset: vocabulary plus indexed train/valid/test splits.

    The vocabulary is built over all three splits (transductive setting);
    stored quadruples are unaugmented, with reciprocal facts added on demand.
    """

    def __init__(self, vocab: Vocabulary, train, valid, test):
        self.vocab = vocab
        self.splits: dict[str, list[Quadruple]] = {"train": train, "valid": valid, "test": test}

    @classmethod
    def load(cls, data_dir) -> "TKGDataset":
        raw = {name: parse_quadruple_file(os.path.join(data_dir, f"{name}.txt")) for name in SPLIT_NAMES}
        vocab = build_vocabulary([q for name in SPLIT_NAMES for q in raw[name]])
        indexed = {name: index_quadruples(raw[name], vocab) for name in SPLIT_NAMES}
        return cls(vocab, indexed["train"], indexed["valid"], indexed["test"])

    @classmethod
    def from_raw_splits(cls, splits: dict[str, list[RawQuadruple]]) -> "TKGDataset":
        vocab = build_vocabulary([q for name in SPLIT_NAMES for q in splits[name]])
        indexed = {name: index_quadruples(splits[name], vocab) for name in SPLIT_NAMES}
        return cls(vocab, indexed["train"], indexed["valid"], indexed["test"])

    def augmented(self, split: str) -> list[Quadruple]:
        return augment_reciprocal(self.splits[split], self.vocab.n_relations)

    def filter_index(self) -> dict[tuple[int, int, int], set[int]]:
        all_quads = [q for name in SPLIT_NAMES for q in self.augmented(name)]
        return build_filter_index(all_quads)

    def statistics(self) -> DatasetStatistics:
        return DatasetStatistics(
            self.vocab.n_entities,
            self.vocab.n_relations,
            self.vocab.n_timestamps,
            len(self.splits["train"]),
            len(self.splits["valid"]),
            len(self.splits["test"]),
        )


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

PATTERNS = ("ring", "chain", "mixed")


def _pattern_edges(pattern: str, n_entities: int) -> list[tuple[int, int]]:
    ring = [(i, (i + 1) % n_entities) for i in range(n_entities)]
    chain = [(i, i + 1) for i in range(n_entities - 1)]
    if pattern == "ring":
        return ring
    if pattern == "chain":
        return chain
    # mixed: alternate ring-closure and chain edges by source parity.
    return [e for e in ring if e[0] % 2 == 0] + [e for e in chain if e[0] % 2 == 1]


def generate_synthetic(
    n_entities: int,
    n_relations: int,
    n_timestamps: int,
    pattern: str,
    seed: int,
) -> dict[str, list[RawQuadruple]]:
    """Build a deterministic toy TKG with an 80/10/10 split.

    Ring links every entity i to (i+1) mod n at each timestamp, chain links
    i to i+1, mixed interleaves both; relations rotate over sources.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {PATTERNS}")
    if n_entities < 2 or n_relations < 1 or n_timestamps < 1:
        raise ValueError(
            f"counts too small for pattern {pattern!r}: "
            f"need >= 2 entities and >= 1 relation/timestamp, "
            f"got ({n_entities}, {n_relations}, {n_timestamps})"
        )
    edges = _pattern_edges(pattern, n_entities)
    if not edges:
        raise ValueError(f"pattern {pattern!r} yields no facts for {n_entities} entities")
    facts = [
        RawQuadruple(f"e{i}", f"rel{i % n_relations}", f"e{j}", f"ts{t}")
        for t in range(n_timestamps)
        for i, j in edges
    ]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(facts))
    n_valid = len(facts) // 10
    n_test = len(facts) // 10
    n_train = len(facts) - n_valid - n_test
    shuffled = [facts[k] for k in order]
    return {
        "train": shuffled[:n_train],
        "valid": shuffled[n_train : n_train + n_valid],
        "test": shuffled[n_train + n_valid :],
    }


def write_splits(splits: dict[str, list[RawQuadruple]], out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name in SPLIT_NAMES:
        with open(os.path.join(out_dir, f"{name}.txt"), "w", encoding="utf-8") as fh:
            for q in splits[name]:
                fh.write(f"{q.head}\t{q.relation}\t{q.tail}\t{q.timestamp}\n")
