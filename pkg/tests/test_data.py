"""Dataset ingestion, vocabulary round trips, reciprocal augmentation,
filter index completeness, and synthetic generation."""

import os

import numpy as np
import pytest

from ime.data import (
    ParseError,
    Quadruple,
    RawQuadruple,
    REFERENCE_STATS,
    TKGDataset,
    augment_reciprocal,
    build_filter_index,
    build_vocabulary,
    check_reference_statistics,
    generate_synthetic,
    index_quadruples,
    labels_of,
    parse_quadruple_file,
    write_splits,
)

ICEWS14_DIR = os.environ.get("IME_ICEWS14_DIR", "")


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def test_parse_simple_line(tmp_path):
    f = tmp_path / "train.txt"
    write_lines(f, ["A\tlikes\tB\t2014-01-01"])
    assert parse_quadruple_file(f) == [RawQuadruple("A", "likes", "B", "2014-01-01")]


def test_parse_skips_blank_lines_preserves_order(tmp_path):
    f = tmp_path / "train.txt"
    write_lines(f, ["A\tr\tB\t1", "", "B\tr\tC\t2"])
    quads = parse_quadruple_file(f)
    assert [q.head for q in quads] == ["A", "B"]


def test_parse_error_names_line(tmp_path):
    f = tmp_path / "train.txt"
    write_lines(f, ["A\tr\tB\t1", "A\tr\tB"])
    with pytest.raises(ParseError, match=":2"):
        parse_quadruple_file(f)


def test_parse_empty_field_rejected(tmp_path):
    f = tmp_path / "train.txt"
    write_lines(f, ["A\t\tB\t1"])
    with pytest.raises(ParseError):
        parse_quadruple_file(f)


def test_parse_empty_file_is_empty_list(tmp_path):
    f = tmp_path / "train.txt"
    f.write_text("", encoding="utf-8")
    assert parse_quadruple_file(f) == []


def test_vocabulary_counts_single_quad():
    vocab = build_vocabulary([RawQuadruple("A", "r", "B", "t0")])
    assert (vocab.n_entities, vocab.n_relations, vocab.n_timestamps) == (2, 1, 1)


def test_vocabulary_set_semantics():
    q = RawQuadruple("A", "r", "B", "t0")
    one = build_vocabulary([q])
    two = build_vocabulary([q, q])
    assert (one.n_entities, one.n_relations, one.n_timestamps) == (
        two.n_entities,
        two.n_relations,
        two.n_timestamps,
    )


def test_vocabulary_first_occurrence_order():
    quads = [RawQuadruple("B", "r2", "A", "t1"), RawQuadruple("A", "r1", "C", "t0")]
    vocab = build_vocabulary(quads)
    assert vocab.entities == ["B", "A", "C"]
    assert vocab.relations == ["r2", "r1"]
    assert vocab.timestamps == ["t1", "t0"]


def test_vocabulary_empty_errors():
    with pytest.raises(ValueError):
        build_vocabulary([])


def test_index_label_round_trip():
    quads = [
        RawQuadruple("X", "knows", "Y", "d1"),
        RawQuadruple("Y", "visits", "Z", "d2"),
        RawQuadruple("Z", "knows", "X", "d1"),
    ]
    vocab = build_vocabulary(quads)
    indexed = index_quadruples(quads, vocab)
    assert [labels_of(q, vocab) for q in indexed] == quads


def test_vocabulary_tsv_dump(tmp_path):
    vocab = build_vocabulary([RawQuadruple("A", "r", "B", "t0")])
    vocab.write_tsv(tmp_path)
    entities = (tmp_path / "entities.tsv").read_text().splitlines()
    assert entities == ["A\t0", "B\t1"]
    assert (tmp_path / "relations.tsv").read_text() == "r\t0\n"
    assert (tmp_path / "timestamps.tsv").read_text() == "t0\t0\n"


def test_augment_reciprocal_definition():
    out = augment_reciprocal([Quadruple(0, 0, 1, 0)], n_relations=1)
    assert out == [Quadruple(0, 0, 1, 0), Quadruple(1, 1, 0, 0)]


def test_augment_empty():
    assert augment_reciprocal([], n_relations=3) == []


def test_augment_doubles_and_is_involutive():
    quads = [Quadruple(0, 1, 2, 0), Quadruple(2, 0, 0, 1)]
    out = augment_reciprocal(quads, n_relations=2)
    assert len(out) == 2 * len(quads)
    # mapping r+|R| back to r on the reciprocal half recovers the originals
    recovered = [Quadruple(q.o, q.r - 2, q.s, q.t) for q in out[len(quads):]]
    assert recovered == quads


def test_augment_rejects_already_augmented():
    with pytest.raises(ValueError):
        augment_reciprocal([Quadruple(0, 5, 1, 0)], n_relations=3)


def test_filter_index_groups maybe_remove():
    pass


def test_filter_index_groups():
    idx = build_filter_index([Quadruple(0, 0, 1, 0), Quadruple(0, 0, 2, 0)])
    assert idx[(0, 0, 0)] == {1, 2}


def test_filter_index_disjoint_keys_are_singletons():
    idx = build_filter_index([Quadruple(0, 0, 1, 0), Quadruple(1, 0, 2, 1)])
    assert idx[(0, 0, 0)] == {1}
    assert idx[(1, 0, 1)] == {2}


def test_filter_index_complete_over_synthetic_dataset():
    splits = generate_synthetic(12, 2, 3, "mixed", seed=5)
    dataset = TKGDataset.from_raw_splits(splits)
    index = dataset.filter_index()
    for name in ("train", "valid", "test"):
        for q in dataset.augmented(name):
            assert q.o in index[(q.s, q.r, q.t)]


def test_synthetic_ring_four_entities_forms_cycle():
    splits = generate_synthetic(4, 1, 1, "ring", seed=0)
    facts = [q for qs in splits.values() for q in qs]
    assert len(facts) == 4
    edges = sorted((q.head, q.tail) for q in facts)
    assert edges == [("e0", "e1"), ("e1", "e2"), ("e2", "e3"), ("e3", "e0")]


def test_synthetic_chain_has_n_minus_one_facts():
    splits = generate_synthetic(4, 1, 1, "chain", seed=0)
    facts = [q for qs in splits.values() for q in qs]
    assert len(facts) == 3


def test_synthetic_split_proportions():
    splits = generate_synthetic(20, 2, 4, "ring", seed=7)
    assert len(splits["train"]) == 64
    assert len(splits["valid"]) == 8
    assert len(splits["test"]) == 8


def test_synthetic_deterministic(tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    for d in (a_dir, b_dir):
        write_splits(generate_synthetic(10, 2, 3, "mixed", seed=42), d)
    for name in ("train", "valid", "test"):
        assert (a_dir / f"{name}.txt").read_bytes() == (b_dir / f"{name}.txt").read_bytes()


def test_synthetic_rejects_too_small():
    with pytest.raises(ValueError):
        generate_synthetic(1, 1, 1, "ring", seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(4, 1, 1, "spiral", seed=0)


def test_dataset_loads_from_tsv(tmp_path):
    write_splits(generate_synthetic(8, 2, 2, "ring", seed=3), tmp_path)
    dataset = TKGDataset.load(tmp_path)
    stats = dataset.statistics()
    assert stats.n_train + stats.n_valid + stats.n_test == 16
    assert stats.n_entities == 8


def test_reference_stats_table():
    assert REFERENCE_STATS["icews14"].n_train == 72826
    assert REFERENCE_STATS["icews14"].n_entities == 6869
    assert REFERENCE_STATS["icews14"].n_relations == 230
    assert REFERENCE_STATS["icews14"].n_timestamps == 365
    assert REFERENCE_STATS["icews05-15"].n_train == 368962
    assert REFERENCE_STATS["gdelt"].n_train == 2735685


def test_reference_check_rejects_mismatch():
    stats = TKGDataset.from_raw_splits(generate_synthetic(8, 2, 2, "ring", seed=3)).statistics()
    with pytest.raises(ValueError):
        check_reference_statistics(stats, "icews14")
    with pytest.raises(KeyError):
        check_reference_statistics(stats, "unknown-benchmark")


@pytest.mark.skipif(not ICEWS14_DIR, reason="set IME_ICEWS14_DIR to run the benchmark ingestion check")
def test_icews14_reference_counts():
    dataset = TKGDataset.load(ICEWS14_DIR)
    check_reference_statistics(dataset.statistics(), "icews14")
    assert len(dataset.augmented("train")) == 2 * 72826
