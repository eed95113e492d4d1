import pytest

from evlink.corpus import (
    Corpus,
    CorpusError,
    MultimodalNode,
    load_corpus,
    modality_indicator,
    save_corpus,
)

from conftest import make_node, write_corpus_file


def test_load_counts(tmp_path):
    path = write_corpus_file(
        tmp_path / "corpus.jsonl",
        [
            {"id": "m1", "kind": "mention", "name": "a", "context": "ctx"},
            {"id": "m2", "kind": "mention", "name": "b", "context": "", "image_ref": "x"},
            {"id": "e1", "kind": "entity", "name": "a", "context": "d1"},
            {"id": "e2", "kind": "entity", "name": "b", "context": "d2", "image_ref": "y"},
            {"id": "e3", "kind": "entity", "name": "c", "context": "d3"},
        ],
    )
    corpus = load_corpus(path)
    assert len(corpus.mentions) == 2
    assert len(corpus.entities) == 3


def test_record_without_image_field(tmp_path):
    path = write_corpus_file(
        tmp_path / "c.jsonl",
        [
            {"id": "m1", "kind": "mention", "name": "a", "context": ""},
            {"id": "e1", "kind": "entity", "name": "a", "context": ""},
        ],
    )
    corpus = load_corpus(path)
    assert corpus.get("m1").has_image is False
    assert corpus.get("m1").image_ref is None


def test_duplicate_id_names_the_id(tmp_path):
    path = write_corpus_file(
        tmp_path / "c.jsonl",
        [
            {"id": "e1", "kind": "entity", "name": "a", "context": ""},
            {"id": "e1", "kind": "entity", "name": "b", "context": ""},
        ],
    )
    with pytest.raises(CorpusError, match="e1"):
        load_corpus(path)


def test_malformed_line_names_the_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "e1", "kind": "entity", "name": "a", "context": ""}\nnot json\n')
    with pytest.raises(CorpusError, match="line 2"):
        load_corpus(path)


def test_missing_field_names_the_line(tmp_path):
    path = write_corpus_file(tmp_path / "c.jsonl", [{"id": "e1", "kind": "entity"}])
    with pytest.raises(CorpusError, match="line 1"):
        load_corpus(path)


def test_unknown_kind_rejected():
    with pytest.raises(CorpusError):
        MultimodalNode(id="x", kind="thing", name="x")


def test_modality_indicator():
    with_img = make_node("a", "mention", image="ref")
    without = make_node("b", "mention")
    assert modality_indicator(with_img) == 1
    assert modality_indicator(without) == 0
    # pure: repeated calls agree
    assert modality_indicator(with_img) == modality_indicator(with_img)


def test_empty_context_is_legal():
    node = make_node("m", "mention", name="n", context="")
    assert node.context == ""
    assert node.text() == "n"


def test_round_trip(tmp_path, tiny_corpus):
    path = tmp_path / "out.jsonl"
    save_corpus(tiny_corpus, path)
    again = load_corpus(path)
    assert again == tiny_corpus
    # second round trip is byte-identical
    path2 = tmp_path / "out2.jsonl"
    save_corpus(again, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_modality_stats_match_source(tmp_path, tiny_corpus):
    stats = tiny_corpus.modality_stats()
    assert stats["mention_image_rate"] == pytest.approx(1 / 2)
    assert stats["entity_image_rate"] == pytest.approx(2 / 3)


def test_disjoint_id_spaces():
    with pytest.raises(CorpusError, match="duplicate"):
        Corpus(
            [make_node("x", "mention")],
            [make_node("x", "entity")],
        )


def test_get_unknown_id(tiny_corpus):
    with pytest.raises(CorpusError, match="nope"):
        tiny_corpus.get("nope")
