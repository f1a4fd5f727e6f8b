import numpy as np
import pytest

from sicot.errors import DimensionError, FormatError, MissingFileError
from sicot.text import (
    EmbeddingTable,
    Vocab,
    build_vocab,
    embeddings_from_vectors,
    encode,
    load_embedding_table,
    load_embeddings,
    read_word2vec_text,
    tokenize,
)


def test_tokenize_example():
    assert tokenize("Fresh Soft Drink, 330ml!") == ["fresh", "soft", "drink", "330ml"]


def test_tokenize_empty_and_punctuation_only():
    assert tokenize("") == []
    assert tokenize(" ,.!? ") == []


def test_tokenize_is_idempotent():
    for s in ["Fresh Soft Drink, 330ml!", "a--b  c;d", "Ünïcode, Wörds."]:
        once = tokenize(s)
        assert tokenize(" ".join(once)) == once


def test_tokenize_unsegmented_cjk_becomes_unigrams():
    assert tokenize("新款连衣裙") == ["新", "款", "连", "衣", "裙"]
    assert tokenize("iPhone手机壳") == ["iphone", "手", "机", "壳"]
    # already segmented text keeps whole words
    assert tokenize("连衣裙 新款") == ["连衣裙", "新款"]


def _corpus_with_frequencies(freqs: dict):
    docs = [[] for _ in range(max(freqs.values()))]
    for w, f in freqs.items():
        for i in range(f):
            docs[i].append(w)
    return docs


def test_vocab_drops_two_from_each_end_of_forty():
    freqs = {f"w{i:02d}": i + 1 for i in range(40)}
    v = build_vocab(_corpus_with_frequencies(freqs), 0.05)
    assert len(v) == 36
    assert set(v.dropped_frequent) == {"w39", "w38"}
    assert set(v.dropped_infrequent) == {"w00", "w01"}


def test_vocab_zero_drop_keeps_all():
    v = build_vocab([["a", "b"], ["b", "c"]], 0.0)
    assert set(v.words) == {"a", "b", "c"}


def test_vocab_tie_at_cut_drops_lexicographically_earlier():
    # 20 words -> k = 1 per end; "apple" and "zebra" tie for the rarest
    freqs = {f"m{i:02d}": 5 for i in range(16)}
    freqs.update({"apple": 1, "zebra": 1, "top": 9, "alsotop": 9})
    v = build_vocab(_corpus_with_frequencies(freqs), 0.05)
    assert v.dropped_infrequent == ("apple",)
    assert v.dropped_frequent == ("alsotop",)
    assert "zebra" in v and "top" in v


def test_vocab_index_order_is_frequency_then_alphabetical():
    v = build_vocab([["b", "a"], ["a", "c"], ["a", "b"]], 0.0)
    assert v.words == ("a", "b", "c")
    assert v.doc_frequency == (3, 2, 1)


def test_vocab_document_frequency_counts_a_title_once():
    v = build_vocab([["x", "x", "x"], ["y"]], 0.0)
    assert dict(zip(v.words, v.doc_frequency)) == {"x": 1, "y": 1}


def test_vocab_errors():
    with pytest.raises(ValueError):
        build_vocab([], 0.05)
    with pytest.raises(ValueError):
        build_vocab([["a", "b"]], 0.5)


def test_vocab_round_trip(tmp_path):
    v = build_vocab([["a", "b"], ["a"]], 0.0)
    v.save(tmp_path / "v.tsv")
    assert Vocab.load(tmp_path / "v.tsv") == v


def test_vocab_load_errors(tmp_path):
    with pytest.raises(MissingFileError):
        Vocab.load(tmp_path / "nope")
    (tmp_path / "bad.tsv").write_text("a\t1\nb\tx\n")
    with pytest.raises(FormatError, match="line 2"):
        Vocab.load(tmp_path / "bad.tsv")


def test_encode_cases():
    v = Vocab(["red", "dress", "silk"], [3, 2, 1])
    assert encode("red dress silk", v).tokens == [0, 1, 2]
    rec = encode("hot sale", v, "s1")
    assert rec.tokens == [] and rec.droppable and rec.sample_id == "s1"
    assert encode("Silk, HOT red!", v).tokens == [2, 0]


def test_random_table_is_seeded_and_small():
    v = Vocab(["a", "b", "c"], [1, 1, 1])
    t1 = load_embeddings(None, v, 8, seed=3)
    t2 = load_embeddings(None, v, 8, seed=3)
    assert np.array_equal(t1.weight.data, t2.weight.data)
    assert t1.random_rows == 3
    assert np.all(np.abs(t1.weight.data) <= 0.5 / 8)


def _write_w2v(path, vectors, dim):
    lines = [f"{len(vectors)} {dim}"] + [w + " " + " ".join(str(x) for x in vec) for w, vec in vectors.items()]
    path.write_text("\n".join(lines) + "\n")


def test_file_covering_vocab_has_no_random_rows(tmp_path):
    v = Vocab(["a", "b"], [2, 1])
    _write_w2v(tmp_path / "e.txt", {"a": [1.0, 2.0], "b": [3.0, 4.0], "extra": [0.0, 0.0]}, 2)
    t = load_embeddings(tmp_path / "e.txt", v, 2)
    assert t.random_rows == 0
    assert t.weight.data.tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_partial_file_fills_missing_rows_randomly(tmp_path):
    v = Vocab(["a", "b", "c"], [3, 2, 1])
    _write_w2v(tmp_path / "e.txt", {"b": [1.0, 1.0]}, 2)
    t = load_embeddings(tmp_path / "e.txt", v, 2, seed=0)
    assert t.random_rows == 2
    assert t.weight.data[1].tolist() == [1.0, 1.0]


def test_dimension_mismatch_is_a_format_error(tmp_path):
    v = Vocab(["a"], [1])
    _write_w2v(tmp_path / "e.txt", {"a": [0.5] * 50}, 50)
    with pytest.raises(FormatError) as err:
        load_embeddings(tmp_path / "e.txt", v, 64)
    assert isinstance(err.value, DimensionError)


def test_malformed_embedding_file(tmp_path):
    (tmp_path / "e.txt").write_text("2 2\na 1.0 2.0\nb 1.0\n")
    with pytest.raises(FormatError, match="line 3"):
        read_word2vec_text(tmp_path / "e.txt")
    (tmp_path / "h.txt").write_text("two 2\n")
    with pytest.raises(FormatError, match="line 1"):
        read_word2vec_text(tmp_path / "h.txt")
    with pytest.raises(MissingFileError):
        read_word2vec_text(tmp_path / "missing.txt")


def test_table_save_and_strict_reload(tmp_path):
    v = Vocab(["a", "b"], [2, 1])
    t = EmbeddingTable.random(2, 3, seed=9)
    t.save(tmp_path / "t.txt", v)
    back = load_embedding_table(tmp_path / "t.txt", v)
    assert np.array_equal(back.weight.data, t.weight.data)


def test_vectors_with_wrong_width_rejected():
    with pytest.raises(DimensionError):
        embeddings_from_vectors({"a": np.ones(3)}, Vocab(["a"], [1]), 4)


def test_frozen_table_has_no_gradient_flag():
    t = EmbeddingTable(np.zeros((2, 2)), trainable=False)
    assert not t.weight.requires_grad
