"""Tests for corpus and table I/O."""

import pandas as pd
import pytest

from covgen.data import (
    InputError,
    append_rows,
    format_corpus,
    iter_corpus,
    read_config_hash,
    read_corpus,
    read_table,
    thread_count,
    write_table,
)


def create_test_corpus(tmp_path, text):
    """Write a corpus file and return its path."""
    path = tmp_path / "corpus.smi"
    path.write_text(text)
    return path


def test_iter_corpus_fields_and_comments(tmp_path):
    """Test ids, labels, comments, blank lines and generated ids."""
    path = create_test_corpus(tmp_path, "# header\nCCO\tm1\t1\n\nc1ccccc1\n  \nCCN\tm3\n")

    records = list(iter_corpus(path))
    assert [r.smiles for r in records] == ["CCO", "c1ccccc1", "CCN"]
    assert [r.id for r in records] == ["m1", "L000004", "m3"]
    assert [r.label for r in records] == ["1", None, None]
    assert records[1].line == 4


def test_empty_smiles_keeps_its_id(tmp_path):
    """Test an empty SMILES field is read back as an empty string."""
    path = create_test_corpus(tmp_path, format_corpus(["", "CC"], ["S0000000", "S0000001"]))

    records = read_corpus(path)
    assert [(r.smiles, r.id) for r in records] == [("", "S0000000"), ("CC", "S0000001")]


def test_iter_corpus_errors(tmp_path):
    """Test missing files and lines with too many fields."""
    with pytest.raises(InputError):
        list(iter_corpus(tmp_path / "absent.smi"))
    with pytest.raises(InputError, match=":2:"):
        list(iter_corpus(create_test_corpus(tmp_path, "CCO\nCCO\ta\tb\tc\n")))


def test_format_corpus():
    """Test corpus text layout with ids and labels."""
    assert format_corpus(["CCO", "CC"]) == "CCO\nCC\n"
    assert format_corpus(["CCO"], ["a"], [1]) == "CCO\ta\t1\n"
    assert format_corpus([]) == ""


def test_table_round_trip_with_hash(tmp_path):
    """Test tables keep their config hash line and SMILES with '#'."""
    df = pd.DataFrame({"id": ["a", "b"], "smiles": ["C#N", "CCO"], "value": [1.5, -2.0]})
    path = write_table(df, tmp_path / "out.csv", "0123456789abcdef")

    assert read_config_hash(path) == "0123456789abcdef"
    pd.testing.assert_frame_equal(read_table(path), df)
    write_table(df, tmp_path / "plain.csv")
    assert read_config_hash(tmp_path / "plain.csv") is None
    with pytest.raises(InputError):
        read_table(tmp_path / "absent.csv")


def test_append_rows(tmp_path):
    """Test appended rows follow the header and keep the hash line."""
    first = pd.DataFrame({"iteration": [0], "value": [0.5]})
    path = write_table(first, tmp_path / "log.csv", "0123456789abcdef")
    append_rows(pd.DataFrame({"iteration": [1, 2], "value": [0.25, 0.75]}), path)

    assert read_config_hash(path) == "0123456789abcdef"
    assert read_table(path)["iteration"].tolist() == [0, 1, 2]
    with pytest.raises(InputError):
        append_rows(first, tmp_path / "absent.csv")


def test_thread_count(monkeypatch):
    """Test the thread cap environment variable."""
    monkeypatch.setenv("COVGEN_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.delenv("COVGEN_THREADS")
    assert thread_count() >= 1
    monkeypatch.setenv("COVGEN_THREADS", "zero")
    with pytest.raises(InputError):
        thread_count()
    monkeypatch.setenv("COVGEN_THREADS", "0")
    with pytest.raises(InputError):
        thread_count()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
