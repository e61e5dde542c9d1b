"""Tests for the synthetic corpora and oracle scores used by the acceptance runs."""

import numpy as np
import pytest

from covgen.chem import parse_smiles
from covgen.synthetic import (
    contains_motif,
    oracle_docking_score,
    planted_motif_corpus,
    toy_corpus,
)


def test_toy_corpus_is_valid_and_deterministic():
    """Test every toy molecule parses and seeds reproduce the corpus."""
    corpus = toy_corpus(200, seed=3)

    for s in corpus:
        parse_smiles(s)
    assert corpus == toy_corpus(200, seed=3)
    assert corpus != toy_corpus(200, seed=4)


def test_toy_corpus_warhead_fraction():
    """Test the warhead fraction controls acrylamide content."""
    assert not any(contains_motif(s) for s in toy_corpus(100, warhead_fraction=0.0))
    assert all(contains_motif(s) for s in toy_corpus(100, warhead_fraction=1.0))
    with pytest.raises(ValueError):
        toy_corpus(5, warhead_fraction=1.5)
    with pytest.raises(ValueError):
        toy_corpus(-1)


def test_planted_labels_match_substructure_search():
    """Test planted labels and motif atoms agree with the motif query."""
    smiles, labels, atoms = planted_motif_corpus(150, seed=2)

    assert labels.tolist() == [int(contains_motif(s)) for s in smiles]
    assert 0 < labels.sum() < len(labels)
    for label, hit in zip(labels, atoms):
        assert (len(hit) > 0) == bool(label)
        if label:
            assert len(hit) >= 5


def test_oracle_docking_score():
    """Test the oracle is deterministic, composition-based and in a docking range."""
    assert oracle_docking_score("CCCC") == -4.0
    np.testing.assert_allclose(oracle_docking_score("c1ccccc1"), -8.0)
    assert oracle_docking_score("c1ccccc1") == oracle_docking_score("c1ccc2ccccc2c1")
    assert oracle_docking_score(parse_smiles("c1ccncc1")) < oracle_docking_score("c1ccccc1")


def test_contains_motif_invalid_smiles():
    """Test invalid SMILES never contain a motif."""
    assert not contains_motif("C1CC")
    assert contains_motif("C=CC(=O)NC")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
