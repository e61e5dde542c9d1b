"""Tests for molecular descriptors, QED and synthetic accessibility."""

import math

import numpy as np
import pytest

from covgen.chem import parse_smiles
from covgen.descriptors import (
    FRAGMENT_DEFAULT,
    FragmentScoreTable,
    aromatic_ring_count,
    compute_properties,
    crippen_logp,
    fit_fragment_table,
    h_bond_acceptors,
    h_bond_donors,
    load_fragment_table,
    molecular_weight,
    polar_surface_area,
    qed,
    rotatable_bonds,
    sa_components,
    sa_score,
    save_fragment_table,
    structural_alerts,
)
from covgen.synthetic import toy_corpus


def create_test_table(n=200, seed=0):
    """Fragment table fitted on a small synthetic corpus."""
    corpus = toy_corpus(n, seed=seed)
    return corpus, fit_fragment_table(corpus, corpus_id="toy", created="2026-01-01")


@pytest.mark.parametrize(
    "smiles,expected",
    [("CCO", -0.0014), ("c1ccccc1", 1.6866), ("C", 0.6361), ("Oc1ccccc1", 1.3922)],
)
def test_crippen_logp_reference_values(smiles, expected):
    """Test LogP against Wildman-Crippen reference values."""
    np.testing.assert_allclose(crippen_logp(parse_smiles(smiles)), expected, atol=1e-4)


def test_molecular_weight():
    """Test average molecular weight with implicit hydrogens."""
    np.testing.assert_allclose(molecular_weight(parse_smiles("C")), 16.043, atol=1e-3)
    np.testing.assert_allclose(molecular_weight(parse_smiles("CCO")), 46.069, atol=1e-3)


def test_polar_surface_area():
    """Test TPSA contributions of hydroxyl, amide and pyridine nitrogen."""
    np.testing.assert_allclose(polar_surface_area(parse_smiles("CCO")), 20.23, atol=1e-2)
    np.testing.assert_allclose(polar_surface_area(parse_smiles("CC(=O)N")), 43.09, atol=1e-2)
    np.testing.assert_allclose(polar_surface_area(parse_smiles("c1ccncc1")), 12.89, atol=1e-2)
    assert polar_surface_area(parse_smiles("CCCC")) == 0.0


def test_counts():
    """Test donor, acceptor, rotatable bond and aromatic ring counts."""
    ethanol = parse_smiles("CCO")
    assert h_bond_donors(ethanol) == 1
    assert h_bond_acceptors(ethanol) == 1

    assert rotatable_bonds(parse_smiles("CCCC")) == 1
    assert rotatable_bonds(parse_smiles("CCO")) == 0
    assert rotatable_bonds(parse_smiles("CC(=O)NC")) == 0

    assert aromatic_ring_count(parse_smiles("c1ccc2ccccc2c1")) == 2
    assert aromatic_ring_count(parse_smiles("C1CCCCC1")) == 0


def test_structural_alerts():
    """Test the Michael acceptor alert fires on an acrylamide."""
    assert "michael_acceptor" in structural_alerts(parse_smiles("C=CC(=O)Nc1ccccc1"))
    assert structural_alerts(parse_smiles("CCO")) == []


def test_compute_properties_fields():
    """Test the property vector carries all eight QED inputs."""
    props = compute_properties(parse_smiles("CC(=O)Oc1ccccc1C(=O)O"))

    assert set(props.as_dict()) == {"mw", "logp", "hba", "hbd", "psa", "rotb", "arom", "alerts"}
    assert props.arom == 1
    assert props.hbd == 1


def test_qed_range_and_ordering():
    """Test QED lies in (0, 1] and prefers a drug-like molecule over a long alkane."""
    aspirin = qed(parse_smiles("CC(=O)Oc1ccccc1C(=O)O"))
    alkane = qed(parse_smiles("CCCCCCCCCCCCCCCCCCCC"))

    for value in (aspirin, alkane):
        assert 0.0 < value <= 1.0
    assert aspirin > alkane


def test_fragment_table_fit():
    """Test contributions are finite and unseen environments take the default."""
    _, table = create_test_table()

    assert len(table) > 0
    assert table.corpus_id == "toy"
    values = np.array(list(table.contributions.values()))
    assert np.all(np.isfinite(values))
    assert table.contribution(-1) == FRAGMENT_DEFAULT


def test_fragment_table_rejects_empty_corpus():
    """Test fitting on only invalid SMILES fails."""
    with pytest.raises(ValueError):
        fit_fragment_table(["C1CC", "CX"], corpus_id="bad")


def test_fragment_table_rejects_non_finite():
    """Test non-finite contributions are refused."""
    with pytest.raises(ValueError):
        FragmentScoreTable(contributions={1: math.inf}, corpus_id="x", created="")


def test_fragment_table_save_load(tmp_path):
    """Test the text format restores identical contributions."""
    _, table = create_test_table(n=50)
    path = save_fragment_table(table, tmp_path / "fragment_table.txt")

    loaded = load_fragment_table(path)
    assert loaded.contributions == table.contributions
    assert loaded.corpus_id == "toy"
    assert loaded.created == "2026-01-01"


def test_fragment_table_bad_version(tmp_path):
    """Test an unknown version is rejected."""
    path = tmp_path / "table.txt"
    path.write_text("# covgen fragment table v9\n00000000000000ff\t0.5\n")

    with pytest.raises(ValueError, match="Available"):
        load_fragment_table(path)


def test_sa_score_range_and_ordering():
    """Test corpus molecules score easier than an unseen exotic ring."""
    corpus, table = create_test_table()

    familiar = sa_score(parse_smiles(corpus[0]), table)
    exotic = sa_score(parse_smiles("[Si]1[Si][Si][Si]1"), table)
    assert 1.0 <= familiar <= 10.0
    assert 1.0 <= exotic <= 10.0
    assert familiar < exotic


def test_sa_complexity_penalties():
    """Test spiro and macrocycle penalties are applied."""
    _, table = create_test_table(n=50)

    spiro = sa_components(parse_smiles("C1CCC2(CC1)CCCC2"), table)
    assert spiro.spiro_penalty > 0.0

    macrocycle = sa_components(parse_smiles("C1CCCCCCCCC1"), table)
    np.testing.assert_allclose(macrocycle.macrocycle_penalty, math.log10(2))

    plain = sa_components(parse_smiles("CCO"), table)
    assert plain.spiro_penalty == 0.0
    assert plain.macrocycle_penalty == 0.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
