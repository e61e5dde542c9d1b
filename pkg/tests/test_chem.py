"""Tests for SMILES parsing, canonicalization, fingerprints and substructure search."""

from itertools import permutations

import numpy as np
import pytest

from covgen.chem import (
    AromaticityError,
    BondOrder,
    SmilesParseError,
    SmilesSyntaxError,
    UnknownSymbolError,
    ValenceError,
    canonical_atom_order,
    canonical_smiles,
    canonicalize,
    has_substructure,
    morgan_environments,
    morgan_fingerprint,
    parse_smiles,
    renumber_atoms,
    substructure_match,
    tanimoto,
    validity_check,
)

DRUG_LIKE = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "c1ccc2[nH]ccc2c1CC(=O)N",
    "C=CC(=O)Nc1ccc(cc1)N1CCOCC1",
    "c1ccc2ccccc2c1",
    "c1ccc(cc1)-c1ccncc1",
    "OC1CCN(CC1)c1ncncc1C#N",
]


def create_test_permutations(n_atoms, count=5, seed=0):
    """Random atom orderings for renumbering tests."""
    rng = np.random.default_rng(seed)
    return [list(rng.permutation(n_atoms)) for _ in range(count)]


def brute_force_matches(query, target):
    """Enumerate every injective map and keep those preserving atoms and query bonds."""
    found = []
    for image in permutations(range(len(target.atoms)), len(query.atoms)):
        if any(
            (query.atoms[k].element, query.atoms[k].is_aromatic)
            != (target.atoms[t].element, target.atoms[t].is_aromatic)
            for k, t in enumerate(image)
        ):
            continue
        ok = True
        for bond in query.bonds:
            other = target.bond_between(image[bond.begin], image[bond.end])
            if other is None or other.order != bond.order:
                ok = False
                break
        if ok:
            found.append(image)
    return sorted(found)


def test_parse_ethanol():
    """Test atoms, bonds and implicit hydrogens of a simple chain."""
    m = parse_smiles("CCO")

    assert [a.element for a in m.atoms] == ["C", "C", "O"]
    assert [a.implicit_h for a in m.atoms] == [3, 2, 1]
    assert len(m.bonds) == 2
    assert all(b.order is BondOrder.SINGLE for b in m.bonds)
    assert m.heavy_atom_count == 3


def test_parse_aromatic_ring():
    """Test benzene bonds are aromatic and every atom is a ring member."""
    m = parse_smiles("c1ccccc1")

    assert len(m.bonds) == 6
    assert all(b.order is BondOrder.AROMATIC for b in m.bonds)
    assert all(a.ring_membership and a.is_aromatic for a in m.atoms)
    assert all(a.total_h == 1 for a in m.atoms)
    assert m.rings == ((0, 1, 2, 3, 4, 5),)


def test_parse_heteroaromatics():
    """Test pyridine, pyrrole, thiophene and furan parse."""
    for smiles in ["c1ccncc1", "c1cc[nH]c1", "c1ccsc1", "c1ccoc1"]:
        m = parse_smiles(smiles)
        assert len(m.atoms) in (5, 6)

    pyrrole = parse_smiles("c1cc[nH]c1")
    nitrogen = [a for a in pyrrole.atoms if a.element == "N"][0]
    assert nitrogen.explicit_h == 1


def test_parse_biaryl_bridge_is_single():
    """Test an unmarked bond between two aromatic rings is single."""
    m = parse_smiles("c1ccc(cc1)c1ccccc1")

    bridge = m.bond_between(3, 6)
    assert bridge is not None
    assert bridge.order is BondOrder.SINGLE


def test_parse_charges_and_disconnected():
    """Test bracket charges and multi-component input."""
    m = parse_smiles("[Na+].[Cl-]")

    assert [a.formal_charge for a in m.atoms] == [1, -1]
    assert m.component_count() == 2


@pytest.mark.parametrize(
    "smiles,error",
    [
        ("", SmilesSyntaxError),
        ("CC(C", SmilesSyntaxError),
        ("CC)C", SmilesSyntaxError),
        ("C1CC", SmilesSyntaxError),
        ("CC=", SmilesSyntaxError),
        ("CX", UnknownSymbolError),
        ("C[Xx]", UnknownSymbolError),
        ("C(C)(C)(C)(C)C", ValenceError),
        ("O(C)(C)C", ValenceError),
        ("c1cccc1", AromaticityError),
        ("Cc", AromaticityError),
    ],
)
def test_parse_errors(smiles, error):
    """Test each malformed input raises its error kind."""
    with pytest.raises(error):
        parse_smiles(smiles)


def test_parse_errors_are_value_errors():
    """Test all parse errors share the SmilesParseError base."""
    with pytest.raises(SmilesParseError):
        parse_smiles("C1CC")
    with pytest.raises(ValueError):
        parse_smiles("CX")


def test_validity_check():
    """Test validity_check never raises."""
    assert validity_check("CCO")
    assert not validity_check("")
    assert not validity_check("C1CC")
    assert not validity_check(None)


def test_canonical_permutation_invariance():
    """Test canonical SMILES does not depend on input atom order."""
    for smiles in DRUG_LIKE:
        m = parse_smiles(smiles)
        expected = canonicalize(m)
        for order in create_test_permutations(len(m.atoms)):
            assert canonicalize(renumber_atoms(m, order)) == expected, smiles


def test_canonical_kekule_permutation_invariance():
    """Test the Kekulé rendering is also order independent."""
    for smiles in DRUG_LIKE:
        m = parse_smiles(smiles)
        expected = canonicalize(m, kekulize=True)
        assert not any(ch in expected for ch in "cnos")
        for order in create_test_permutations(len(m.atoms), count=3, seed=1):
            assert canonicalize(renumber_atoms(m, order), kekulize=True) == expected


def test_canonical_equivalent_spellings():
    """Test different spellings of one molecule agree."""
    assert canonical_smiles("OCC") == canonical_smiles("CCO")
    assert canonical_smiles("C(=O)(O)c1ccccc1") == canonical_smiles("OC(=O)c1ccccc1")
    assert canonical_smiles("c1ccncc1") == canonical_smiles("n1ccccc1")
    assert canonical_smiles("CCO") != canonical_smiles("COC")


def test_canonical_round_trip_fixed_point():
    """Test canonicalizing canonical output returns it unchanged."""
    for smiles in DRUG_LIKE + ["[Na+].[Cl-]", "C#N", "[13CH4]", "FC(F)(F)c1ccccc1"]:
        once = canonical_smiles(smiles)
        assert canonical_smiles(once) == once, smiles


def test_canonical_atom_order_is_permutation():
    """Test the written atom order covers every atom once."""
    m = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")

    order = canonical_atom_order(m)
    assert sorted(order) == list(range(len(m.atoms)))


def test_renumber_rejects_non_permutation():
    """Test renumbering requires a permutation."""
    m = parse_smiles("CCO")
    with pytest.raises(ValueError):
        renumber_atoms(m, [0, 0, 1])


def test_fingerprint_shape_and_self_similarity():
    """Test fingerprint width and tanimoto of a molecule with itself."""
    fp = morgan_fingerprint(parse_smiles("CC(=O)Oc1ccccc1C(=O)O"))

    assert fp.width == 2048
    assert fp.bits.dtype == bool
    assert fp.popcount > 0
    assert tanimoto(fp, fp) == 1.0


def test_fingerprint_permutation_invariance():
    """Test environments do not depend on atom order."""
    m = parse_smiles("C=CC(=O)Nc1ccc(cc1)N1CCOCC1")
    expected = morgan_environments(m)

    for order in create_test_permutations(len(m.atoms)):
        assert morgan_environments(renumber_atoms(m, order)) == expected


def test_tanimoto_values():
    """Test similarity ordering and symmetry."""
    benzene = morgan_fingerprint(parse_smiles("c1ccccc1"))
    toluene = morgan_fingerprint(parse_smiles("Cc1ccccc1"))
    ethanol = morgan_fingerprint(parse_smiles("CCO"))

    near = tanimoto(benzene, toluene)
    far = tanimoto(benzene, ethanol)
    assert 0.0 < near < 1.0
    assert far < near
    assert tanimoto(toluene, benzene) == near


def test_tanimoto_edge_cases():
    """Test empty fingerprints and width mismatch."""
    a = morgan_fingerprint(parse_smiles("CCO"), width=64)
    b = morgan_fingerprint(parse_smiles("CCO"), width=128)
    with pytest.raises(ValueError):
        tanimoto(a, b)

    empty = morgan_fingerprint(parse_smiles("C"), width=64)
    empty.bits[:] = False
    assert tanimoto(empty, empty) == 0.0


@pytest.mark.parametrize(
    "query,target",
    [
        ("C=CC(=O)N", "C=CC(=O)Nc1ccccc1"),
        ("CO", "OCCO"),
        ("c1ccccc1", "Cc1ccccc1"),
        ("C=O", "CC(=O)C(=O)O"),
        ("CN", "CCO"),
    ],
)
def test_substructure_matches_brute_force(query, target):
    """Test the matcher agrees with exhaustive enumeration."""
    q = parse_smiles(query)
    t = parse_smiles(target)

    assert substructure_match(q, t) == brute_force_matches(q, t)
    assert has_substructure(q, t) == bool(brute_force_matches(q, t))


def test_substructure_bond_order_must_agree():
    """Test a saturated amide does not match the acrylamide query."""
    query = parse_smiles("C=CC(=O)N")

    assert not has_substructure(query, parse_smiles("CCC(=O)N"))
    assert has_substructure(query, parse_smiles("C=CC(=O)N"))


def test_substructure_empty_query():
    """Test an empty query is rejected."""
    empty = parse_smiles("C")
    empty = type(empty)(atoms=(), bonds=())
    with pytest.raises(ValueError):
        substructure_match(empty, parse_smiles("CCO"))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
