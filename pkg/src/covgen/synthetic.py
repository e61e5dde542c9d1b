"""Desk-scale synthetic corpora.

Molecules are assembled from a fixed fragment library as
``scaffold(linker + cap)``; a fraction carries an acrylamide warhead in
place of the cap. Everything here is deterministic under its seed.
"""

import logging
from typing import Union

import numpy as np

from covgen.chem import MolecularGraph, has_substructure, parse_smiles, substructure_match
from covgen.evalkit import motif_graph

logger = logging.getLogger(__name__)

# "{}" marks the substituent position
SCAFFOLDS = (
    "c1ccc(cc1){}",
    "c1ccc2ncccc2c1{}",
    "c1ccncc1{}",
    "c1ccc2[nH]ccc2c1{}",
    "c1ccsc1{}",
    "C1CCN(CC1){}",
    "C1CCOCC1{}",
    "c1cncnc1{}",
)
LINKERS = ("", "C", "CC", "N", "O", "C(=O)N", "NC(=O)", "CN", "OC", "CCO")
CAPS = ("C", "CC", "O", "N", "F", "Cl", "C(F)(F)F", "C#N", "c1ccccc1", "C1CC1", "N(C)C", "OC", "C(=O)O")
HALOGEN_CAPS = frozenset({"F", "Cl", "C(F)(F)F"})

ACRYLAMIDE = "NC(=O)C=C"
ACRYLOYL = "C(=O)C=C"
# saturated and non-amide lookalikes for negatives
DECOYS = ("NC(=O)CC", "C=CC", "NC(=O)C", "CC=C")


def _substituent(rng: np.random.Generator) -> str:
    linker = LINKERS[rng.integers(len(LINKERS))]
    cap = CAPS[rng.integers(len(CAPS))]
    if linker.endswith(("N", "O")) and cap in HALOGEN_CAPS:
        cap = "C"
    return linker + cap


def _warhead(scaffold: str, rng: np.random.Generator) -> str:
    if scaffold.startswith("C1CCN("):
        return ACRYLOYL
    return ("", "C", "CC")[rng.integers(3)] + ACRYLAMIDE


def toy_corpus(n: int, seed: int = 0, warhead_fraction: float = 0.3) -> list[str]:
    """
    ``n`` valid drug-like SMILES, a ``warhead_fraction`` of them carrying an acrylamide.

    Raises
    ------
    ValueError
        If ``n < 0`` or the fraction lies outside [0, 1].
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if not 0.0 <= warhead_fraction <= 1.0:
        raise ValueError(f"warhead_fraction must be in [0, 1], got {warhead_fraction}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        scaffold = SCAFFOLDS[rng.integers(len(SCAFFOLDS))]
        if rng.random() < warhead_fraction:
            out.append(scaffold.format(_warhead(scaffold, rng)))
        else:
            out.append(scaffold.format(_substituent(rng)))
    return out


def motif_atoms(query: MolecularGraph, m: MolecularGraph) -> frozenset[int]:
    """Atoms of ``m`` covered by any embedding of ``query``."""
    return frozenset(i for mapping in substructure_match(query, m) for i in mapping)


def planted_motif_corpus(n: int, seed: int = 0, motif: str = "acrylamide",
                         positive_fraction: float = 0.5) -> tuple[list[str], np.ndarray, list[frozenset[int]]]:
    """
    Labelled corpus for motif detection.

    Positives carry the acrylamide warhead; negatives carry ordinary
    substituents or a decoy that shares part of the motif. Labels are
    recomputed by substructure search against ``motif``.

    Parameters
    ----------
    n : int
        Corpus size.
    seed : int
        Random seed.
    motif : str
        Built-in motif name or a SMILES query.
    positive_fraction : float
        Approximate fraction of planted positives.

    Returns
    -------
    smiles : list of str
    labels : np.ndarray
        1 where the motif is present, else 0.
    motif_atoms : list of frozenset
        Per molecule, the atom indices matched by the motif (empty for negatives).
    """
    query = motif_graph(motif)
    rng = np.random.default_rng(seed)
    smiles, labels, atoms = [], [], []
    for _ in range(n):
        scaffold = SCAFFOLDS[rng.integers(len(SCAFFOLDS))]
        if rng.random() < positive_fraction:
            s = scaffold.format(_warhead(scaffold, rng))
        elif rng.random() < 0.5:
            s = scaffold.format(DECOYS[rng.integers(len(DECOYS))])
        else:
            s = scaffold.format(_substituent(rng))
        m = parse_smiles(s)
        hit = motif_atoms(query, m)
        smiles.append(s)
        labels.append(1 if hit else 0)
        atoms.append(hit)
    labels = np.array(labels, dtype=int)
    logger.debug(f"Planted-motif corpus: {labels.sum()} positive / {n - labels.sum()} negative")
    return smiles, labels, atoms


def oracle_docking_score(m: Union[MolecularGraph, str]) -> float:
    """
    Deterministic docking-like score (kcal/mol scale, lower is better).

    Depends only on atom composition fractions (aromatic, heteroatom, ring),
    so it is size-independent and learnable through a mean-pooled readout.
    """
    if isinstance(m, str):
        m = parse_smiles(m)
    heavy = [a for a in m.atoms if a.element != "H"]
    if not heavy:
        return -4.0
    aromatic = sum(a.is_aromatic for a in heavy) / len(heavy)
    hetero = sum(a.element not in ("C", "H") for a in heavy) / len(heavy)
    ring = sum(a.ring_membership for a in heavy) / len(heavy)
    return float(-4.0 - 3.0 * aromatic - 2.0 * hetero - 1.0 * ring)


def contains_motif(smiles: str, motif: str = "acrylamide") -> bool:
    """True when ``smiles`` parses and contains the motif."""
    try:
        return has_substructure(motif_graph(motif), parse_smiles(smiles))
    except ValueError:
        return False
