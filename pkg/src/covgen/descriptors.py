"""Molecular property calculators: QED sub-properties, QED and SA score.

LogP uses a reduced Wildman-Crippen atom typing (the most common carbon,
nitrogen, oxygen, hydrogen, halogen, sulfur and phosphorus types; any other
atom contributes 0). PSA uses Ertl's N/O fragment contributions. Structural
alerts are a fixed list of motif graphs matched by subgraph isomorphism.

The SA score follows Ertl's fragment-plus-complexity scheme, with fragment
contributions fitted from an in-repo corpus (``fit_fragment_table``).
"""

import logging
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass
from datetime import date
from itertools import combinations
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Union

import numpy as np

from covgen.chem import (
    ATOMIC_MASS,
    BondOrder,
    MolecularGraph,
    SmilesParseError,
    has_substructure,
    morgan_environments,
    parse_smiles,
    symmetry_classes,
)
from covgen.data import atomic_write_text

logger = logging.getLogger(__name__)

HYDROGEN_MASS = 1.008
HALOGENS = frozenset({"F", "Cl", "Br", "I"})
HETEROATOMS = frozenset({"N", "O", "P", "S", "F", "Cl", "Br", "I"})

QED_EPSILON = 1e-6
FRAGMENT_COVERAGE = 0.8
FRAGMENT_DEFAULT = -4.0
FRAGMENT_TABLE_VERSION = 1

# Wildman-Crippen atomic contributions (reduced typing)
CRIPPEN_LOGP = {
    "C1": 0.1441, "C2": 0.0, "C3": -0.2035, "C4": -0.2051, "C5": -0.2783,
    "C6": 0.1551, "C7": 0.0017, "C8": 0.08452, "C9": -0.1444, "C10": -0.0516,
    "C11": 0.1193, "C12": -0.0967, "C14": 0.0, "C15": 0.245, "C16": 0.198,
    "C17": 0.0, "C18": 0.1581, "C19": 0.2955, "C21": 0.136, "C22": 0.4619,
    "C23": 0.5437, "C24": 0.1893, "C25": -0.8186, "C26": 0.264, "C27": 0.2148,
    "CS": 0.08129,
    "H1": 0.123, "H2": -0.2677, "H3": 0.2142, "H4": 0.298,
    "N1": -1.019, "N2": -0.7096, "N3": -1.027, "N4": -0.5188, "N5": 0.08387,
    "N6": 0.1836, "N7": -0.3187, "N8": -0.4458, "N9": 0.01508, "N10": -1.950,
    "N11": -0.3239, "N12": -1.119, "N13": -0.3396, "N14": 0.2887,
    "O1": 0.1552, "O2": -0.2893, "O3": -0.0684, "O4": -0.4195, "O5": 0.0335,
    "O6": -0.3339, "O7": -1.189, "O8": 0.1788, "O9": -0.1526, "O10": 0.1129,
    "O11": 0.4833, "O12": -1.326, "OS": -0.1188,
    "F": 0.4202, "Cl": 0.6895, "Br": 0.8456, "I": 0.8857, "P": 0.8612,
    "S1": 0.6482, "S2": -0.0024, "S3": 0.6237,
}

AROMATIC_CARBON_SUBSTITUENT = {"N": "C22", "O": "C23", "S": "C24", "F": "C14",
                               "Cl": "C15", "Br": "C16", "I": "C17"}

STRUCTURAL_ALERTS = {
    "epoxide": "C1OC1",
    "aziridine": "C1NC1",
    "acyl_chloride": "C(=O)Cl",
    "sulfonyl_chloride": "S(=O)(=O)Cl",
    "peroxide": "OO",
    "disulfide": "SS",
    "michael_acceptor": "C=CC=O",
    "azo": "N=N",
    "isocyanate": "N=C=O",
    "isothiocyanate": "N=C=S",
    "nitro": "[N+](=O)[O-]",
    "dicarbonyl": "O=CC=O",
}


class DesirabilityParams(NamedTuple):
    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    dmax: float


# Asymmetric double-sigmoid parameters for the eight QED properties
QED_PARAMS = {
    "mw": DesirabilityParams(2.817065973, 392.5754953, 290.7489764, 2.419764353, 49.22325677, 65.37051707, 104.9805561),
    "logp": DesirabilityParams(3.172690585, 137.8624751, 2.534937431, 4.581497897, 0.822739154, 0.576295591, 131.3186604),
    "hba": DesirabilityParams(2.948620388, 160.4605972, 3.615294657, 4.435986202, 0.290141953, 1.300669958, 148.7763046),
    "hbd": DesirabilityParams(1.618662227, 1010.051101, 0.985094388, 1e-9, 0.713820843, 0.920922555, 258.1632616),
    "psa": DesirabilityParams(1.876861559, 125.2232657, 62.90773554, 87.83366614, 12.01999824, 28.51324732, 104.5686167),
    "rotb": DesirabilityParams(0.01, 272.4121427, 2.558379970, 1.565547684, 1.271567166, 2.758063707, 105.4420403),
    "arom": DesirabilityParams(3.217788970, 957.7374108, 2.274627939, 1e-9, 1.317690384, 0.375760881, 312.3372610),
    "alerts": DesirabilityParams(0.01, 1199.094025, -0.09002883, 1e-9, 0.185904477, 0.875193782, 417.7253140),
}


@dataclass(frozen=True)
class PropertyVector:
    mw: float
    logp: float
    hba: int
    hbd: int
    psa: float
    rotb: int
    arom: int
    alerts: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FragmentScoreTable:
    """Environment identifier → log-scaled frequency contribution."""

    contributions: dict[int, float]
    corpus_id: str
    created: str
    default: float = FRAGMENT_DEFAULT
    version: int = FRAGMENT_TABLE_VERSION

    def __post_init__(self):
        bad = [k for k, v in self.contributions.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"Non-finite fragment contributions for {len(bad)} environment(s)")

    def __len__(self) -> int:
        return len(self.contributions)

    def contribution(self, environment: int) -> float:
        return self.contributions.get(environment, self.default)


@dataclass(frozen=True)
class SAComponents:
    fragment: float
    size_penalty: float
    stereo_penalty: float
    spiro_penalty: float
    bridge_penalty: float
    macrocycle_penalty: float
    symmetry_correction: float
    score: float

    @property
    def complexity_penalty(self) -> float:
        return (self.size_penalty + self.stereo_penalty + self.spiro_penalty
                + self.bridge_penalty + self.macrocycle_penalty)

    @property
    def raw(self) -> float:
        return self.fragment - self.complexity_penalty + self.symmetry_correction


# -- atom helpers ------------------------------------------------------------


def _heavy_neighbors(m: MolecularGraph, i: int):
    return [(j, bond) for j, bond in m.neighbors[i] if m.atoms[j].element != "H"]


def _hydrogen_count(m: MolecularGraph, i: int) -> int:
    """Implicit, bracket and graph-node hydrogens on atom i."""
    explicit_nodes = sum(1 for j, _ in m.neighbors[i] if m.atoms[j].element == "H")
    return m.atoms[i].total_h + explicit_nodes


def _has_double_to(m: MolecularGraph, i: int, elements: Optional[frozenset] = None) -> bool:
    for j, bond in m.neighbors[i]:
        if bond.order is BondOrder.DOUBLE and (elements is None or m.atoms[j].element in elements):
            return True
    return False


# -- Crippen LogP ------------------------------------------------------------


def _carbon_type(m: MolecularGraph, i: int) -> str:
    atom = m.atoms[i]
    neighbors = _heavy_neighbors(m, i)
    h = _hydrogen_count(m, i)
    if atom.is_aromatic:
        if h:
            return "C18"
        aromatic_neighbors = sum(1 for _, bond in neighbors if bond.order is BondOrder.AROMATIC)
        if aromatic_neighbors >= 3:
            return "C19"
        for j, bond in neighbors:
            if bond.order is BondOrder.DOUBLE:
                return "C25"
        for j, bond in neighbors:
            if bond.order is BondOrder.AROMATIC:
                continue
            element = m.atoms[j].element
            if element == "C":
                return "C21"
            if element in AROMATIC_CARBON_SUBSTITUENT:
                return AROMATIC_CARBON_SUBSTITUENT[element]
        return "C27"
    orders = [bond.order for _, bond in neighbors]
    if BondOrder.TRIPLE in orders:
        return "C7"
    for j, bond in neighbors:
        if bond.order is BondOrder.DOUBLE and m.atoms[j].element != "C":
            return "C5"
    has_aromatic_neighbor = any(m.atoms[j].is_aromatic for j, _ in neighbors)
    if BondOrder.DOUBLE in orders:
        return "C26" if has_aromatic_neighbor else "C6"
    if has_aromatic_neighbor:
        if h >= 3:
            aromatic_carbon = any(m.atoms[j].is_aromatic and m.atoms[j].element == "C" for j, _ in neighbors)
            return "C8" if aromatic_carbon else "C9"
        return {2: "C10", 1: "C11"}.get(h, "C12")
    if any(m.atoms[j].element in HETEROATOMS for j, _ in neighbors):
        return "C3" if h >= 2 else "C4"
    if all(m.atoms[j].element == "C" for j, _ in neighbors):
        return "C1" if h >= 2 else "C2"
    return "CS"


def _nitrogen_type(m: MolecularGraph, i: int) -> str:
    atom = m.atoms[i]
    h = _hydrogen_count(m, i)
    if atom.is_aromatic:
        return "N12" if atom.formal_charge > 0 else "N11"
    if atom.formal_charge > 0:
        return "N10" if h else "N13"
    if atom.formal_charge < 0:
        return "N14"
    neighbors = _heavy_neighbors(m, i)
    orders = [bond.order for _, bond in neighbors]
    if BondOrder.TRIPLE in orders:
        return "N9"
    if BondOrder.DOUBLE in orders:
        return "N5" if h else "N6"
    aromatic = any(m.atoms[j].is_aromatic for j, _ in neighbors)
    if h >= 2:
        return "N3" if aromatic else "N1"
    if h == 1:
        return "N4" if aromatic else "N2"
    return "N8" if aromatic else "N7"


def _oxygen_type(m: MolecularGraph, i: int) -> str:
    atom = m.atoms[i]
    if atom.is_aromatic:
        return "O1"
    neighbors = _heavy_neighbors(m, i)
    if atom.formal_charge < 0:
        partner = neighbors[0][0] if neighbors else None
        if partner is None:
            return "O7"
        element = m.atoms[partner].element
        if element == "N":
            return "O5"
        if element == "S":
            return "O6"
        if element == "C" and _has_double_to(m, partner, frozenset({"O"})):
            return "O12"
        return "O7"
    for j, bond in neighbors:
        if bond.order is not BondOrder.DOUBLE:
            continue
        partner = m.atoms[j]
        if partner.element in ("N", "O"):
            return "O5"
        if partner.element in ("S", "P"):
            return "OS"
        if partner.is_aromatic:
            return "O8"
        others = [k for k, _ in _heavy_neighbors(m, j) if k != i]
        if any(m.atoms[k].element != "C" for k in others):
            return "O11"
        if any(m.atoms[k].is_aromatic for k in others):
            return "O10"
        return "O9"
    if _hydrogen_count(m, i):
        return "O2"
    if any(m.atoms[j].is_aromatic for j, _ in neighbors):
        return "O4"
    return "O3"


def _hydrogen_type(m: MolecularGraph, host: int) -> str:
    element = m.atoms[host].element
    if element == "C":
        return "H1"
    if element == "N":
        return "H3"
    if element == "O":
        for j, _ in _heavy_neighbors(m, host):
            partner = m.atoms[j].element
            if partner == "N":
                return "H3"
            if partner in ("O", "S"):
                return "H4"
            if partner == "C" and not m.atoms[j].is_aromatic and _has_double_to(m, j):
                return "H4"
        return "H2"
    return "H2"


def atom_type(m: MolecularGraph, i: int) -> Optional[str]:
    """Crippen type label of heavy atom ``i``, or None when untyped."""
    element = m.atoms[i].element
    if element == "C":
        return _carbon_type(m, i)
    if element == "N":
        return _nitrogen_type(m, i)
    if element == "O":
        return _oxygen_type(m, i)
    if element == "S":
        if m.atoms[i].is_aromatic:
            return "S3"
        return "S2" if m.atoms[i].formal_charge else "S1"
    if element in HALOGENS or element == "P":
        return element
    return None


def crippen_logp(m: MolecularGraph) -> float:
    """Sum of atomic LogP contributions over heavy atoms and their hydrogens."""
    total = 0.0
    for i, atom in enumerate(m.atoms):
        if atom.element == "H":
            continue
        label = atom_type(m, i)
        if label is not None:
            total += CRIPPEN_LOGP[label]
        h = _hydrogen_count(m, i)
        if h:
            total += h * CRIPPEN_LOGP[_hydrogen_type(m, i)]
    return total


# -- TPSA --------------------------------------------------------------------


def _polar_contribution(m: MolecularGraph, i: int) -> float:
    atom = m.atoms[i]
    neighbors = _heavy_neighbors(m, i)
    h = _hydrogen_count(m, i)
    counts = Counter(bond.order for _, bond in neighbors)
    singles, doubles = counts[BondOrder.SINGLE], counts[BondOrder.DOUBLE]
    triples, aromatic = counts[BondOrder.TRIPLE], counts[BondOrder.AROMATIC]
    in_three_ring = any(len(ring) == 3 and i in ring for ring in m.rings)

    if atom.element == "N":
        if atom.is_aromatic:
            if atom.formal_charge > 0:
                if h:
                    return 14.14
                return 4.10 if aromatic == 3 else 3.88
            if h:
                return 15.79
            if aromatic == 3:
                return 4.41
            if singles:
                return 4.93
            if doubles:
                return 8.39
            return 12.89
        if atom.formal_charge > 0:
            if h == 0:
                if triples:
                    return 4.36
                return 3.01 if doubles else 0.0
            if h == 1:
                return 13.97 if doubles else 4.44
            if h == 2:
                return 25.59 if doubles else 16.61
            return 27.64
        if h == 0:
            if triples:
                return 23.79
            if doubles >= 2:
                return 11.68
            if doubles:
                return 12.36
            return 3.01 if in_three_ring else 3.24
        if h == 1:
            if doubles:
                return 23.85
            return 21.94 if in_three_ring else 12.03
        return 26.02
    if atom.element == "O":
        if atom.is_aromatic:
            return 13.14
        if atom.formal_charge < 0:
            return 23.06
        if doubles:
            return 17.07
        if h:
            return 20.23
        return 12.53 if in_three_ring else 9.23
    return 0.0


def polar_surface_area(m: MolecularGraph) -> float:
    """Topological polar surface area (Å²) from N and O contributions."""
    return float(sum(_polar_contribution(m, i) for i in range(len(m.atoms))))


# -- counts ------------------------------------------------------------------


def h_bond_donors(m: MolecularGraph) -> int:
    """N and O atoms carrying at least one hydrogen."""
    return sum(1 for i, a in enumerate(m.atoms) if a.element in ("N", "O") and _hydrogen_count(m, i))


def _total_valence(m: MolecularGraph, i: int) -> float:
    return sum(bond.order.valence for _, bond in m.neighbors[i]) + m.atoms[i].total_h


def _is_acceptor(m: MolecularGraph, i: int) -> bool:
    atom = m.atoms[i]
    h = _hydrogen_count(m, i)
    heavy = len(_heavy_neighbors(m, i))
    connections = heavy + h
    valence = _total_valence(m, i)
    charge = atom.formal_charge
    if atom.element == "O":
        if atom.is_aromatic:
            return h == 0 and connections == 2
        if charge < 0:
            return connections == 1
        if charge == 0 and valence == 2:
            return (connections == 2 and h <= 1) or (connections == 1 and h == 0)
        return False
    if atom.element == "S" and not atom.is_aromatic:
        if charge < 0:
            return connections == 1
        return charge == 0 and h == 0 and valence == 2 and connections in (1, 2)
    if atom.element == "N":
        if atom.is_aromatic:
            return charge == 0 and h == 0 and connections == 2
        if charge != 0:
            return False
        if h == 0 and connections == 1 and valence == 3:
            return True
        if connections == 3 and valence == 3:
            for j, _ in _heavy_neighbors(m, i):
                if m.atoms[j].element in ("C", "S") and _has_double_to(m, j, frozenset({"O"})):
                    return False
            return True
    return False


def h_bond_acceptors(m: MolecularGraph) -> int:
    """Acceptor count using the QED acceptor rules."""
    return sum(1 for i in range(len(m.atoms)) if _is_acceptor(m, i))


def _is_amide_bond(m: MolecularGraph, a: int, b: int) -> bool:
    for c, n in ((a, b), (b, a)):
        if (m.atoms[c].element == "C" and m.atoms[n].element == "N"
                and _hydrogen_count(m, n) == 1 and _has_double_to(m, c, frozenset({"O"}))):
            return True
    return False


def rotatable_bonds(m: MolecularGraph) -> int:
    """Acyclic single bonds between non-terminal atoms, excluding triple-bond neighbours and secondary amides."""
    count = 0
    for bond in m.bonds:
        if bond.order is not BondOrder.SINGLE:
            continue
        if frozenset((bond.begin, bond.end)) in m.ring_bonds:
            continue
        ends = (bond.begin, bond.end)
        if any(m.atoms[k].element == "H" for k in ends):
            continue
        if any(len(_heavy_neighbors(m, k)) < 2 for k in ends):
            continue
        if any(any(b.order is BondOrder.TRIPLE for _, b in m.neighbors[k]) for k in ends):
            continue
        if _is_amide_bond(m, *ends):
            continue
        count += 1
    return count


def aromatic_ring_count(m: MolecularGraph) -> int:
    return sum(1 for ring in m.rings if all(m.atoms[i].is_aromatic for i in ring))


def _alert_graphs() -> dict[str, MolecularGraph]:
    return {name: parse_smiles(smiles) for name, smiles in STRUCTURAL_ALERTS.items()}


def structural_alerts(m: MolecularGraph) -> list[str]:
    """Names of the alert motifs present in ``m``."""
    return [name for name, query in _alert_graphs().items() if has_substructure(query, m)]


def molecular_weight(m: MolecularGraph) -> float:
    """Average molecular weight (g/mol) including implicit hydrogens."""
    return float(sum(ATOMIC_MASS.get(a.element, 0.0) + a.total_h * HYDROGEN_MASS for a in m.atoms))


def compute_properties(m: MolecularGraph) -> PropertyVector:
    """
    Compute the eight QED sub-properties.

    Parameters
    ----------
    m : MolecularGraph
        Valid molecule.

    Returns
    -------
    PropertyVector
        MW, Crippen LogP, H-bond acceptors and donors, TPSA, rotatable
        bonds, aromatic rings and structural-alert count.

    Examples
    --------
    >>> compute_properties(parse_smiles("CCO")).hbd
    1
    """
    return PropertyVector(
        mw=molecular_weight(m),
        logp=crippen_logp(m),
        hba=h_bond_acceptors(m),
        hbd=h_bond_donors(m),
        psa=polar_surface_area(m),
        rotb=rotatable_bonds(m),
        arom=aromatic_ring_count(m),
        alerts=len(structural_alerts(m)),
    )


# -- QED ---------------------------------------------------------------------


def desirability(x: float, p: DesirabilityParams) -> float:
    """Asymmetric double sigmoid, scaled by its maximum."""
    rise = 1.0 + math.exp(-1.0 * (x - p.c + p.d / 2.0) / p.e)
    fall = 1.0 - 1.0 / (1.0 + math.exp(-1.0 * (x - p.c - p.d / 2.0) / p.f))
    return (p.a + p.b / rise * fall) / p.dmax


def qed_from_properties(props: PropertyVector, weights: Optional[dict] = None) -> float:
    weights = weights or {name: 1.0 for name in QED_PARAMS}
    values = props.as_dict()
    log_sum = 0.0
    total = 0.0
    for name, params in QED_PARAMS.items():
        d = float(np.clip(desirability(float(values[name]), params), QED_EPSILON, 1.0))
        log_sum += weights[name] * math.log(d)
        total += weights[name]
    return math.exp(log_sum / total)


def qed(m: MolecularGraph) -> float:
    """
    Quantitative estimate of drug-likeness with unit weights.

    Each desirability is floored at 1e-6 before the geometric mean, so the
    result lies in (0, 1].
    """
    return qed_from_properties(compute_properties(m))


# -- SA score ----------------------------------------------------------------


def fit_fragment_table(smiles: Iterable[str], corpus_id: str,
                       created: Optional[str] = None) -> FragmentScoreTable:
    """
    Fit fragment contributions from a reference corpus.

    Environments are ranked by frequency; the count at which cumulative
    coverage reaches 80 % becomes the reference and each environment
    scores ``log10(count / reference)``.

    Raises
    ------
    ValueError
        If no valid molecule is found.
    """
    t0 = time.time()
    counts: Counter = Counter()
    skipped = 0
    for s in smiles:
        try:
            counts.update(morgan_environments(parse_smiles(s)))
        except SmilesParseError:
            skipped += 1
    if skipped:
        logger.warning(f"Skipped {skipped} invalid SMILES while fitting fragment table")
    if not counts:
        raise ValueError(f"Cannot fit fragment table for corpus {corpus_id!r}: no valid molecules")

    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    total = sum(counts.values())
    running = 0
    reference = ordered[-1][1]
    for _, count in ordered:
        running += count
        if running >= FRAGMENT_COVERAGE * total:
            reference = count
            break
    contributions = {env: math.log10(count / reference) for env, count in ordered}
    logger.info(
        f"✓ Fitted fragment table ({len(contributions)} environments) "
        f"from corpus {corpus_id!r} in {time.time() - t0:.2f}s"
    )
    return FragmentScoreTable(
        contributions=contributions,
        corpus_id=corpus_id,
        created=created or date.today().isoformat(),
    )


def save_fragment_table(table: FragmentScoreTable, path: Union[str, Path]) -> Path:
    lines = [
        f"# covgen fragment table v{table.version}",
        f"# corpus_id={table.corpus_id}",
        f"# created={table.created}",
        f"# default={table.default!r}",
    ]
    lines += [f"{env:016x}\t{value!r}" for env, value in sorted(table.contributions.items())]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def load_fragment_table(path: Union[str, Path]) -> FragmentScoreTable:
    """
    Load a fragment table written by ``save_fragment_table``.

    Raises
    ------
    ValueError
        On an unsupported version, a malformed line or an empty table.
    """
    path = Path(path)
    header: dict[str, str] = {}
    contributions: dict[int, float] = {}
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("# ")
                if body.startswith("covgen fragment table v"):
                    header["version"] = body.rsplit("v", 1)[1]
                elif "=" in body:
                    key, value = body.split("=", 1)
                    header[key] = value
                continue
            try:
                env_hex, value = line.split("\t")
                contributions[int(env_hex, 16)] = float(value)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: malformed fragment table line ({e})") from e
    version = int(header.get("version", "0"))
    if version != FRAGMENT_TABLE_VERSION:
        raise ValueError(
            f"Unsupported fragment table version {version} in {path}. "
            f"Available: {FRAGMENT_TABLE_VERSION}"
        )
    if not contributions:
        raise ValueError(f"Fragment table {path} is empty")
    return FragmentScoreTable(
        contributions=contributions,
        corpus_id=header.get("corpus_id", ""),
        created=header.get("created", ""),
        default=float(header.get("default", FRAGMENT_DEFAULT)),
        version=version,
    )


def _stereo_centers(m: MolecularGraph) -> int:
    """Tetrahedral centres by constitution: sp3 atoms with four distinct substituents."""
    classes = symmetry_classes(m)
    count = 0
    for i, atom in enumerate(m.atoms):
        if atom.element != "C" or atom.is_aromatic:
            continue
        if any(bond.order is not BondOrder.SINGLE for _, bond in m.neighbors[i]):
            continue
        h = atom.total_h
        substituents = [classes[j] for j, _ in m.neighbors[i]]
        if h > 1 or len(substituents) + h != 4:
            continue
        if len(set(substituents)) == len(substituents):
            count += 1
    return count


def _ring_fusion_atoms(m: MolecularGraph) -> tuple[int, int]:
    spiro: set[int] = set()
    bridgeheads: set[int] = set()
    for first, second in combinations(m.rings, 2):
        shared = set(first) & set(second)
        if len(shared) == 1:
            spiro |= shared
        elif len(shared) >= 3:
            union = set(first) | set(second)
            for atom in shared:
                inside = sum(1 for j, _ in m.neighbors[atom] if j in union)
                if inside >= 3:
                    bridgeheads.add(atom)
    return len(spiro), len(bridgeheads)


def sa_components(m: MolecularGraph, table: FragmentScoreTable) -> SAComponents:
    """Fragment score, complexity penalties and symmetry correction behind ``sa_score``."""
    heavy = m.heavy_atom_count
    if heavy == 0:
        raise ValueError("SA score is undefined for an empty molecule")
    environments = morgan_environments(m)
    occurrences = sum(environments.values())
    fragment = sum(table.contribution(env) * n for env, n in environments.items()) / occurrences

    spiro, bridgeheads = _ring_fusion_atoms(m)
    size_penalty = heavy ** 1.005 - heavy
    stereo_penalty = math.log10(_stereo_centers(m) + 1)
    spiro_penalty = math.log10(spiro + 1)
    bridge_penalty = math.log10(bridgeheads + 1)
    macrocycle_penalty = math.log10(2) if any(len(r) > 8 for r in m.rings) else 0.0
    symmetry = 0.5 * math.log(heavy / len(environments)) if heavy > len(environments) else 0.0

    raw = fragment - (size_penalty + stereo_penalty + spiro_penalty + bridge_penalty
                      + macrocycle_penalty) + symmetry
    score = 11.0 - (raw + 5.0) / 6.5 * 9.0
    if score > 8.0:
        score = 8.0 + math.log(score - 8.0)
    score = min(max(score, 1.0), 10.0)
    return SAComponents(
        fragment=fragment,
        size_penalty=size_penalty,
        stereo_penalty=stereo_penalty,
        spiro_penalty=spiro_penalty,
        bridge_penalty=bridge_penalty,
        macrocycle_penalty=macrocycle_penalty,
        symmetry_correction=symmetry,
        score=score,
    )


def sa_score(m: MolecularGraph, table: FragmentScoreTable) -> float:
    """
    Synthetic accessibility on a 1 (easy) to 10 (hard) scale.

    Parameters
    ----------
    m : MolecularGraph
        Non-empty molecule.
    table : FragmentScoreTable
        Fitted fragment contributions.

    Raises
    ------
    ValueError
        For an empty molecule.
    """
    return sa_components(m, table).score
