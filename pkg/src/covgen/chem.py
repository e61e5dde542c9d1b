"""SMILES parsing, canonicalization, fingerprints and substructure search.

Supported SMILES subset: organic-subset atoms, bracket atoms (isotope,
chirality, H count, charge, atom class), branches, ring closures (digits and
``%nn``), single/double/triple/aromatic bonds and the ``.`` separator.
Stereo markers (``@``, ``@@``, ``/``, ``\\``) are kept as annotations on atoms
and bonds; they take no part in canonical ranking or canonical output.
"""

import functools
import hashlib
import logging
import re
import struct
from collections import Counter
from dataclasses import dataclass, replace
from enum import IntEnum
from functools import cached_property
from typing import Optional

import networkx as nx
import numpy as np
from networkx.algorithms import isomorphism

logger = logging.getLogger(__name__)

FINGERPRINT_WIDTH = 2048
FINGERPRINT_RADIUS = 2

SMILES_TOKEN_PATTERN = re.compile(
    r"(\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|\/|:|~|@|\?|>|\*|\$|%[0-9]{2}|[0-9])"
)

BRACKET_ATOM_PATTERN = re.compile(
    r"^\[(?P<isotope>\d+)?"
    r"(?P<symbol>[A-Z][a-z]?|[a-z][a-z]?)"
    r"(?P<chirality>@{1,2}(?:TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d?)?"
    r"(?P<charge>[+-]+\d*)?"
    r"(?::(?P<atom_class>\d+))?\]$"
)

ATOMIC_NUMBER = {
    "H": 1, "He": 2, "Li": 3, "Be": 4, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9,
    "Ne": 10, "Na": 11, "Mg": 12, "Al": 13, "Si": 14, "P": 15, "S": 16,
    "Cl": 17, "Ar": 18, "K": 19, "Ca": 20, "Ti": 22, "Cr": 24, "Mn": 25,
    "Fe": 26, "Co": 27, "Ni": 28, "Cu": 29, "Zn": 30, "Ga": 31, "Ge": 32,
    "As": 33, "Se": 34, "Br": 35, "Kr": 36, "Rb": 37, "Sr": 38, "Mo": 42,
    "Ru": 44, "Rh": 45, "Pd": 46, "Ag": 47, "Cd": 48, "Sn": 50, "Sb": 51,
    "Te": 52, "I": 53, "Xe": 54, "Cs": 55, "Ba": 56, "Pt": 78, "Au": 79,
    "Hg": 80, "Tl": 81, "Pb": 82, "Bi": 83,
}

# Standard atomic weights (g/mol)
ATOMIC_MASS = {
    "H": 1.008, "He": 4.003, "Li": 6.941, "Be": 9.012, "B": 10.812,
    "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998, "Ne": 20.180,
    "Na": 22.990, "Mg": 24.305, "Al": 26.982, "Si": 28.086, "P": 30.974,
    "S": 32.067, "Cl": 35.453, "Ar": 39.948, "K": 39.098, "Ca": 40.078,
    "Ti": 47.867, "Cr": 51.996, "Mn": 54.938, "Fe": 55.845, "Co": 58.933,
    "Ni": 58.693, "Cu": 63.546, "Zn": 65.39, "Ga": 69.723, "Ge": 72.61,
    "As": 74.922, "Se": 78.96, "Br": 79.904, "Kr": 83.80, "Rb": 85.468,
    "Sr": 87.62, "Mo": 95.94, "Ru": 101.07, "Rh": 102.906, "Pd": 106.42,
    "Ag": 107.868, "Cd": 112.411, "Sn": 118.71, "Sb": 121.76, "Te": 127.60,
    "I": 126.904, "Xe": 131.29, "Cs": 132.905, "Ba": 137.327, "Pt": 195.078,
    "Au": 196.967, "Hg": 200.59, "Tl": 204.383, "Pb": 207.2, "Bi": 208.980,
}

VALENCE_ELECTRONS = {
    "H": 1, "B": 3, "C": 4, "N": 5, "O": 6, "F": 7, "Si": 4, "P": 5, "S": 6,
    "Cl": 7, "Ge": 4, "As": 5, "Se": 6, "Br": 7, "Sn": 4, "Sb": 5, "Te": 6,
    "I": 7,
}

PERIOD_TWO = frozenset({"B", "C", "N", "O", "F"})
ORGANIC_SUBSET = frozenset({"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})
AROMATIC_SYMBOLS = frozenset({"b", "c", "n", "o", "p", "s", "se", "as", "te"})
LONE_PAIR_DONORS = frozenset({"N", "O", "S", "P", "Se", "As", "Te"})

_MASK64 = (1 << 64) - 1


class SmilesParseError(ValueError):
    """Base class for SMILES parse failures; ``kind`` names the failure."""

    kind = "parse"

    def __init__(self, message: str, smiles: str = ""):
        super().__init__(f"{message} in SMILES {smiles!r}" if smiles else message)
        self.smiles = smiles


class SmilesSyntaxError(SmilesParseError):
    kind = "syntax"


class UnknownSymbolError(SmilesParseError):
    kind = "unknown_symbol"


class ValenceError(SmilesParseError):
    kind = "valence"


class AromaticityError(SmilesParseError):
    kind = "aromaticity"


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> float:
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "/": BondOrder.SINGLE, "\\": BondOrder.SINGLE,
                 "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}


@dataclass(frozen=True)
class Atom:
    """A graph node. ``explicit_h`` is the H count written in brackets,
    ``implicit_h`` the count resolved for organic-subset atoms."""

    element: str
    formal_charge: int = 0
    is_aromatic: bool = False
    explicit_h: int = 0
    implicit_h: int = 0
    ring_membership: bool = False
    degree: int = 0
    isotope: Optional[int] = None
    chirality: Optional[str] = None

    @property
    def total_h(self) -> int:
        return self.explicit_h + self.implicit_h

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBER[self.element]


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder
    stereo: Optional[str] = None

    def other(self, index: int) -> int:
        return self.end if index == self.begin else self.begin


@dataclass(frozen=True)
class MolecularGraph:
    """Immutable molecular graph with dense atom indices from 0."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    source_smiles: str = ""

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def neighbors(self) -> tuple[tuple[tuple[int, Bond], ...], ...]:
        """Per atom, (neighbor index, bond) pairs."""
        table = [[] for _ in self.atoms]
        for bond in self.bonds:
            table[bond.begin].append((bond.end, bond))
            table[bond.end].append((bond.begin, bond))
        return tuple(tuple(row) for row in table)

    @cached_property
    def graph(self) -> nx.Graph:
        """networkx view with ``element``/``aromatic`` node and ``order`` edge attributes."""
        g = nx.Graph()
        for i, atom in enumerate(self.atoms):
            g.add_node(i, element=atom.element, aromatic=atom.is_aromatic)
        for bond in self.bonds:
            g.add_edge(bond.begin, bond.end, order=bond.order)
        return g

    @cached_property
    def rings(self) -> tuple[tuple[int, ...], ...]:
        """Smallest set of smallest rings, each as sorted atom indices."""
        cycles = nx.minimum_cycle_basis(self.graph)
        return tuple(sorted(tuple(sorted(c)) for c in cycles))

    @cached_property
    def ring_bonds(self) -> frozenset[frozenset[int]]:
        """Bonds lying on at least one cycle."""
        bridges = {frozenset(edge) for edge in nx.bridges(self.graph)}
        return frozenset(
            key for key in (frozenset((b.begin, b.end)) for b in self.bonds) if key not in bridges
        )

    @property
    def heavy_atom_count(self) -> int:
        return sum(1 for atom in self.atoms if atom.element != "H")

    def bond_between(self, i: int, j: int) -> Optional[Bond]:
        for k, bond in self.neighbors[i]:
            if k == j:
                return bond
        return None

    def component_count(self) -> int:
        return nx.number_connected_components(self.graph)


def tokenize_smiles(s: str) -> list[str]:
    """
    Split a SMILES string into tokens.

    Raises
    ------
    UnknownSymbolError
        If part of the string matches no token.
    """
    tokens = SMILES_TOKEN_PATTERN.findall(s)
    if "".join(tokens) != s:
        position = 0
        for token in tokens:
            if not s.startswith(token, position):
                break
            position += len(token)
        raise UnknownSymbolError(f"unrecognised character at position {position}", s)
    return tokens


def allowed_valences(element: str, charge: int = 0) -> Optional[tuple[int, ...]]:
    """
    Allowed valences for an element with a formal charge.

    Charged atoms take the valence of their isoelectronic neighbour
    (N+ behaves as C, O- as F). Elements below period two gain the
    hypervalent states in steps of two. Returns None for elements without
    a valence model (metals), whose valence is not checked.
    """
    electrons = VALENCE_ELECTRONS.get(element)
    if electrons is None:
        return None
    if element == "H":
        return (1,) if charge == 0 else (0,)
    effective = electrons - charge
    if effective <= 0 or effective >= 8:
        return (0,)
    base = effective if effective <= 4 else 8 - effective
    if element in PERIOD_TWO or effective <= 4:
        return (base,)
    return tuple(range(base, effective + 1, 2))


def _organic_hydrogens(element: str, aromatic: bool, sigma: int) -> Optional[tuple[int, int]]:
    """
    Implicit hydrogens and pi-electron demand of an organic-subset atom.

    Returns (implicit_h, pi) or None on a valence violation. Aromatic atoms
    take a pi bond unless their sigma bonds already meet an allowed valence.
    """
    valences = allowed_valences(element, 0)
    if aromatic:
        if sigma in valences:
            return 0, 0
        for v in valences:
            if v > sigma:
                return v - sigma - 1, 1
        return None
    for v in valences:
        if v >= sigma:
            return v - sigma, 0
    return None


def _sigma(order: BondOrder) -> int:
    return 1 if order is BondOrder.AROMATIC else int(order)


def _parse_charge(text: Optional[str]) -> int:
    if not text:
        return 0
    sign = 1 if text[0] == "+" else -1
    digits = text.lstrip("+-")
    if digits:
        return sign * int(digits)
    return sign * len(text)


@dataclass
class _AtomRecord:
    element: str
    aromatic: bool
    bracket: bool
    charge: int = 0
    hcount: int = 0
    isotope: Optional[int] = None
    chirality: Optional[str] = None


def _read_atom(token: str, smiles: str) -> _AtomRecord:
    if not token.startswith("["):
        if token in AROMATIC_SYMBOLS:
            return _AtomRecord(element=token.upper(), aromatic=True, bracket=False)
        return _AtomRecord(element=token, aromatic=False, bracket=False)
    match = BRACKET_ATOM_PATTERN.match(token)
    if match is None:
        raise UnknownSymbolError(f"malformed bracket atom {token}", smiles)
    symbol = match.group("symbol")
    aromatic = symbol[0].islower()
    if aromatic:
        if symbol not in AROMATIC_SYMBOLS:
            raise UnknownSymbolError(f"unknown aromatic symbol {symbol!r}", smiles)
        element = symbol.capitalize()
    else:
        element = symbol
    if element not in ATOMIC_NUMBER:
        raise UnknownSymbolError(f"unknown element {element!r}", smiles)
    hcount_text = match.group("hcount")
    hcount = 0
    if hcount_text:
        hcount = int(hcount_text[1:]) if len(hcount_text) > 1 else 1
    isotope = match.group("isotope")
    return _AtomRecord(
        element=element,
        aromatic=aromatic,
        bracket=True,
        charge=_parse_charge(match.group("charge")),
        hcount=hcount,
        isotope=int(isotope) if isotope else None,
        chirality=match.group("chirality"),
    )


def _is_atom_token(token: str) -> bool:
    return token.startswith("[") or token in ORGANIC_SUBSET or token in AROMATIC_SYMBOLS


@functools.lru_cache(maxsize=8192)
def parse_smiles(s: str) -> MolecularGraph:
    """
    Parse a SMILES string into a validated molecular graph.

    Parameters
    ----------
    s : str
        SMILES text.

    Returns
    -------
    MolecularGraph
        Graph with implicit hydrogens resolved and aromaticity checked.

    Raises
    ------
    SmilesSyntaxError
        Unbalanced parentheses or ring closures, dangling bonds, duplicate bonds.
    UnknownSymbolError
        Unrecognised characters or elements.
    ValenceError
        An atom exceeds its allowed valence.
    AromaticityError
        Lowercase atoms that do not form a kekulizable Hückel ring system.
    """
    if not s:
        raise SmilesSyntaxError("empty SMILES")
    tokens = tokenize_smiles(s)

    records: list[_AtomRecord] = []
    raw_bonds: dict[frozenset, tuple[int, int, Optional[str]]] = {}
    branch_stack: list[int] = []
    open_rings: dict[str, tuple[int, Optional[str]]] = {}
    previous: Optional[int] = None
    pending: Optional[str] = None

    def add_bond(i: int, j: int, symbol: Optional[str]) -> None:
        if i == j:
            raise SmilesSyntaxError("ring closure onto the same atom", s)
        key = frozenset((i, j))
        if key in raw_bonds:
            raise SmilesSyntaxError(f"duplicate bond between atoms {i} and {j}", s)
        raw_bonds[key] = (i, j, symbol)

    for token in tokens:
        if _is_atom_token(token):
            records.append(_read_atom(token, s))
            index = len(records) - 1
            if previous is not None:
                add_bond(previous, index, pending)
            elif pending is not None:
                raise SmilesSyntaxError("bond symbol without a preceding atom", s)
            pending = None
            previous = index
        elif token == "(":
            if previous is None or pending is not None:
                raise SmilesSyntaxError("branch opened without a preceding atom", s)
            branch_stack.append(previous)
        elif token == ")":
            if not branch_stack:
                raise SmilesSyntaxError("unbalanced parenthesis", s)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond before ')'", s)
            previous = branch_stack.pop()
        elif token in _BOND_SYMBOLS:
            if pending is not None or previous is None:
                raise SmilesSyntaxError(f"misplaced bond symbol {token!r}", s)
            pending = token
        elif token == ".":
            if pending is not None:
                raise SmilesSyntaxError("dangling bond before '.'", s)
            previous = None
        elif token[0].isdigit() or token[0] == "%":
            if previous is None:
                raise SmilesSyntaxError(f"ring label {token} without an atom", s)
            label = token.lstrip("%")
            if label in open_rings:
                start, opening_symbol = open_rings.pop(label)
                if pending and opening_symbol and _BOND_SYMBOLS[pending] != _BOND_SYMBOLS[opening_symbol]:
                    raise SmilesSyntaxError(f"conflicting bond orders on ring closure {label}", s)
                add_bond(start, previous, pending or opening_symbol)
            else:
                open_rings[label] = (previous, pending)
            pending = None
        else:
            raise UnknownSymbolError(f"unsupported token {token!r}", s)

    if branch_stack:
        raise SmilesSyntaxError("unbalanced parenthesis", s)
    if open_rings:
        raise SmilesSyntaxError(f"unclosed ring label(s) {sorted(open_rings)}", s)
    if pending is not None:
        raise SmilesSyntaxError("dangling bond at end of string", s)
    if not records:
        raise SmilesSyntaxError("no atoms", s)

    return _build_graph(s, records, list(raw_bonds.values()))


def _build_graph(s: str, records: list[_AtomRecord], raw_bonds: list) -> MolecularGraph:
    n = len(records)
    skeleton = nx.Graph()
    skeleton.add_nodes_from(range(n))
    skeleton.add_edges_from((i, j) for i, j, _ in raw_bonds)
    bridges = {frozenset(edge) for edge in nx.bridges(skeleton)}

    orders: dict[frozenset, BondOrder] = {}
    stereo: dict[frozenset, Optional[str]] = {}
    for i, j, symbol in raw_bonds:
        key = frozenset((i, j))
        both_aromatic = records[i].aromatic and records[j].aromatic
        if symbol is None:
            order = BondOrder.AROMATIC if both_aromatic and key not in bridges else BondOrder.SINGLE
        else:
            order = _BOND_SYMBOLS[symbol]
            if order is BondOrder.AROMATIC and (not both_aromatic or key in bridges):
                raise AromaticityError(f"aromatic bond between atoms {i} and {j} outside an aromatic ring", s)
        orders[key] = order
        stereo[key] = symbol if symbol in ("/", "\\") else None

    ring_atoms = {a for edge in skeleton.edges() if frozenset(edge) not in bridges for a in edge}
    sigma = [0] * n
    degree = [0] * n
    for key, order in orders.items():
        for a in key:
            sigma[a] += _sigma(order)
            degree[a] += 1

    implicit = [0] * n
    needs_pi = [0] * n
    for index, record in enumerate(records):
        if record.aromatic and index not in ring_atoms:
            raise AromaticityError(f"aromatic atom {index} ({record.element}) is not in a ring", s)
        if record.bracket:
            valences = allowed_valences(record.element, record.charge)
            if valences is None:
                continue
            load = sigma[index] + record.hcount
            if record.aromatic:
                needs_pi[index] = 1 if any(v > load for v in valences) and load not in valences else 0
            if load + needs_pi[index] > max(valences):
                raise ValenceError(
                    f"atom {index} ({record.element}{record.charge:+d}) has valence "
                    f"{load + needs_pi[index]}, allowed {valences}", s)
        else:
            resolved = _organic_hydrogens(record.element, record.aromatic, sigma[index])
            if resolved is None:
                raise ValenceError(
                    f"atom {index} ({record.element}) has valence {sigma[index]}, "
                    f"allowed {allowed_valences(record.element)}", s)
            implicit[index], needs_pi[index] = resolved

    _check_aromatic_systems(s, records, orders, needs_pi)

    atoms = tuple(
        Atom(
            element=record.element,
            formal_charge=record.charge,
            is_aromatic=record.aromatic,
            explicit_h=record.hcount,
            implicit_h=implicit[index],
            ring_membership=index in ring_atoms,
            degree=degree[index],
            isotope=record.isotope,
            chirality=record.chirality,
        )
        for index, record in enumerate(records)
    )
    bonds = tuple(
        Bond(begin=min(key), end=max(key), order=order, stereo=stereo[key])
        for key, order in sorted(orders.items(), key=lambda item: sorted(item[0]))
    )
    return MolecularGraph(atoms=atoms, bonds=bonds, source_smiles=s)


def _pi_electrons(record: _AtomRecord, needs_pi: int, exocyclic_double: bool) -> int:
    if needs_pi:
        return 1
    if exocyclic_double:
        return 0
    if record.element in LONE_PAIR_DONORS or record.charge < 0:
        return 2
    return 0


def _check_aromatic_systems(s, records, orders, needs_pi) -> None:
    aromatic = nx.Graph()
    exocyclic_double = set()
    for key, order in orders.items():
        i, j = sorted(key)
        if order is BondOrder.AROMATIC:
            aromatic.add_edge(i, j)
        elif order is BondOrder.DOUBLE:
            exocyclic_double.update((i, j))
    if aromatic.number_of_nodes() == 0:
        return

    pi_atoms = [a for a in aromatic.nodes if needs_pi[a]]
    pi_graph = aromatic.subgraph(pi_atoms)
    matching = nx.max_weight_matching(pi_graph, maxcardinality=True)
    if 2 * len(matching) != len(pi_atoms):
        raise AromaticityError("aromatic system cannot be kekulized", s)

    electrons = {
        a: _pi_electrons(records[a], needs_pi[a], a in exocyclic_double)
        for a in aromatic.nodes
    }
    for system in nx.connected_components(aromatic):
        total = sum(electrons[a] for a in system)
        if total % 4 == 2:
            continue
        rings = nx.minimum_cycle_basis(aromatic.subgraph(system))
        if rings and all(sum(electrons[a] for a in ring) % 4 == 2 for ring in rings):
            continue
        raise AromaticityError(
            f"aromatic system of {len(system)} atoms has {total} pi electrons (not 4n+2)", s)


def validity_check(s: str) -> bool:
    """True iff ``s`` parses into a valid molecular graph."""
    if not isinstance(s, str) or not s:
        return False
    try:
        parse_smiles(s)
    except SmilesParseError:
        return False
    return True


def renumber_atoms(m: MolecularGraph, order: list[int]) -> MolecularGraph:
    """Return the same molecule with atom ``order[k]`` moved to index ``k``."""
    if sorted(order) != list(range(len(m.atoms))):
        raise ValueError(f"order must be a permutation of 0..{len(m.atoms) - 1}")
    position = {old: new for new, old in enumerate(order)}
    atoms = tuple(m.atoms[old] for old in order)
    bonds = tuple(
        sorted(
            (
                replace(
                    bond,
                    begin=min(position[bond.begin], position[bond.end]),
                    end=max(position[bond.begin], position[bond.end]),
                )
                for bond in m.bonds
            ),
            key=lambda b: (b.begin, b.end),
        )
    )
    return MolecularGraph(atoms=atoms, bonds=bonds, source_smiles=m.source_smiles)


# -- canonical ranking -------------------------------------------------------


def _dense_ranks(values: list) -> list[int]:
    lookup = {v: r for r, v in enumerate(sorted(set(values)))}
    return [lookup[v] for v in values]


def _initial_invariants(m: MolecularGraph) -> list[tuple]:
    return [
        (atom.atomic_number, atom.isotope or 0, atom.degree, atom.total_h,
         atom.formal_charge, atom.is_aromatic, atom.ring_membership)
        for atom in m.atoms
    ]


def _refine(m: MolecularGraph, ranks: list[int]) -> list[int]:
    classes = len(set(ranks))
    while True:
        signature = [
            (ranks[i], tuple(sorted((ranks[j], int(bond.order)) for j, bond in m.neighbors[i])))
            for i in range(len(m.atoms))
        ]
        refined = _dense_ranks(signature)
        refined_classes = len(set(refined))
        if refined_classes == classes:
            return refined
        ranks, classes = refined, refined_classes


def symmetry_classes(m: MolecularGraph) -> list[int]:
    """Iteratively refined atom invariants (Morgan-style) before tie-breaking."""
    return _refine(m, _dense_ranks(_initial_invariants(m)))


def canonical_ranks(m: MolecularGraph) -> list[int]:
    """
    Unique canonical rank per atom.

    Ties left after refinement are broken by promoting the lowest-indexed
    atom of the lowest tied class and refining again.
    """
    ranks = symmetry_classes(m)
    n = len(m.atoms)
    while len(set(ranks)) < n:
        counts = Counter(ranks)
        tied = min(r for r, c in counts.items() if c > 1)
        pick = min(i for i in range(n) if ranks[i] == tied)
        ranks = [2 * r + (1 if r == tied and i != pick else 0) for i, r in enumerate(ranks)]
        ranks = _refine(m, _dense_ranks(ranks))
    return ranks


def _kekule_orders(m: MolecularGraph, ranks: list[int]) -> dict[frozenset, BondOrder]:
    """Deterministic Kekulé assignment computed on the canonically relabelled graph."""
    sigma = [0] * len(m.atoms)
    for bond in m.bonds:
        sigma[bond.begin] += _sigma(bond.order)
        sigma[bond.end] += _sigma(bond.order)
    pi_atoms = []
    for i, atom in enumerate(m.atoms):
        if not atom.is_aromatic:
            continue
        valences = allowed_valences(atom.element, atom.formal_charge)
        load = sigma[i] + atom.total_h
        if valences and load not in valences and any(v > load for v in valences):
            pi_atoms.append(i)
    by_rank = sorted(pi_atoms, key=lambda a: ranks[a])
    pi_set = set(pi_atoms)
    relabelled = nx.Graph()
    relabelled.add_nodes_from(ranks[a] for a in by_rank)
    edges = sorted(
        (min(ranks[b.begin], ranks[b.end]), max(ranks[b.begin], ranks[b.end]))
        for b in m.bonds
        if b.order is BondOrder.AROMATIC and b.begin in pi_set and b.end in pi_set
    )
    relabelled.add_edges_from(edges)
    matched = {frozenset(e) for e in nx.max_weight_matching(relabelled, maxcardinality=True)}
    orders = {}
    for bond in m.bonds:
        key = frozenset((bond.begin, bond.end))
        if bond.order is BondOrder.AROMATIC:
            rank_key = frozenset((ranks[bond.begin], ranks[bond.end]))
            orders[key] = BondOrder.DOUBLE if rank_key in matched else BondOrder.SINGLE
        else:
            orders[key] = bond.order
    return orders


def _atom_text(atom: Atom, sigma: int, aromatic: bool) -> str:
    symbol = atom.element.lower() if aromatic else atom.element
    if (
        atom.element in ORGANIC_SUBSET
        and atom.formal_charge == 0
        and atom.isotope is None
    ):
        resolved = _organic_hydrogens(atom.element, aromatic, sigma)
        if resolved is not None and resolved[0] == atom.total_h:
            return symbol
    text = "[" + (str(atom.isotope) if atom.isotope else "") + symbol
    if atom.total_h:
        text += "H" + (str(atom.total_h) if atom.total_h > 1 else "")
    if atom.formal_charge:
        sign = "+" if atom.formal_charge > 0 else "-"
        text += sign + (str(abs(atom.formal_charge)) if abs(atom.formal_charge) > 1 else "")
    return text + "]"


def _bond_text(order: BondOrder, aromatic_ends: bool) -> str:
    if order is BondOrder.DOUBLE:
        return "="
    if order is BondOrder.TRIPLE:
        return "#"
    if order is BondOrder.SINGLE and aromatic_ends:
        return "-"
    return ""


def _ring_label(digit: int) -> str:
    return str(digit) if digit < 10 else f"%{digit:02d}"


@functools.lru_cache(maxsize=8192)
def _canonical_form(m: MolecularGraph, kekulize: bool) -> tuple[str, tuple[int, ...]]:
    ranks = canonical_ranks(m)
    if kekulize:
        orders = _kekule_orders(m, ranks)
        aromatic = [False] * len(m.atoms)
    else:
        orders = {frozenset((b.begin, b.end)): b.order for b in m.bonds}
        aromatic = [atom.is_aromatic for atom in m.atoms]

    sigma = [0] * len(m.atoms)
    for key, order in orders.items():
        for a in key:
            sigma[a] += _sigma(order)
    neighbors = [sorted((j for j, _ in m.neighbors[i]), key=lambda j: ranks[j]) for i in range(len(m.atoms))]

    visited: set[int] = set()
    children: dict[int, list[int]] = {}
    closures_open: dict[int, list[int]] = {}
    closures_close: dict[int, list[int]] = {}
    order: list[int] = []

    def discover(atom: int, parent: Optional[int]) -> None:
        visited.add(atom)
        order.append(atom)
        children[atom] = []
        for nbr in neighbors[atom]:
            if nbr == parent:
                continue
            if nbr not in visited:
                children[atom].append(nbr)
                discover(nbr, atom)
            elif nbr not in closures_close.get(atom, []) and atom not in closures_close.get(nbr, []):
                closures_open.setdefault(nbr, []).append(atom)
                closures_close.setdefault(atom, []).append(nbr)

    starts = []
    for atom in sorted(range(len(m.atoms)), key=lambda a: ranks[a]):
        if atom not in visited:
            starts.append(atom)
            discover(atom, None)

    free_digits: list[int] = []
    next_digit = [1]
    ring_digit: dict[frozenset, int] = {}

    def allocate() -> int:
        if free_digits:
            free_digits.sort()
            return free_digits.pop(0)
        digit = next_digit[0]
        next_digit[0] += 1
        return digit

    def emit(atom: int, parent: Optional[int]) -> str:
        text = ""
        if parent is not None:
            key = frozenset((parent, atom))
            text += _bond_text(orders[key], aromatic[parent] and aromatic[atom])
        text += _atom_text(m.atoms[atom], sigma[atom], aromatic[atom])
        for partner in sorted(closures_close.get(atom, []), key=lambda a: order.index(a)):
            key = frozenset((partner, atom))
            digit = ring_digit.pop(key)
            text += _ring_label(digit)
            free_digits.append(digit)
        for partner in sorted(closures_open.get(atom, []), key=lambda a: ranks[a]):
            key = frozenset((partner, atom))
            digit = allocate()
            ring_digit[key] = digit
            text += _bond_text(orders[key], aromatic[partner] and aromatic[atom]) + _ring_label(digit)
        kids = children[atom]
        for kid in kids[:-1]:
            text += "(" + emit(kid, atom) + ")"
        if kids:
            text += emit(kids[-1], atom)
        return text

    fragments = [emit(start, None) for start in starts]
    return ".".join(fragments), tuple(order)


def canonicalize(m: MolecularGraph, kekulize: bool = False) -> str:
    """
    Canonical SMILES of a molecular graph.

    Parameters
    ----------
    m : MolecularGraph
        Valid molecular graph.
    kekulize : bool
        Write aromatic systems in Kekulé form instead of lowercase aromatic form.

    Returns
    -------
    str
        Identical text for every atom ordering of the same molecule. Stereo
        annotations are not written.

    Examples
    --------
    >>> canonicalize(parse_smiles("OCC")) == canonicalize(parse_smiles("CCO"))
    True
    """
    return _canonical_form(m, kekulize)[0]


def canonical_atom_order(m: MolecularGraph) -> list[int]:
    """Graph atom indices in the order ``canonicalize`` writes them."""
    return list(_canonical_form(m, False)[1])


def canonical_smiles(s: str) -> str:
    """Parse then canonicalize; raises SmilesParseError on invalid input."""
    return canonicalize(parse_smiles(s))


# -- fingerprints ------------------------------------------------------------


def _hash64(*values: int) -> int:
    """Fixed 64-bit mix: BLAKE2b with an 8-byte digest over little-endian uint64 words."""
    payload = struct.pack(f"<{len(values)}Q", *(v & _MASK64 for v in values))
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _environment_seed(atom: Atom) -> int:
    return _hash64(
        atom.atomic_number, atom.degree, atom.total_h, atom.formal_charge,
        atom.isotope or 0, int(atom.ring_membership), int(atom.is_aromatic),
    )


def morgan_environments(m: MolecularGraph, radius: int = FINGERPRINT_RADIUS) -> Counter:
    """
    Unfolded circular-environment identifiers with occurrence counts.

    Environments of radius 1..``radius`` covering a bond set already seen
    are dropped, as are environments that did not grow.
    """
    ids = [_environment_seed(atom) for atom in m.atoms]
    counts = Counter(ids)
    bond_index = {frozenset((b.begin, b.end)): k for k, b in enumerate(m.bonds)}
    coverage = [frozenset() for _ in m.atoms]
    seen: set[frozenset] = set()
    for layer in range(1, radius + 1):
        next_ids = []
        next_coverage = []
        for i in range(len(m.atoms)):
            environment = sorted((int(bond.order), ids[j]) for j, bond in m.neighbors[i])
            flat = [value for pair in environment for value in pair]
            next_ids.append(_hash64(layer, ids[i], *flat))
            covered = set(coverage[i])
            for j, _ in m.neighbors[i]:
                covered.add(bond_index[frozenset((i, j))])
                covered.update(coverage[j])
            next_coverage.append(frozenset(covered))
        for i in sorted(range(len(m.atoms)), key=lambda a: next_ids[a]):
            covered = next_coverage[i]
            if not covered or covered == coverage[i] or covered in seen:
                continue
            seen.add(covered)
            counts[next_ids[i]] += 1
        ids, coverage = next_ids, next_coverage
    return counts


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """Folded Morgan bit vector."""

    bits: np.ndarray
    radius: int = FINGERPRINT_RADIUS

    @property
    def width(self) -> int:
        return int(self.bits.shape[0])

    @property
    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.radius == other.radius and np.array_equal(self.bits, other.bits)

    __hash__ = None


def morgan_fingerprint(m: MolecularGraph, width: int = FINGERPRINT_WIDTH,
                       radius: int = FINGERPRINT_RADIUS) -> Fingerprint:
    """Morgan fingerprint folded modulo ``width`` (default radius 2, 2048 bits)."""
    bits = np.zeros(width, dtype=bool)
    for identifier in morgan_environments(m, radius):
        bits[identifier % width] = True
    return Fingerprint(bits=bits, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """
    Tanimoto similarity |a∧b| / |a∨b|, defined as 0.0 when both are empty.

    Raises
    ------
    ValueError
        If the fingerprint widths differ.
    """
    if a.width != b.width:
        raise ValueError(f"Fingerprint width mismatch: {a.width} vs {b.width}")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(a.bits & b.bits) / union)


# -- substructure search -----------------------------------------------------

_node_match = isomorphism.categorical_node_match(["element", "aromatic"], [None, False])
_edge_match = isomorphism.categorical_edge_match("order", None)


def substructure_match(query: MolecularGraph, target: MolecularGraph) -> list[tuple[int, ...]]:
    """
    All injective embeddings of ``query`` into ``target``.

    Element, aromatic flag, bond presence and bond order must agree; bonds
    absent from the query are unconstrained (monomorphism). Each mapping is a
    tuple whose k-th entry is the target index of query atom k.
    """
    if not query.atoms:
        raise ValueError("query must contain at least one atom")
    matcher = isomorphism.GraphMatcher(
        target.graph, query.graph, node_match=_node_match, edge_match=_edge_match
    )
    mappings = []
    for mapping in matcher.subgraph_monomorphisms_iter():
        inverse = {q: t for t, q in mapping.items()}
        mappings.append(tuple(inverse[k] for k in range(len(query.atoms))))
    return sorted(mappings)


def has_substructure(query: MolecularGraph, target: MolecularGraph) -> bool:
    matcher = isomorphism.GraphMatcher(
        target.graph, query.graph, node_match=_node_match, edge_match=_edge_match
    )
    return matcher.subgraph_is_monomorphic()
