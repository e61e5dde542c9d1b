"""Evaluation of generation runs.

Rediscovery of known inhibitors, generation-volume sweeps over nested
prefixes of one run, warhead motif search, warhead-to-residue distances
from supplied poses and a principal-component projection of fingerprints.
"""

import functools
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from covgen.chem import (
    Fingerprint,
    MolecularGraph,
    SmilesParseError,
    canonical_atom_order,
    canonicalize,
    has_substructure,
    parse_smiles,
)
from covgen.data import InputError, iter_corpus, read_table
from covgen.scorers import ClippedScorer, Direction, ScoreVector

logger = logging.getLogger(__name__)

WARHEAD_MOTIFS = {
    "acrylamide": "C=CC(=O)N",
    "allene": "C=C=C",
    "sultam": "O=C1CS(=O)(=O)N1",
    "methylene_lactone": "C=C1COC1=O",
}
ATYPICAL_MOTIFS = ("allene", "sultam", "methylene_lactone")

EVALUATION_COLUMNS = ["Model", "Desirable Structures", "Rediscovered", "Rate (%)"]
SWEEP_COLUMNS = ["Generated", "Desirable", "Rediscovered", "Rate (%)"]
PROJECTION_COLUMNS = ["id", "pc1", "pc2", "cohort"]

TOP_K = 250
CONTACT_CUTOFF = 10.0


class NoWarheadError(ValueError):
    """The attribution map tags no atoms."""


class PoseError(ValueError):
    """A pose file is malformed or does not fit its molecule."""


@functools.lru_cache(maxsize=64)
def motif_graph(motif: str) -> MolecularGraph:
    """Graph of a built-in motif name (see ``WARHEAD_MOTIFS``) or a SMILES query."""
    return parse_smiles(WARHEAD_MOTIFS.get(motif, motif))


@dataclass(frozen=True)
class MoleculeRecord:
    mol_id: str
    smiles: str
    key: Optional[str]
    desirable: bool
    vector: Optional[ScoreVector] = None

    @property
    def valid(self) -> bool:
        return self.key is not None


@dataclass(frozen=True)
class GenerationRun:
    """
    Records of one generation run in sampling order.

    ``key`` is the canonical SMILES of a valid record and ``None`` otherwise.
    """

    run_id: str
    preset: str
    records: tuple[MoleculeRecord, ...]

    @property
    def generated(self) -> int:
        return len(self.records)

    @property
    def valid(self) -> int:
        return sum(r.valid for r in self.records)

    @property
    def desirable(self) -> int:
        return sum(r.desirable for r in self.records)

    def prefix(self, n: int) -> "GenerationRun":
        return GenerationRun(self.run_id, self.preset, self.records[:n])

    def desirable_keys(self) -> frozenset[str]:
        return frozenset(r.key for r in self.records if r.desirable and r.key is not None)


def _canonical_key(smiles: str) -> Optional[str]:
    try:
        return canonicalize(parse_smiles(smiles))
    except SmilesParseError:
        return None


def build_run(run_id: str, preset: str, vectors: Sequence[ScoreVector]) -> GenerationRun:
    """Generation run from scored molecules (canonical keys computed for valid ones)."""
    records = []
    for v in vectors:
        key = _canonical_key(v.smiles) if v.valid else None
        records.append(MoleculeRecord(v.mol_id, v.smiles, key, bool(v.desirable and key), v))
    return GenerationRun(run_id, preset, tuple(records))


def _truthy(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("true", "1", "yes")
    return bool(value)


def load_run(path: Union[str, Path], run_id: Optional[str] = None, preset: str = "") -> GenerationRun:
    """
    Read a score CSV (as written by ``score``/``sample``) into a run.

    Raises
    ------
    InputError
        If the ``id``, ``smiles``, ``valid`` or ``desirable`` column is missing.
    """
    path = Path(path)
    df = read_table(path)
    missing = [c for c in ("id", "smiles", "valid", "desirable") if c not in df.columns]
    if missing:
        raise InputError(f"{path}: missing column(s) {missing}. Available: {list(df.columns)}")
    names = [c[: -len("_raw")] for c in df.columns if c.endswith("_raw")]
    records = []
    for row in df.to_dict("records"):
        valid = _truthy(row["valid"])
        smiles = "" if pd.isna(row["smiles"]) else str(row["smiles"])
        key = _canonical_key(smiles) if valid else None
        vector = ScoreVector(
            mol_id=str(row["id"]), smiles=smiles, valid=valid and key is not None,
            raw={n: float(row[f"{n}_raw"]) for n in names if f"{n}_raw" in row},
            clipped={n: float(row[f"{n}_clipped"]) for n in names if f"{n}_clipped" in row},
            desirable=_truthy(row["desirable"]),
        )
        records.append(MoleculeRecord(vector.mol_id, smiles, key, vector.desirable and key is not None, vector))
    logger.info(f"✓ Loaded run {run_id or path.stem}: {len(records)} molecules from {path}")
    return GenerationRun(run_id or path.stem, preset, tuple(records))


def build_reference(path: Union[str, Path]) -> frozenset[str]:
    """Canonical keys of a reference inhibitor corpus; invalid lines are skipped."""
    keys, skipped = set(), 0
    for record in iter_corpus(path):
        key = _canonical_key(record.smiles)
        if key is None:
            skipped += 1
            logger.warning(f"{path}:{record.line}: skipping invalid reference SMILES {record.smiles!r}")
            continue
        keys.add(key)
    logger.info(f"✓ Reference set: {len(keys)} unique structures ({skipped} invalid lines skipped)")
    return frozenset(keys)


@dataclass(frozen=True)
class Rediscovery:
    desirable: int
    count: int
    rate: Optional[float]


def rediscovery_rate(run: GenerationRun, reference: frozenset[str]) -> Rediscovery:
    """
    Distinct desirable structures found in the reference set.

    ``rate = 100 * count / desirable``; ``None`` when the run has no
    desirable structures.

    Examples
    --------
    24 rediscovered among 4,793 desirable structures is a rate of 0.50 %.
    """
    count = len(run.desirable_keys() & reference)
    desirable = run.desirable
    rate = 100.0 * count / desirable if desirable else None
    return Rediscovery(desirable=desirable, count=count, rate=rate)


def format_rate(rate: Optional[float]) -> str:
    return "n/a" if rate is None else f"{rate:.2f}"


def evaluation_table(runs: Sequence[GenerationRun], reference: frozenset[str]) -> pd.DataFrame:
    """One row per run: Model, Desirable Structures, Rediscovered, Rate (%)."""
    rows = []
    for run in runs:
        result = rediscovery_rate(run, reference)
        rows.append([run.preset or run.run_id, result.desirable, result.count, format_rate(result.rate)])
    return pd.DataFrame(rows, columns=EVALUATION_COLUMNS)


def sweep_table(run: GenerationRun, scales: Sequence[int], reference: frozenset[str]) -> pd.DataFrame:
    """
    Rediscovery at nested prefixes of ``run``.

    Raises
    ------
    ValueError
        If ``scales`` is empty, not strictly ascending, or exceeds the run size.
    """
    scales = [int(s) for s in scales]
    if not scales:
        raise ValueError("At least one scale is required")
    if any(b <= a for a, b in zip(scales, scales[1:])) or scales[0] < 1:
        raise ValueError(f"Scales must be positive and strictly ascending, got {scales}")
    if scales[-1] > run.generated:
        raise ValueError(f"Largest scale {scales[-1]} exceeds the run size {run.generated}")
    rows = []
    for scale in scales:
        result = rediscovery_rate(run.prefix(scale), reference)
        rows.append([scale, result.desirable, result.count, format_rate(result.rate)])
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def volume_sweep(g, active: Sequence[ClippedScorer], scales: Sequence[int], reference: frozenset[str],
                 context=None, seed: int = 0, temperature: float = 1.0,
                 preset: str = "") -> tuple[pd.DataFrame, GenerationRun]:
    """
    Sample once at the largest scale and tabulate rediscovery at every scale.

    Sampling is prefix-stable, so each smaller run is the start of the
    larger one and absolute rediscoveries are non-decreasing in scale.
    """
    from covgen.generator import sample
    from covgen.scorers import score_batch

    t0 = time.time()
    largest = max(int(s) for s in scales)
    sequences = sample(g, largest, temperature=temperature, seed=seed)
    ids = [f"S{i:07d}" for i in range(largest)]
    vectors = score_batch(ids, [s.smiles for s in sequences], active, context)
    run = build_run(f"sweep-{preset or 'run'}", preset, vectors)
    table = sweep_table(run, scales, reference)
    logger.info(f"✓ Volume sweep over {len(table)} scales in {time.time() - t0:.1f}s")
    return table, run


def motif_search(run: GenerationRun, motifs: Mapping[str, MolecularGraph]) -> dict[str, list[str]]:
    """Ids of desirable records containing each motif."""
    graphs = {}
    for r in run.records:
        if r.desirable:
            graphs[r.mol_id] = parse_smiles(r.smiles)
    hits = {name: [mol_id for mol_id, m in graphs.items() if has_substructure(query, m)]
            for name, query in motifs.items()}
    for name, ids in hits.items():
        logger.info(f"Motif {name}: {len(ids)} hit(s) among {len(graphs)} desirable structures")
    return hits


def motif_table(hits: Mapping[str, Sequence[str]], run: GenerationRun) -> pd.DataFrame:
    smiles = {r.mol_id: r.smiles for r in run.records}
    rows = [(name, mol_id, smiles[mol_id]) for name, ids in hits.items() for mol_id in ids]
    return pd.DataFrame(rows, columns=["motif", "id", "smiles"])


@dataclass(frozen=True)
class PoseFile:
    """
    Docked pose of one molecule.

    ``coordinates[k]`` belongs to the k-th heavy atom in canonical order.
    """

    mol_id: str
    residue: str
    anchor: np.ndarray
    coordinates: np.ndarray


def read_pose(path: Union[str, Path]) -> PoseFile:
    """
    Read a pose file.

    The first non-comment line is ``mol_id residue x y z`` (the residue
    anchor); every following line is ``index x y z`` with indices 0..n-1.

    Raises
    ------
    PoseError
        On malformed lines, non-finite coordinates or missing indices.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"Pose file not found: {path}")
    lines = [
        (lineno, line.split())
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not lines:
        raise PoseError(f"{path}: empty pose file")
    lineno, header = lines[0]
    if len(header) != 5:
        raise PoseError(f"{path}:{lineno}: header must be 'mol_id residue x y z', found {len(header)} fields")
    try:
        anchor = np.array([float(v) for v in header[2:]])
    except ValueError as e:
        raise PoseError(f"{path}:{lineno}: bad anchor coordinate ({e})") from None
    atoms = {}
    for lineno, fields in lines[1:]:
        if len(fields) != 4:
            raise PoseError(f"{path}:{lineno}: expected 'index x y z', found {len(fields)} fields")
        try:
            index = int(fields[0])
            xyz = [float(v) for v in fields[1:]]
        except ValueError as e:
            raise PoseError(f"{path}:{lineno}: {e}") from None
        if index in atoms:
            raise PoseError(f"{path}:{lineno}: duplicate atom index {index}")
        atoms[index] = xyz
    if sorted(atoms) != list(range(len(atoms))):
        raise PoseError(f"{path}: atom indices must be 0..{len(atoms) - 1}, found {sorted(atoms)}")
    coordinates = np.array([atoms[i] for i in range(len(atoms))], dtype=float).reshape(len(atoms), 3)
    if not (np.all(np.isfinite(coordinates)) and np.all(np.isfinite(anchor))):
        raise PoseError(f"{path}: coordinates must be finite")
    return PoseFile(mol_id=header[0], residue=header[1], anchor=anchor, coordinates=coordinates)


def atom_coordinates(m: MolecularGraph, pose: PoseFile) -> dict[int, np.ndarray]:
    """Pose coordinates keyed by graph atom index."""
    order = [i for i in canonical_atom_order(m) if m.atoms[i].element != "H"]
    if len(order) != len(pose.coordinates):
        raise PoseError(
            f"Pose {pose.mol_id!r} has {len(pose.coordinates)} atoms but the molecule has "
            f"{len(order)} heavy atoms"
        )
    return {atom: pose.coordinates[k] for k, atom in enumerate(order)}


def warhead_distance(m: MolecularGraph, att, pose: PoseFile) -> float:
    """
    Minimum distance (Å) from any tagged atom to the residue anchor.

    Raises
    ------
    NoWarheadError
        If the attribution map tags no atoms.
    PoseError
        If the pose atom count does not match the molecule.
    """
    if not att.tagged:
        raise NoWarheadError(f"No atoms tagged above {att.cutoff} for pose {pose.mol_id!r}")
    coords = atom_coordinates(m, pose)
    tagged = [coords[i] for i in sorted(att.tagged) if i in coords]
    if not tagged:
        raise NoWarheadError(f"Only hydrogens tagged for pose {pose.mol_id!r}")
    return float(min(np.linalg.norm(xyz - pose.anchor) for xyz in tagged))


def top_by_score(run: GenerationRun, scorer: ClippedScorer, k: int = TOP_K) -> list[MoleculeRecord]:
    """
    The ``k`` best desirable records by raw score in the scorer's favourable direction.

    Ties keep sampling order.
    """
    pool = [r for r in run.records if r.desirable and r.vector is not None and scorer.name in r.vector.raw]
    sign = 1.0 if scorer.direction is Direction.LOWER_BETTER else -1.0
    ranked = sorted(enumerate(pool), key=lambda item: (sign * item[1].vector.raw[scorer.name], item[0]))
    return [r for _, r in ranked[:k]]


def filter_close_contacts(distances: Mapping[str, float], cutoff: float = CONTACT_CUTOFF) -> dict[str, float]:
    """Candidates whose warhead distance is below ``cutoff`` Å."""
    return {mol_id: d for mol_id, d in distances.items() if math.isfinite(d) and d < cutoff}


@dataclass(frozen=True)
class Projection:
    coordinates: np.ndarray
    components: np.ndarray
    variances: np.ndarray
    mean: np.ndarray

    def reconstruction_error(self, fps: Sequence[Fingerprint], k: Optional[int] = None) -> float:
        """Squared reconstruction error using the first ``k`` components."""
        k = self.components.shape[0] if k is None else k
        centered = _fingerprint_matrix(fps) - self.mean
        approx = self.coordinates[:, :k] @ self.components[:k]
        return float(np.sum((centered - approx) ** 2))


def _fingerprint_matrix(fps: Sequence[Fingerprint]) -> np.ndarray:
    return np.vstack([fp.bits.astype(float) for fp in fps])


def _leading_eigenvector(gram: np.ndarray, max_iter: int = 5000, tol: float = 1e-12) -> tuple[float, np.ndarray]:
    n = gram.shape[0]
    vector = np.sin(np.arange(1, n + 1, dtype=float))
    vector /= np.linalg.norm(vector)
    value = 0.0
    for _ in range(max_iter):
        nxt = gram @ vector
        norm = np.linalg.norm(nxt)
        if norm == 0:
            return 0.0, vector
        nxt /= norm
        converged = np.linalg.norm(nxt - vector) < tol
        vector = nxt
        value = float(vector @ gram @ vector)
        if converged:
            break
    return value, vector


def project_chemical_space(fps: Sequence[Fingerprint], k: int = 2) -> Projection:
    """
    Principal-component projection of fingerprint bit vectors.

    Components are found one at a time by power iteration on the centred
    Gram matrix with deflation. Each component's sign is fixed so that its
    largest-magnitude loading is positive.

    Raises
    ------
    ValueError
        If fewer than two fingerprints are given or ``k < 1``.
    """
    if len(fps) < 2:
        raise ValueError(f"Projection needs at least 2 molecules, got {len(fps)}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    x = _fingerprint_matrix(fps)
    mean = x.mean(axis=0)
    centered = x - mean
    gram = centered @ centered.T
    n, d = centered.shape
    components = np.zeros((k, d))
    coordinates = np.zeros((n, k))
    variances = np.zeros(k)
    for c in range(min(k, n)):
        value, u = _leading_eigenvector(gram)
        if value <= 1e-9 * max(1.0, np.trace(gram)):
            break
        direction = centered.T @ u / math.sqrt(value)
        if direction[np.argmax(np.abs(direction))] < 0:
            direction, u = -direction, -u
        components[c] = direction
        coordinates[:, c] = centered @ direction
        variances[c] = value / (n - 1)
        gram = gram - value * np.outer(u, u)
    return Projection(coordinates=coordinates, components=components, variances=variances, mean=mean)


def projection_frame(ids: Sequence[str], projection: Projection, cohorts: Sequence[str]) -> pd.DataFrame:
    coords = projection.coordinates
    second = coords[:, 1] if coords.shape[1] > 1 else np.zeros(len(ids))
    return pd.DataFrame({"id": list(ids), "pc1": coords[:, 0], "pc2": second, "cohort": list(cohorts)},
                        columns=PROJECTION_COLUMNS)
