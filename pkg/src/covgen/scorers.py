"""Clipped scoring functions, desirability, reward and batch scoring.

Every scorer maps a raw value into [0, 1] through a monotone piecewise-linear
clip (optionally preceded by a hard floor). Desirability thresholds are
evaluated on raw values. Docking, overlap and other values the engine does
not compute can be ingested from ``id,score`` CSV files.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import dask
import numpy as np
import pandas as pd
import xarray as xr

from covgen.chem import (
    Fingerprint,
    MolecularGraph,
    SmilesParseError,
    has_substructure,
    morgan_fingerprint,
    parse_smiles,
    tanimoto,
)
from covgen.data import thread_count
from covgen.descriptors import FragmentScoreTable, qed, sa_score

logger = logging.getLogger(__name__)

PARTITION_SIZE = 256


class ScoringError(RuntimeError):
    """A scorer could not be evaluated for a batch."""


class ExternalScoreError(ValueError):
    """An external score file has malformed rows."""


class ScorerKind(str, Enum):
    VALIDITY = "validity"
    SA = "sa"
    COVALENT_ACTIVITY = "covalent_activity"
    RESIDUE_AFFINITY = "residue_affinity"
    DOCKING = "docking"
    OVERLAP = "overlap"
    TANIMOTO = "tanimoto"
    QED = "qed"
    EXTERNAL = "external"
    MOTIF = "motif"


class Direction(str, Enum):
    HIGHER_BETTER = "higher_better"
    LOWER_BETTER = "lower_better"


@dataclass(frozen=True)
class Threshold:
    """Raw-score predicate ``raw >= value`` or ``raw <= value``."""

    op: str
    value: float

    def __post_init__(self):
        if self.op not in (">=", "<="):
            raise ValueError(f"Threshold operator must be '>=' or '<=', got {self.op!r}")

    def passes(self, raw: float) -> bool:
        if not math.isfinite(raw):
            return False
        return raw >= self.value if self.op == ">=" else raw <= self.value


@dataclass(frozen=True)
class ClippedScorer:
    """
    One objective: raw computation kind, clip map, threshold and weight.

    Parameters
    ----------
    name : str
        Identifier used as the column name in score tables.
    kind : ScorerKind
        How the raw value is produced.
    knots : tuple of (x, y)
        Piecewise-linear clip; x strictly increasing, y in [0, 1] and
        monotone in ``direction``. Values outside the knot range take the
        end values.
    threshold : Threshold, optional
        Desirability predicate on the raw value.
    hard_floor : float, optional
        Raw values below this clip to 0 before the knots apply.
    weight : float
        Reward weight (>= 0).
    direction : Direction
        Whether larger or smaller raw values are favourable.
    motif : str, optional
        SMILES of the motif graph for ``kind == motif``.
    """

    name: str
    kind: ScorerKind
    knots: tuple[tuple[float, float], ...]
    threshold: Optional[Threshold] = None
    hard_floor: Optional[float] = None
    weight: float = 1.0
    direction: Direction = Direction.HIGHER_BETTER
    motif: Optional[str] = None

    def __post_init__(self):
        if len(self.knots) < 2:
            raise ValueError(f"Scorer {self.name!r} needs at least 2 knots, got {len(self.knots)}")
        xs = [x for x, _ in self.knots]
        ys = [y for _, y in self.knots]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError(f"Scorer {self.name!r} knots must be strictly increasing in x: {xs}")
        if any(y < 0.0 or y > 1.0 for y in ys):
            raise ValueError(f"Scorer {self.name!r} knot values must lie in [0, 1]: {ys}")
        increasing = all(b >= a for a, b in zip(ys, ys[1:]))
        decreasing = all(b <= a for a, b in zip(ys, ys[1:]))
        if self.direction is Direction.HIGHER_BETTER and not increasing:
            raise ValueError(f"Scorer {self.name!r} is higher_better but its clip is not non-decreasing")
        if self.direction is Direction.LOWER_BETTER and not decreasing:
            raise ValueError(f"Scorer {self.name!r} is lower_better but its clip is not non-increasing")
        if self.weight < 0 or not math.isfinite(self.weight):
            raise ValueError(f"Scorer {self.name!r} weight must be finite and >= 0, got {self.weight}")
        if self.kind is ScorerKind.MOTIF and not self.motif:
            raise ValueError(f"Motif scorer {self.name!r} needs a motif SMILES")

    @property
    def worst_raw(self) -> float:
        """Least favourable raw value on the clip's domain."""
        if self.direction is Direction.HIGHER_BETTER:
            return self.knots[0][0]
        return self.knots[-1][0]

    def clip(self, raw: float) -> float:
        return clip(self, raw)


def clip(s: ClippedScorer, raw: float) -> float:
    """
    Map a raw score into [0, 1].

    Raises
    ------
    ValueError
        If ``raw`` is not finite.

    Examples
    --------
    >>> clip(default_scorer("covalent_activity"), 0.49)
    0.0
    """
    if not math.isfinite(raw):
        raise ValueError(f"Scorer {s.name!r}: raw value must be finite, got {raw}")
    if s.hard_floor is not None and raw < s.hard_floor:
        return 0.0
    xs = [x for x, _ in s.knots]
    ys = [y for _, y in s.knots]
    return float(np.interp(raw, xs, ys))


_DEFAULTS = {
    ScorerKind.VALIDITY: dict(knots=((0.0, 0.0), (1.0, 1.0)), threshold=Threshold(">=", 1.0)),
    ScorerKind.SA: dict(knots=((3.0, 1.0), (8.0, 0.0)), threshold=Threshold("<=", 6.0),
                        direction=Direction.LOWER_BETTER),
    ScorerKind.COVALENT_ACTIVITY: dict(knots=((0.5, 0.0), (1.0, 1.0)), hard_floor=0.5,
                                       threshold=Threshold(">=", 0.75)),
    ScorerKind.RESIDUE_AFFINITY: dict(knots=((0.5, 0.0), (1.0, 1.0)), hard_floor=0.5,
                                      threshold=Threshold(">=", 0.75)),
    ScorerKind.DOCKING: dict(knots=((-10.0, 1.0), (-4.0, 0.0)), threshold=Threshold("<=", -6.0),
                             direction=Direction.LOWER_BETTER),
    ScorerKind.OVERLAP: dict(knots=((0.0, 0.0), (160.0, 1.0)), threshold=Threshold(">=", 100.0)),
    ScorerKind.TANIMOTO: dict(knots=((0.0, 0.0), (0.4, 1.0)), threshold=Threshold(">=", 0.1)),
    ScorerKind.QED: dict(knots=((0.0, 0.0), (1.0, 1.0))),
    ScorerKind.EXTERNAL: dict(knots=((0.0, 0.0), (1.0, 1.0))),
    ScorerKind.MOTIF: dict(knots=((0.0, 0.0), (1.0, 1.0)), threshold=Threshold(">=", 1.0)),
}


def default_scorer(kind: Union[str, ScorerKind], name: Optional[str] = None, **overrides) -> ClippedScorer:
    """Scorer with the default clip knots and threshold for its kind."""
    kind = ScorerKind(kind)
    settings = dict(_DEFAULTS[kind])
    settings.update(overrides)
    return ClippedScorer(name=name or kind.value, kind=kind, **settings)


class ScorerRegistry:
    """Ordered, name-unique collection of scorers."""

    def __init__(self, scorers: Iterable[ClippedScorer]):
        self._scorers: dict[str, ClippedScorer] = {}
        for scorer in scorers:
            if scorer.name in self._scorers:
                raise ValueError(f"Duplicate scorer name {scorer.name!r}")
            self._scorers[scorer.name] = scorer

    def __getitem__(self, name: str) -> ClippedScorer:
        try:
            return self._scorers[name]
        except KeyError:
            raise ValueError(f"Unknown scorer {name!r}. Available: {list(self._scorers)}") from None

    def __iter__(self):
        return iter(self._scorers.values())

    def __len__(self) -> int:
        return len(self._scorers)

    @property
    def names(self) -> list[str]:
        return list(self._scorers)

    def select(self, names: Iterable[str]) -> list[ClippedScorer]:
        return [self[name] for name in names]


@dataclass(frozen=True)
class ScoreVector:
    """Per-molecule raw and clipped scores; invalid molecules carry NaN raws and zero clips."""

    mol_id: str
    smiles: str
    valid: bool
    raw: dict[str, float]
    clipped: dict[str, float]
    desirable: bool = False

    def clipped_array(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self._value(self.clipped, name) for name in names], dtype=float)

    def _value(self, table: dict, name: str) -> float:
        if name not in table:
            raise ValueError(
                f"ScoreVector {self.mol_id!r} has no value for scorer {name!r}. "
                f"Available: {list(table)}"
            )
        return table[name]


def is_desirable(v: ScoreVector, active: Sequence[ClippedScorer]) -> bool:
    """
    True iff the molecule is valid and every active threshold passes on its raw value.

    Raises
    ------
    ValueError
        If an active scorer has no value in ``v``.
    """
    if not v.valid:
        return False
    for scorer in active:
        raw = v._value(v.raw, scorer.name)
        if scorer.threshold is not None and not scorer.threshold.passes(raw):
            return False
    return True


def reward(v: ScoreVector, active: Sequence[ClippedScorer]) -> float:
    """
    Weighted mean of the active clipped scores, in [0, 1].

    Invalid molecules and all-zero weights give 0.0.

    Raises
    ------
    ValueError
        If ``active`` is empty or a scorer value is missing.
    """
    if not active:
        raise ValueError("reward requires at least one active scorer")
    if not v.valid:
        return 0.0
    total_weight = sum(s.weight for s in active)
    if total_weight == 0:
        return 0.0
    weighted = sum(s.weight * v._value(v.clipped, s.name) for s in active)
    return float(weighted / total_weight)


def ingest_external_scores(path: Union[str, Path]) -> dict[str, float]:
    """
    Read an ``id,score`` CSV into a mapping.

    A first row whose score is not numeric is treated as a header. Blank
    lines and ``#`` comments are skipped. Duplicate ids keep the last value
    with a warning.

    Raises
    ------
    ExternalScoreError
        Listing every malformed line by number.
    """
    path = Path(path)
    scores: dict[str, float] = {}
    problems: list[str] = []
    seen_data = False
    with path.open(encoding="utf-8", newline="") as handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                problems.append(f"line {lineno}: expected 2 fields (id, score), found {len(row)}")
                seen_data = True
                continue
            mol_id, text = row[0].strip(), row[1].strip()
            try:
                value = float(text)
            except ValueError:
                if not seen_data:
                    seen_data = True
                    continue
                problems.append(f"line {lineno}: score {text!r} is not a number")
                continue
            seen_data = True
            if not mol_id:
                problems.append(f"line {lineno}: empty id")
                continue
            if not math.isfinite(value):
                problems.append(f"line {lineno}: score {text!r} is not finite")
                continue
            if mol_id in scores:
                logger.warning(f"{path}:{lineno}: duplicate id {mol_id!r}, keeping the last value")
            scores[mol_id] = value
    if problems:
        raise ExternalScoreError(f"Malformed rows in {path}: " + "; ".join(problems))
    logger.info(f"✓ Ingested {len(scores)} external scores from {path}")
    return scores


@dataclass
class ScoringContext:
    """
    Everything scorers need besides the molecule.

    Model-backed kinds (covalent activity, residue affinity, docking) use the
    graph model when present, otherwise the external score map registered
    under the scorer's name.
    """

    fragment_table: Optional[FragmentScoreTable] = None
    reference_fingerprints: list[Fingerprint] = field(default_factory=list)
    covalent_model: Optional[object] = None
    residue_model: Optional[object] = None
    residue_class: str = "Cys"
    docking_model: Optional[object] = None
    external_scores: dict[str, dict[str, float]] = field(default_factory=dict)

    @classmethod
    def with_references(cls, smiles: Iterable[str], **kwargs) -> "ScoringContext":
        fps = [morgan_fingerprint(parse_smiles(s)) for s in smiles]
        return cls(reference_fingerprints=fps, **kwargs)

    def missing_sources(self, active: Sequence[ClippedScorer]) -> list[str]:
        """Names of active scorers with nothing to compute their raw value from."""
        models = {
            ScorerKind.COVALENT_ACTIVITY: self.covalent_model,
            ScorerKind.RESIDUE_AFFINITY: self.residue_model,
            ScorerKind.DOCKING: self.docking_model,
        }
        missing = []
        for scorer in active:
            if scorer.kind in (ScorerKind.VALIDITY, ScorerKind.QED, ScorerKind.MOTIF):
                continue
            if scorer.kind is ScorerKind.SA:
                ready = self.fragment_table is not None
            elif scorer.kind is ScorerKind.TANIMOTO:
                ready = bool(self.reference_fingerprints)
            else:
                ready = models.get(scorer.kind) is not None or scorer.name in self.external_scores
            if not ready:
                missing.append(scorer.name)
        return missing


def _external_raw(scorer: ClippedScorer, ids: Sequence[str], context: ScoringContext) -> np.ndarray:
    table = context.external_scores.get(scorer.name)
    if table is None:
        raise ScoringError(
            f"Scorer {scorer.name!r} ({scorer.kind.value}) has neither a model nor an external "
            f"score file. External files: {list(context.external_scores)}"
        )
    missing = [i for i in ids if i not in table]
    if missing:
        logger.warning(
            f"{len(missing)} molecule(s) missing from external scores for {scorer.name!r}; "
            f"using worst raw value {scorer.worst_raw}"
        )
    return np.array([table.get(i, scorer.worst_raw) for i in ids], dtype=float)


def _raw_values(scorer: ClippedScorer, ids: Sequence[str], graphs: Sequence[MolecularGraph],
                context: ScoringContext) -> np.ndarray:
    kind = scorer.kind
    if kind is ScorerKind.VALIDITY:
        return np.ones(len(graphs))
    if kind is ScorerKind.SA:
        if context.fragment_table is None:
            raise ScoringError(f"Scorer {scorer.name!r} needs a fitted fragment table")
        return np.array([sa_score(m, context.fragment_table) for m in graphs])
    if kind is ScorerKind.QED:
        return np.array([qed(m) for m in graphs])
    if kind is ScorerKind.TANIMOTO:
        if not context.reference_fingerprints:
            raise ScoringError(f"Scorer {scorer.name!r} needs at least one reference molecule")
        return np.array([
            max(tanimoto(morgan_fingerprint(m), ref) for ref in context.reference_fingerprints)
            for m in graphs
        ])
    if kind is ScorerKind.MOTIF:
        query = parse_smiles(scorer.motif)
        return np.array([1.0 if has_substructure(query, m) else 0.0 for m in graphs])

    from covgen import gnn

    if kind is ScorerKind.COVALENT_ACTIVITY and context.covalent_model is not None:
        return gnn.predict(context.covalent_model, list(graphs))
    if kind is ScorerKind.RESIDUE_AFFINITY and context.residue_model is not None:
        probabilities = gnn.predict(context.residue_model, list(graphs))
        return probabilities[:, gnn.residue_index(context.residue_class)]
    if kind is ScorerKind.DOCKING and context.docking_model is not None:
        return gnn.predict(context.docking_model, list(graphs))
    return _external_raw(scorer, ids, context)


def _score_partition(ids: Sequence[str], smiles: Sequence[str], active: Sequence[ClippedScorer],
                     context: ScoringContext) -> list[ScoreVector]:
    graphs: dict[int, MolecularGraph] = {}
    for k, s in enumerate(smiles):
        try:
            m = parse_smiles(s)
        except SmilesParseError as e:
            logger.debug(f"Invalid molecule {ids[k]}: {e}")
            continue
        # hydrogen-only graphs have no descriptors
        if m.heavy_atom_count == 0:
            logger.debug(f"Invalid molecule {ids[k]}: no heavy atoms")
            continue
        graphs[k] = m

    valid_positions = sorted(graphs)
    raw_columns: dict[str, np.ndarray] = {}
    if valid_positions:
        valid_ids = [ids[k] for k in valid_positions]
        valid_graphs = [graphs[k] for k in valid_positions]
        for scorer in active:
            try:
                raw_columns[scorer.name] = np.asarray(
                    _raw_values(scorer, valid_ids, valid_graphs, context), dtype=float
                )
            except ScoringError:
                raise
            except Exception as e:
                raise ScoringError(f"Scorer {scorer.name!r} failed: {e}") from e

    vectors = []
    row_of = {k: r for r, k in enumerate(valid_positions)}
    for k, (mol_id, s) in enumerate(zip(ids, smiles)):
        if k not in row_of:
            vectors.append(ScoreVector(
                mol_id=mol_id, smiles=s, valid=False,
                raw={sc.name: math.nan for sc in active},
                clipped={sc.name: 0.0 for sc in active},
            ))
            continue
        raw = {sc.name: float(raw_columns[sc.name][row_of[k]]) for sc in active}
        for name, value in raw.items():
            if not math.isfinite(value):
                raise ScoringError(f"Scorer {name!r} produced a non-finite value for {mol_id!r}")
        clipped = {sc.name: clip(sc, raw[sc.name]) for sc in active}
        vector = ScoreVector(mol_id=mol_id, smiles=s, valid=True, raw=raw, clipped=clipped)
        vectors.append(ScoreVector(
            mol_id=mol_id, smiles=s, valid=True, raw=raw, clipped=clipped,
            desirable=is_desirable(vector, active),
        ))
    return vectors


def score_batch(ids: Sequence[str], smiles: Sequence[str], active: Sequence[ClippedScorer],
                context: Optional[ScoringContext] = None,
                partition_size: int = PARTITION_SIZE) -> list[ScoreVector]:
    """
    Parse and score a batch in parallel, preserving input order.

    Parameters
    ----------
    ids, smiles : sequence of str
        Molecule ids and SMILES, aligned.
    active : sequence of ClippedScorer
        Scorers to evaluate.
    context : ScoringContext, optional
        Fragment table, references, models and external scores.
    partition_size : int
        Molecules per dask task.

    Returns
    -------
    list of ScoreVector
        One per input; unparseable SMILES and hydrogen-only molecules yield
        ``valid=False`` rows.

    Raises
    ------
    ScoringError
        If a scorer fails on the batch.
    """
    if len(ids) != len(smiles):
        raise ValueError(f"ids and smiles differ in length: {len(ids)} vs {len(smiles)}")
    context = context or ScoringContext()
    t0 = time.time()
    tasks = [
        dask.delayed(_score_partition)(ids[i:i + partition_size], smiles[i:i + partition_size],
                                       active, context)
        for i in range(0, len(ids), partition_size)
    ]
    parts = dask.compute(*tasks, scheduler="threads", num_workers=thread_count()) if tasks else ()
    vectors = [v for part in parts for v in part]
    n_valid = sum(v.valid for v in vectors)
    if vectors and n_valid == 0:
        logger.warning(f"All {len(vectors)} molecules in the batch are invalid")
    logger.debug(f"Scored {len(vectors)} molecules ({n_valid} valid) in {time.time() - t0:.2f}s")
    return vectors


def score_table(vectors: Sequence[ScoreVector], active: Sequence[ClippedScorer]) -> xr.Dataset:
    """Score vectors as a labelled ``molecule × scorer`` dataset."""
    names = [s.name for s in active]
    raw = np.array([[v.raw[n] for n in names] for v in vectors], dtype=float).reshape(len(vectors), len(names))
    clipped = np.array([[v.clipped[n] for n in names] for v in vectors], dtype=float).reshape(len(vectors), len(names))
    return xr.Dataset(
        data_vars={
            "raw": (("molecule", "scorer"), raw),
            "clipped": (("molecule", "scorer"), clipped),
            "valid": ("molecule", np.array([v.valid for v in vectors], dtype=bool)),
            "desirable": ("molecule", np.array([v.desirable for v in vectors], dtype=bool)),
            "reward": ("molecule", np.array([reward(v, active) for v in vectors], dtype=float)),
        },
        coords={
            "molecule": [v.mol_id for v in vectors],
            "scorer": names,
            "smiles": ("molecule", [v.smiles for v in vectors]),
            "weight": ("scorer", [s.weight for s in active]),
        },
    )


def score_frame(vectors: Sequence[ScoreVector], active: Sequence[ClippedScorer]) -> pd.DataFrame:
    """Score CSV layout: id, smiles, valid, ``<name>_raw``/``<name>_clipped`` pairs, desirable, reward.

    Flattened from ``score_table``.
    """
    ds = score_table(vectors, active)
    columns = {
        "id": ds["molecule"].values,
        "smiles": ds["smiles"].values,
        "valid": ds["valid"].values,
    }
    for s in active:
        columns[f"{s.name}_raw"] = ds["raw"].sel(scorer=s.name).values
        columns[f"{s.name}_clipped"] = ds["clipped"].sel(scorer=s.name).values
    columns["desirable"] = ds["desirable"].values
    columns["reward"] = ds["reward"].values
    return pd.DataFrame(columns)
