"""Non-dominated sorting, crowding distance and episode selection.

All objectives are maximized (clipped scores). Solution i dominates j when
it is >= on every objective and > on at least one.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from covgen.scorers import ScoreVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParetoRanking:
    """
    Fronts and crowding distances of a population.

    ``fronts[0]`` is the non-dominated set; ``rank[i]`` is the front index
    of solution i and ``crowding[i]`` its crowding distance within that
    front (``inf`` for boundary solutions).
    """

    fronts: list[list[int]]
    rank: np.ndarray
    crowding: np.ndarray


def objective_matrix(pop: Sequence[ScoreVector], objectives: Sequence[str]) -> np.ndarray:
    """Clipped values as an (n, m) array."""
    if not objectives:
        raise ValueError("At least one objective is required")
    return np.vstack([v.clipped_array(objectives) for v in pop]).reshape(len(pop), len(objectives))


def dominance_matrix(values: np.ndarray) -> np.ndarray:
    """Boolean (n, n) matrix; entry [i, j] is True when i dominates j."""
    a = values[:, None, :]
    b = values[None, :, :]
    return np.all(a >= b, axis=-1) & np.any(a > b, axis=-1)


def pareto_fronts(values: np.ndarray) -> list[list[int]]:
    """
    Peel non-dominated fronts from an (n, m) objective array.

    Returns
    -------
    list of list of int
        Fronts in order, each sorted by index.
    """
    n = values.shape[0]
    dominates = dominance_matrix(values)
    dominated_by = dominates.sum(axis=0)
    remaining = np.ones(n, dtype=bool)
    fronts = []
    while remaining.any():
        front = np.flatnonzero((dominated_by == 0) & remaining)
        remaining[front] = False
        dominated_by = dominated_by - dominates[front].sum(axis=0)
        fronts.append(front.tolist())
    return fronts


def crowding_distance_values(values: np.ndarray, tie_keys: Optional[Sequence] = None) -> np.ndarray:
    """
    Crowding distance of each row of a single front.

    Parameters
    ----------
    values : np.ndarray
        (k, m) objective values of the front.
    tie_keys : sequence, optional
        Secondary sort key for equal objective values (defaults to row order).

    Returns
    -------
    np.ndarray
        Per-row distance. For every objective with a non-zero range the two
        extreme rows get ``inf`` and interior rows add the normalized gap
        between their neighbours; a zero-range objective adds nothing.
    """
    k, m = values.shape
    distance = np.zeros(k)
    if tie_keys is None:
        tie_keys = list(range(k))
    for obj in range(m):
        column = values[:, obj]
        f_min, f_max = column.min(), column.max()
        span = f_max - f_min
        if span == 0:
            continue
        order = sorted(range(k), key=lambda r: (column[r], tie_keys[r]))
        distance[order[0]] = math.inf
        distance[order[-1]] = math.inf
        for pos in range(1, k - 1):
            distance[order[pos]] += (column[order[pos + 1]] - column[order[pos - 1]]) / span
    return distance


def crowding_distance(front: Sequence[ScoreVector], objectives: Sequence[str]) -> np.ndarray:
    """Crowding distance over a front of score vectors (ties broken by molecule id)."""
    if not front:
        return np.zeros(0)
    return crowding_distance_values(objective_matrix(front, objectives), [v.mol_id for v in front])


def non_dominated_sort(pop: Sequence[ScoreVector], objectives: Sequence[str]) -> ParetoRanking:
    """
    Rank a population into Pareto fronts with per-front crowding distances.

    Raises
    ------
    ValueError
        If the population is empty or an objective is missing.
    """
    if not pop:
        raise ValueError("non_dominated_sort requires a non-empty population")
    values = objective_matrix(pop, objectives)
    fronts = pareto_fronts(values)
    rank = np.empty(len(pop), dtype=int)
    crowding = np.zeros(len(pop))
    ids = [v.mol_id for v in pop]
    for level, front in enumerate(fronts):
        rank[front] = level
        crowding[front] = crowding_distance_values(values[front], [ids[i] for i in front])
    logger.debug(f"Ranked {len(pop)} solutions into {len(fronts)} front(s)")
    return ParetoRanking(fronts=fronts, rank=rank, crowding=crowding)


def selection_size(n: int, fraction: float) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"Selection fraction must be in (0, 1], got {fraction}")
    return min(n, math.ceil(round(fraction * n, 9)))


def select_episodes(pop: Sequence[ScoreVector], ranking: ParetoRanking, fraction: float) -> list[int]:
    """
    Indices of the top ``ceil(fraction * n)`` solutions.

    Order: front rank ascending, crowding distance descending, molecule id.
    """
    keys = [(int(ranking.rank[i]), -float(ranking.crowding[i]), pop[i].mol_id) for i in range(len(pop))]
    order = sorted(range(len(pop)), key=lambda i: keys[i])
    return order[:selection_size(len(pop), fraction)]


def select_by_reward(pop: Sequence[ScoreVector], rewards: Sequence[float], fraction: float) -> list[int]:
    """Indices of the top solutions by reward descending, molecule id ascending."""
    order = sorted(range(len(pop)), key=lambda i: (-float(rewards[i]), pop[i].mol_id))
    return order[:selection_size(len(pop), fraction)]
