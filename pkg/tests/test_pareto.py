"""Tests for Pareto ranking, crowding distance and episode selection."""

import math

import numpy as np
import pytest

from covgen.pareto import (
    crowding_distance,
    crowding_distance_values,
    dominance_matrix,
    non_dominated_sort,
    pareto_fronts,
    select_by_reward,
    select_episodes,
    selection_size,
)
from covgen.scorers import ScoreVector


def create_test_population(values, names=("a", "b")):
    """Score vectors whose clipped scores are the given rows."""
    pop = []
    for i, row in enumerate(values):
        scores = {name: float(x) for name, x in zip(names, row)}
        pop.append(ScoreVector(mol_id=f"m{i:03d}", smiles="C", valid=True, raw=scores, clipped=scores))
    return pop


def brute_force_fronts(values):
    """Peel fronts by checking dominance pairwise against the remaining set."""
    remaining = list(range(len(values)))
    fronts = []
    while remaining:
        front = []
        for i in remaining:
            dominated = any(
                np.all(values[j] >= values[i]) and np.any(values[j] > values[i])
                for j in remaining if j != i
            )
            if not dominated:
                front.append(i)
        fronts.append(sorted(front))
        remaining = [i for i in remaining if i not in front]
    return fronts


def test_dominance_matrix():
    """Test strict dominance on a three-point example."""
    values = np.array([[1.0, 1.0], [0.5, 0.5], [1.0, 0.5]])
    d = dominance_matrix(values)

    assert d[0, 1] and d[0, 2] and d[2, 1]
    assert not d[1, 0]
    assert not d.diagonal().any()


def test_fronts_match_brute_force():
    """Test front peeling against the definition on random grids with ties."""
    rng = np.random.default_rng(0)
    for trial in range(20):
        values = rng.integers(0, 5, size=(30, 3)) / 4.0
        assert pareto_fronts(values) == brute_force_fronts(values)


def test_later_fronts_are_dominated():
    """Test every member of front k+1 is dominated by some member of front k."""
    rng = np.random.default_rng(1)
    values = rng.random((50, 2))
    fronts = pareto_fronts(values)
    d = dominance_matrix(values)

    for upper, lower in zip(fronts, fronts[1:]):
        for j in lower:
            assert any(d[i, j] for i in upper)


def test_crowding_distance_reference_values():
    """Test interior distance and infinite boundaries on one objective."""
    distance = crowding_distance_values(np.array([[0.0], [0.4], [1.0]]))

    assert math.isinf(distance[0]) and math.isinf(distance[2])
    np.testing.assert_allclose(distance[1], 1.0)


def test_crowding_distance_two_points():
    """Test a two-member front is all boundary."""
    distance = crowding_distance_values(np.array([[0.1, 0.9], [0.9, 0.1]]))

    assert np.all(np.isinf(distance))


def test_crowding_distance_zero_range():
    """Test an objective with no spread contributes nothing."""
    distance = crowding_distance_values(np.array([[0.5], [0.5], [0.5]]))

    np.testing.assert_array_equal(distance, np.zeros(3))


def test_crowding_distance_affine_invariance():
    """Test positive affine rescaling of an objective leaves distances unchanged."""
    rng = np.random.default_rng(2)
    values = rng.random((8, 2))
    scaled = values * np.array([3.0, 0.5]) + np.array([-1.0, 2.0])

    np.testing.assert_allclose(crowding_distance_values(values), crowding_distance_values(scaled))


def test_crowding_distance_on_score_vectors():
    """Test the ScoreVector wrapper and the empty front."""
    pop = create_test_population([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])

    distance = crowding_distance(pop, ["a", "b"])
    np.testing.assert_allclose(distance[1], 2.0)
    assert crowding_distance([], ["a"]).shape == (0,)


def test_non_dominated_sort_ranks():
    """Test ranks and crowding are filled per front."""
    pop = create_test_population([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.2, 0.2], [0.1, 0.1]])
    ranking = non_dominated_sort(pop, ["a", "b"])

    assert ranking.fronts == [[0, 1, 2], [3], [4]]
    assert ranking.rank.tolist() == [0, 0, 0, 1, 2]
    assert math.isinf(ranking.crowding[0])


def test_non_dominated_sort_errors():
    """Test empty populations and unknown objectives raise."""
    with pytest.raises(ValueError):
        non_dominated_sort([], ["a"])
    with pytest.raises(ValueError, match="Available"):
        non_dominated_sort(create_test_population([[0.5, 0.5]]), ["missing"])


def test_selection_size():
    """Test ceiling semantics and fraction bounds."""
    assert selection_size(10, 0.5) == 5
    assert selection_size(10, 0.25) == 3
    assert selection_size(3, 1.0) == 3
    with pytest.raises(ValueError):
        selection_size(10, 0.0)
    with pytest.raises(ValueError):
        selection_size(10, 1.5)


def test_select_episodes_prefers_front_then_crowding():
    """Test selection takes the first front before dominated solutions."""
    pop = create_test_population([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.2, 0.2], [0.1, 0.1], [0.45, 0.45]])
    ranking = non_dominated_sort(pop, ["a", "b"])

    selected = select_episodes(pop, ranking, 0.5)
    assert sorted(selected) == [0, 1, 2]
    assert select_episodes(pop, ranking, 1 / 3) == [0, 1]


def test_single_objective_selection_matches_reward_ranking():
    """Test Pareto selection on one objective equals ranking by that score."""
    rng = np.random.default_rng(3)
    values = rng.integers(0, 6, size=(40, 1)) / 5.0
    pop = create_test_population(values, names=("a",))
    ranking = non_dominated_sort(pop, ["a"])

    by_front = select_episodes(pop, ranking, 0.5)
    by_reward = select_by_reward(pop, values[:, 0], 0.5)
    assert by_front == by_reward


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
