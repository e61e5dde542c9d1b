"""Tests for rediscovery evaluation, volume sweeps, motif search, poses and projection."""

import math

import numpy as np
import pytest
import torch

from covgen.chem import Fingerprint, canonical_atom_order, canonical_smiles, morgan_fingerprint, parse_smiles
from covgen.data import InputError, write_table
from covgen.evalkit import (
    WARHEAD_MOTIFS,
    GenerationRun,
    MoleculeRecord,
    NoWarheadError,
    PoseError,
    PoseFile,
    build_reference,
    build_run,
    evaluation_table,
    filter_close_contacts,
    format_rate,
    load_run,
    motif_graph,
    motif_search,
    motif_table,
    project_chemical_space,
    projection_frame,
    read_pose,
    rediscovery_rate,
    sweep_table,
    top_by_score,
    volume_sweep,
    warhead_distance,
)
from covgen.generator import GeneratorModel, Vocabulary
from covgen.gnn import AttributionMap
from covgen.scorers import ScoreVector, default_scorer, score_batch, score_frame
from covgen.synthetic import toy_corpus

ACRYLAMIDE = "C=CC(=O)N"


def create_test_run(desirable, rediscovered, run_id="run", preset="", extra_invalid=0):
    """Run with ``desirable`` distinct desirable keys, the first ``rediscovered`` of them known."""
    records = [MoleculeRecord(f"m{i:06d}", "C", f"K{i}", True) for i in range(desirable)]
    records += [MoleculeRecord(f"x{i:06d}", "C1CC", None, False) for i in range(extra_invalid)]
    reference = frozenset(f"K{i}" for i in range(rediscovered)) | {"unrelated"}
    return GenerationRun(run_id, preset, tuple(records)), reference


def create_test_vectors(smiles, desirable=True):
    """Desirable score vectors for the given SMILES."""
    return [
        ScoreVector(mol_id=f"m{i}", smiles=s, valid=True, raw={}, clipped={}, desirable=desirable)
        for i, s in enumerate(smiles)
    ]


def create_test_pose(m, positions, anchor=(0.0, 0.0, 0.0), mol_id="m0"):
    """Pose with graph atom ``i`` at ``positions[i]`` (written in canonical order)."""
    order = [i for i in canonical_atom_order(m) if m.atoms[i].element != "H"]
    coordinates = np.array([positions[i] for i in order], dtype=float)
    return PoseFile(mol_id=mol_id, residue="Cys797", anchor=np.asarray(anchor, dtype=float),
                    coordinates=coordinates)


def create_test_attribution(n_atoms, tagged):
    """Attribution map tagging the given atoms."""
    normalized = np.array([1.0 if i in tagged else 0.0 for i in range(n_atoms)])
    return AttributionMap(raw=normalized.copy(), normalized=normalized, tagged=frozenset(tagged))


def test_rediscovery_rate_reference_rows():
    """Test the 24/4793 and 78/800 rediscovery arithmetic."""
    run, reference = create_test_run(4793, 24)
    result = rediscovery_rate(run, reference)
    assert (result.desirable, result.count) == (4793, 24)
    assert format_rate(result.rate) == "0.50"

    run, reference = create_test_run(800, 78, extra_invalid=50)
    assert format_rate(rediscovery_rate(run, reference).rate) == "9.75"


def test_rediscovery_counts_duplicates_once():
    """Test a structure generated twice is rediscovered once."""
    records = (
        MoleculeRecord("a", "CCO", "K0", True),
        MoleculeRecord("b", "OCC", "K0", True),
        MoleculeRecord("c", "CCN", "K1", True),
        MoleculeRecord("d", "CCC", "K2", False),
    )
    run = GenerationRun("dup", "", records)
    result = rediscovery_rate(run, frozenset({"K0", "K2"}))

    assert result.count == 1
    assert result.desirable == 3


def test_rediscovery_without_desirable():
    """Test an empty desirable set reports n/a."""
    run, reference = create_test_run(0, 0, extra_invalid=3)
    result = rediscovery_rate(run, reference)

    assert result.rate is None
    assert format_rate(result.rate) == "n/a"


def test_evaluation_table():
    """Test one row per run with the model label."""
    first, reference = create_test_run(800, 78, run_id="a", preset="egfr-3")
    second, _ = create_test_run(0, 0, run_id="b")
    table = evaluation_table([first, second], reference)

    assert list(table.columns) == ["Model", "Desirable Structures", "Rediscovered", "Rate (%)"]
    assert table["Model"].tolist() == ["egfr-3", "b"]
    assert table["Rate (%)"].tolist() == ["9.75", "n/a"]


def test_build_run_keys_are_canonical():
    """Test build_run keys valid molecules by canonical SMILES."""
    vectors = create_test_vectors(["OCC", "C1CC"])
    vectors[1] = ScoreVector(mol_id="m1", smiles="C1CC", valid=False, raw={}, clipped={}, desirable=False)
    run = build_run("r", "egfr-1", vectors)

    assert run.records[0].key == canonical_smiles("CCO")
    assert run.records[1].key is None
    assert (run.generated, run.valid, run.desirable) == (2, 1, 1)


def test_load_run_and_reference(tmp_path):
    """Test a score CSV and a reference corpus load into a comparable run."""
    active = [default_scorer("validity")]
    vectors = score_batch(["a", "b", "c"], ["OCC", "C1CC", "c1ccccc1"], active)
    write_table(score_frame(vectors, active), tmp_path / "scores.csv", "0123456789abcdef")
    (tmp_path / "reference.smi").write_text("CCO\tref1\nnot-a-smiles\n# comment\nc1ccncc1\n")

    run = load_run(tmp_path / "scores.csv")
    reference = build_reference(tmp_path / "reference.smi")
    assert run.run_id == "scores"
    assert [r.valid for r in run.records] == [True, False, True]
    assert len(reference) == 2
    assert rediscovery_rate(run, reference).count == 1


def test_load_run_missing_columns(tmp_path):
    """Test a table without the desirability column is rejected."""
    path = tmp_path / "bad.csv"
    path.write_text("id,smiles,valid\na,CCO,True\n")

    with pytest.raises(InputError, match="Available"):
        load_run(path)


def test_sweep_table_monotone_and_checks():
    """Test rediscoveries never decrease with scale and scales are validated."""
    run, reference = create_test_run(200, 60)
    table = sweep_table(run, [10, 50, 200], reference)

    assert table["Generated"].tolist() == [10, 50, 200]
    assert np.all(np.diff(table["Rediscovered"]) >= 0)
    assert np.all(np.diff(table["Desirable"]) >= 0)
    with pytest.raises(ValueError):
        sweep_table(run, [50, 10], reference)
    with pytest.raises(ValueError):
        sweep_table(run, [500], reference)
    with pytest.raises(ValueError):
        sweep_table(run, [], reference)


def test_volume_sweep_prefix_runs():
    """Test the sweep samples once and reports nested prefixes."""
    torch.manual_seed(0)
    g = GeneratorModel(Vocabulary.from_corpus(toy_corpus(30)), embedding_dim=8, hidden_dim=16)
    table, run = volume_sweep(g, [default_scorer("validity")], [5, 20], frozenset({"C"}), seed=3)

    assert table["Generated"].tolist() == [5, 20]
    assert run.generated == 20
    assert run.records[0].mol_id == "S0000000"
    assert np.all(np.diff(table["Desirable"]) >= 0)


def test_motif_search_desirable_only():
    """Test warhead hits among desirable structures."""
    vectors = create_test_vectors(["C=CC(=O)Nc1ccccc1", "C=C=CCc1ccccc1", "CCC(=O)N"])
    vectors.append(ScoreVector(mol_id="m3", smiles="C=CC(=O)NC", valid=True, raw={}, clipped={},
                               desirable=False))
    run = build_run("r", "", vectors)

    hits = motif_search(run, {name: motif_graph(name) for name in ("acrylamide", "allene")})
    assert hits == {"acrylamide": ["m0"], "allene": ["m1"]}
    table = motif_table(hits, run)
    assert table["id"].tolist() == ["m0", "m1"]
    assert set(WARHEAD_MOTIFS) >= {"acrylamide", "allene", "sultam", "methylene_lactone"}


def test_warhead_motifs_parse():
    """Test every built-in warhead motif is a valid graph."""
    for name in WARHEAD_MOTIFS:
        assert len(motif_graph(name).atoms) >= 3


def test_read_pose(tmp_path):
    """Test pose parsing with comments and the anchor header."""
    path = tmp_path / "m1.pose"
    path.write_text("# docked\nm1 Cys797 1.0 2.0 3.0\n1 0 1 0\n0 0 0 0\n")

    pose = read_pose(path)
    assert pose.mol_id == "m1" and pose.residue == "Cys797"
    np.testing.assert_allclose(pose.anchor, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(pose.coordinates, [[0, 0, 0], [0, 1, 0]])


@pytest.mark.parametrize(
    "text",
    ["", "m1 Cys797 0 0\n0 0 0 0\n", "m1 Cys797 0 0 0\n0 0 0\n", "m1 Cys797 0 0 0\n1 0 0 0\n",
     "m1 Cys797 0 0 0\n0 0 0 nan\n", "m1 Cys797 0 0 0\n0 0 0 0\n0 1 1 1\n"],
)
def test_read_pose_errors(tmp_path, text):
    """Test malformed pose files raise PoseError."""
    path = tmp_path / "bad.pose"
    path.write_text(text)

    with pytest.raises(PoseError):
        read_pose(path)


def test_warhead_distance_value_and_min_rule():
    """Test the distance to a single tagged atom and the minimum over several."""
    m = parse_smiles(ACRYLAMIDE)
    positions = {i: (20.0 + i, 0.0, 0.0) for i in range(len(m.atoms))}
    positions[0] = (3.0, 4.0, 0.0)
    positions[1] = (0.0, 0.0, 7.0)
    pose = create_test_pose(m, positions)

    np.testing.assert_allclose(warhead_distance(m, create_test_attribution(5, {0}), pose), 5.0)
    np.testing.assert_allclose(warhead_distance(m, create_test_attribution(5, {0, 1, 3}), pose), 5.0)
    np.testing.assert_allclose(warhead_distance(m, create_test_attribution(5, {1, 4}), pose), 7.0)


def test_warhead_distance_rigid_invariance():
    """Test rotating and translating pose and anchor together keeps the distance."""
    m = parse_smiles(ACRYLAMIDE)
    rng = np.random.default_rng(0)
    positions = {i: tuple(rng.normal(size=3) * 4) for i in range(len(m.atoms))}
    anchor = rng.normal(size=3)
    att = create_test_attribution(5, {0, 1})
    before = warhead_distance(m, att, create_test_pose(m, positions, anchor))

    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    shift = np.array([10.0, -3.0, 2.5])
    moved = {i: tuple(q @ np.array(p) + shift) for i, p in positions.items()}
    after = warhead_distance(m, att, create_test_pose(m, moved, q @ anchor + shift))
    np.testing.assert_allclose(after, before, rtol=1e-12)


def test_warhead_distance_errors():
    """Test untagged maps and mismatched poses raise."""
    m = parse_smiles(ACRYLAMIDE)
    pose = create_test_pose(m, {i: (float(i), 0.0, 0.0) for i in range(5)})

    with pytest.raises(NoWarheadError):
        warhead_distance(m, create_test_attribution(5, set()), pose)
    short = PoseFile(mol_id="m0", residue="Cys797", anchor=np.zeros(3), coordinates=np.zeros((3, 3)))
    with pytest.raises(PoseError):
        warhead_distance(m, create_test_attribution(5, {0}), short)


def test_top_by_score_and_contact_filter():
    """Test ranking by favourable raw docking score and the strict distance cutoff."""
    docking = default_scorer("docking")
    vectors = [
        ScoreVector(mol_id=f"m{i}", smiles="CCO", valid=True, raw={"docking": v}, clipped={}, desirable=True)
        for i, v in enumerate([-6.5, -9.0, -7.0, -9.0])
    ]
    run = build_run("r", "", vectors)

    assert [r.mol_id for r in top_by_score(run, docking, k=3)] == ["m1", "m3", "m2"]
    assert filter_close_contacts({"a": 9.99, "b": 10.0, "c": math.nan}) == {"a": 9.99}


def test_projection_duplicates_and_clusters():
    """Test identical fingerprints coincide and separated clusters split on the first axis."""
    rng = np.random.default_rng(0)
    fps = []
    for cluster in range(2):
        for _ in range(6):
            bits = np.zeros(256, dtype=bool)
            bits[cluster * 100: cluster * 100 + 30] = True
            bits[rng.integers(0, 256, size=3)] = True
            fps.append(Fingerprint(bits=bits))
    fps.append(Fingerprint(bits=fps[0].bits.copy()))

    projection = project_chemical_space(fps, k=2)
    pc1 = projection.coordinates[:, 0]
    np.testing.assert_allclose(projection.coordinates[0], projection.coordinates[-1], atol=1e-9)
    first, second = pc1[:6].tolist() + [pc1[-1]], pc1[6:12]
    assert max(first) < min(second) or max(second) < min(first)


def test_projection_matches_eigendecomposition():
    """Test component variances equal the leading covariance eigenvalues."""
    rng = np.random.default_rng(1)
    fps = [Fingerprint(bits=rng.random(64) < 0.3) for _ in range(12)]
    projection = project_chemical_space(fps, k=3)

    x = np.vstack([fp.bits.astype(float) for fp in fps])
    eigenvalues = np.linalg.eigvalsh(np.cov(x, rowvar=False))[::-1][:3]
    np.testing.assert_allclose(projection.variances, eigenvalues, rtol=1e-4)


def test_projection_reconstruction_error_non_increasing():
    """Test adding components never increases the reconstruction error."""
    fps = [morgan_fingerprint(parse_smiles(s), width=512) for s in toy_corpus(25, seed=4)]
    projection = project_chemical_space(fps, k=5)

    errors = [projection.reconstruction_error(fps, k) for k in range(6)]
    assert all(b <= a + 1e-9 * errors[0] for a, b in zip(errors, errors[1:]))
    assert errors[-1] < errors[0]


def test_projection_errors_and_frame():
    """Test argument checks and the projection table layout."""
    fps = [morgan_fingerprint(parse_smiles(s)) for s in ["CCO", "c1ccccc1", "CCN"]]
    with pytest.raises(ValueError):
        project_chemical_space(fps[:1])
    with pytest.raises(ValueError):
        project_chemical_space(fps, k=0)

    frame = projection_frame(["a", "b", "c"], project_chemical_space(fps), ["generated", "reference", "generated"])
    assert list(frame.columns) == ["id", "pc1", "pc2", "cohort"]
    assert len(frame) == 3


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
