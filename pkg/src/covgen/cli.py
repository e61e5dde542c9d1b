"""Command-line interface.

Every command writes ``run_manifest.json`` to ``--out-dir`` before its
results. Exit codes: 0 success, 2 usage error, 3 configuration error,
4 input error, 5 runtime failure.
"""

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch

from covgen import __version__
from covgen.checkpoint import CheckpointError
from covgen.chem import SmilesParseError, morgan_fingerprint, parse_smiles
from covgen.config import ConfigError, RunConfig, config_hash, load_config
from covgen.data import (
    InputError,
    atomic_write_text,
    format_corpus,
    read_corpus,
    thread_count,
    write_json,
    write_table,
)
from covgen.scorers import ExternalScoreError, ScoringContext, ingest_external_scores, score_batch, score_frame

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_RUNTIME = 5

MANIFEST_NAME = "run_manifest.json"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
GRAPH_TASKS = {"covalent": "binary", "residue": "multiclass", "docking": "regression"}
SCORER_SOURCES = {
    "sa": "paths.fragment_table (written by pretrain)",
    "covalent_activity": "paths.covalent_model or scorers.<name>.external",
    "residue_affinity": "paths.residue_model or scorers.<name>.external",
    "docking": "paths.docking_model or scorers.<name>.external",
    "overlap": "scorers.<name>.external",
    "external": "scorers.<name>.external",
}
SOURCES_HELP = "scorer sources (TOML config):\n" + "\n".join(
    f"  {kind:<18} {source}" for kind, source in SCORER_SOURCES.items()
)


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    started: str = ""
    engine_version: str = __version__


def _write_manifest(args, cfg: RunConfig, inputs: Sequence[Path], outputs: Sequence[Path]) -> None:
    manifest = RunManifest(
        command=args.command,
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        inputs=[str(p) for p in inputs if p is not None],
        outputs=[str(p) for p in outputs],
        started=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    write_json(args.out_dir / MANIFEST_NAME, asdict(manifest))


def _corpus_smiles(path: Path) -> tuple[list[str], list[str], list[Optional[str]]]:
    records = read_corpus(path)
    return [r.smiles for r in records], [r.id for r in records], [r.label for r in records]


def _valid_only(smiles: Sequence[str], source: Path) -> list[str]:
    kept = []
    for s in smiles:
        try:
            parse_smiles(s)
            kept.append(s)
        except SmilesParseError as e:
            logger.warning(f"{source}: dropping invalid SMILES {s!r} ({e.kind})")
    return kept


def build_context(cfg: RunConfig) -> ScoringContext:
    """
    Scoring context from the configured paths, models and external score files.

    Raises
    ------
    ConfigError
        If an enabled scorer has neither a model, a fragment table nor an external file.
    """
    from covgen.descriptors import load_fragment_table
    from covgen.gnn import load_graph_model

    context = ScoringContext.with_references([cfg.reference_smiles], residue_class=cfg.residue_class)
    table_path = cfg.path("fragment_table")
    if table_path is not None:
        context.fragment_table = load_fragment_table(table_path)
    for key, attr in (("covalent_model", "covalent_model"), ("residue_model", "residue_model"),
                      ("docking_model", "docking_model")):
        model_path = cfg.path(key)
        if model_path is not None:
            setattr(context, attr, load_graph_model(model_path))
    for spec in cfg.scorers:
        if spec.enabled and spec.external:
            context.external_scores[spec.name] = ingest_external_scores(spec.external)
    active = cfg.active_scorers()
    missing = context.missing_sources(active)
    if missing:
        kinds = {s.name: s.kind.value for s in active}
        needs = [f"{name}: {SCORER_SOURCES.get(kinds[name], 'a source')}" for name in missing]
        raise ConfigError(
            f"Preset {cfg.preset!r} enables scorers without a source ({'; '.join(needs)}). "
            f"Set them in --config or disable the scorers with enabled = false"
        )
    return context


# -- commands ----------------------------------------------------------------


def cmd_pretrain(args, cfg: RunConfig) -> None:
    from covgen.descriptors import fit_fragment_table, save_fragment_table
    from covgen.generator import pretrain_generator, save_generator

    corpus = args.corpus or cfg.path("corpus")
    if corpus is None:
        raise InputError("pretrain needs --corpus (or paths.corpus in the config)")
    outputs = [args.out_dir / "generator.ckpt", args.out_dir / "fragment_table.txt",
               args.out_dir / "pretrain_log.csv"]
    _write_manifest(args, cfg, [corpus], outputs)
    smiles = _valid_only(_corpus_smiles(corpus)[0], corpus)
    g, history = pretrain_generator(smiles, cfg.generator, seed=cfg.seed)
    h = config_hash(cfg)
    save_generator(g, outputs[0], h)
    save_fragment_table(fit_fragment_table(smiles, Path(corpus).stem), outputs[1])
    log = pd.DataFrame({"epoch": range(1, len(history["train_loss"]) + 1),
                        "train_loss": history["train_loss"]})
    if history["holdout_loss"]:
        log["holdout_loss"] = history["holdout_loss"]
    log["uniform_loss"] = history["uniform_loss"]
    write_table(log, outputs[2], h)


def _graph_labels(labels: Sequence[Optional[str]], task: str, corpus: Path) -> list:
    from covgen.gnn import residue_index

    if any(label is None for label in labels):
        raise InputError(f"{corpus}: train-graph needs a label column on every line")
    try:
        if task == "covalent":
            return [int(label) for label in labels]
        if task == "residue":
            return [int(label) if label.isdigit() else residue_index(label) for label in labels]
        return [float(label) for label in labels]
    except ValueError as e:
        raise InputError(f"{corpus}: bad {task} label ({e})") from e


def cmd_train_graph(args, cfg: RunConfig) -> None:
    from covgen.gnn import (
        RESIDUE_CLASSES,
        per_class_accuracy,
        predict,
        regression_metrics,
        retrain_balanced,
        save_graph_model,
        size_stratified_metrics,
        train_graph_classifier,
    )

    head = GRAPH_TASKS[args.task]
    model_path = args.out_dir / f"graph_{args.task}.ckpt"
    metrics_path = args.out_dir / f"graph_{args.task}_metrics.csv"
    _write_manifest(args, cfg, [args.corpus], [model_path, metrics_path])

    smiles, _, labels = _corpus_smiles(args.corpus)
    y = _graph_labels(labels, args.task, args.corpus)
    graphs, targets = [], []
    for s, label in zip(smiles, y):
        try:
            graphs.append(parse_smiles(s))
            targets.append(label)
        except SmilesParseError as e:
            logger.warning(f"{args.corpus}: dropping invalid SMILES {s!r} ({e.kind})")
    n_classes = len(RESIDUE_CLASSES) if head == "multiclass" else 2
    train = retrain_balanced if args.balanced else train_graph_classifier
    if args.balanced and head != "binary":
        raise ConfigError("--balanced applies to the covalent (binary) task only")
    gm, history = train(graphs, targets, cfg.graph, head=head, n_classes=n_classes, seed=cfg.seed)
    h = config_hash(cfg)
    save_graph_model(gm, model_path, h, task=args.task)

    holdout = history["holdout_indices"]
    if "balanced_indices" in history:
        holdout = [history["balanced_indices"][i] for i in holdout]
    if not holdout:
        holdout = list(range(len(graphs)))
        logger.warning("No holdout split; reporting training-set metrics")
    held_graphs = [graphs[i] for i in holdout]
    held_y = np.array([targets[i] for i in holdout])
    predictions = predict(gm, held_graphs)
    if head == "regression":
        metrics = size_stratified_metrics(held_graphs, held_y, predictions)
        overall = regression_metrics(held_y, predictions)
        metrics.loc[len(metrics)] = ["all", len(held_y), overall["r2"], overall["mse"], overall["mae"]]
    elif head == "multiclass":
        metrics = per_class_accuracy(held_y, predictions.argmax(axis=1), RESIDUE_CLASSES)
    else:
        metrics = per_class_accuracy(held_y, (predictions >= 0.5).astype(int), ["inactive", "covalent"])
    write_table(metrics, metrics_path, h)


def cmd_rltrain(args, cfg: RunConfig) -> None:
    from covgen.generator import load_generator, save_generator
    from covgen.rl import RL_LOG_NAME, rl_train

    model = args.model or cfg.path("generator")
    if model is None:
        raise InputError("rltrain needs --model (or paths.generator in the config)")
    outputs = [args.out_dir / "generator_rl.ckpt", args.out_dir / RL_LOG_NAME]
    _write_manifest(args, cfg, [model], outputs)
    g = load_generator(model)
    context = build_context(cfg)
    h = config_hash(cfg)
    g, _ = rl_train(g, cfg.active_scorers(), cfg.rl, context, seed=cfg.seed,
                    out_dir=args.out_dir, config_hash=h)
    save_generator(g, outputs[0], h)


def cmd_sample(args, cfg: RunConfig) -> None:
    from covgen.generator import load_generator, sample

    out = args.out_dir / "samples.smi"
    _write_manifest(args, cfg, [args.model], [out])
    g = load_generator(args.model)
    temperature = args.temperature if args.temperature is not None else cfg.generator.temperature
    sequences = sample(g, args.n, temperature=temperature, seed=cfg.seed,
                       max_length=cfg.generator.max_length)
    ids = [f"S{i:07d}" for i in range(len(sequences))]
    atomic_write_text(out, format_corpus([s.smiles for s in sequences], ids))
    logger.info(f"✓ Sampled {len(sequences)} sequences to {out}")


def cmd_score(args, cfg: RunConfig) -> None:
    out = args.out_dir / "scores.csv"
    _write_manifest(args, cfg, [args.input], [out])
    smiles, ids, _ = _corpus_smiles(args.input)
    active = cfg.active_scorers()
    vectors = score_batch(ids, smiles, active, build_context(cfg))
    write_table(score_frame(vectors, active), out, config_hash(cfg))


def cmd_evaluate(args, cfg: RunConfig) -> None:
    from covgen.evalkit import build_reference, evaluation_table, load_run

    out = args.out_dir / "evaluation.csv"
    _write_manifest(args, cfg, [*args.run, args.reference], [out])
    reference = build_reference(args.reference)
    runs = [load_run(path, preset=path.stem) for path in args.run]
    write_table(evaluation_table(runs, reference), out, config_hash(cfg))


def cmd_sweep(args, cfg: RunConfig) -> None:
    from covgen.evalkit import build_reference, volume_sweep
    from covgen.generator import load_generator

    out = args.out_dir / "sweep.csv"
    run_out = args.out_dir / "sweep_scores.csv"
    _write_manifest(args, cfg, [args.model, args.reference], [out, run_out])
    scales = [int(s) for s in args.scales.split(",") if s.strip()]
    reference = build_reference(args.reference)
    active = cfg.active_scorers()
    table, run = volume_sweep(load_generator(args.model), active, scales, reference,
                              context=build_context(cfg), seed=cfg.seed,
                              temperature=cfg.generator.temperature, preset=cfg.preset)
    h = config_hash(cfg)
    write_table(table, out, h)
    write_table(score_frame([r.vector for r in run.records], active), run_out, h)


def cmd_attribute(args, cfg: RunConfig) -> None:
    from covgen.evalkit import NoWarheadError, PoseError, read_pose, warhead_distance
    from covgen.gnn import gradcam, load_graph_model

    out = args.out_dir / "attribution.csv"
    outputs = [out] + ([args.out_dir / "distances.csv"] if args.poses else [])
    _write_manifest(args, cfg, [args.model, args.input] + ([args.poses] if args.poses else []), outputs)
    gm = load_graph_model(args.model)
    smiles, ids, _ = _corpus_smiles(args.input)
    rows, distances = [], []
    for mol_id, s in zip(ids, smiles):
        try:
            m = parse_smiles(s)
        except SmilesParseError as e:
            logger.warning(f"{args.input}: skipping invalid SMILES {s!r} for {mol_id} ({e.kind})")
            continue
        att = gradcam(gm, m, args.target_class)
        for atom in range(len(m.atoms)):
            rows.append({"id": mol_id, "atom": atom, "element": m.atoms[atom].element,
                         "raw": att.raw[atom], "score": att.normalized[atom],
                         "tagged": atom in att.tagged})
        if args.poses:
            pose_path = args.poses / f"{mol_id}.pose"
            if not pose_path.exists():
                logger.warning(f"No pose for {mol_id} at {pose_path}")
                continue
            pose = read_pose(pose_path)
            try:
                distance = warhead_distance(m, att, pose)
            except NoWarheadError as e:
                logger.warning(str(e))
                distance = float("nan")
            except PoseError as e:
                raise InputError(str(e)) from e
            distances.append({"id": mol_id, "residue": pose.residue, "distance": distance})
    h = config_hash(cfg)
    write_table(pd.DataFrame(rows, columns=["id", "atom", "element", "raw", "score", "tagged"]), out, h,
                float_format="%.6f")
    if args.poses:
        write_table(pd.DataFrame(distances, columns=["id", "residue", "distance"]), outputs[1], h,
                    float_format="%.3f")


def cmd_motif_search(args, cfg: RunConfig) -> None:
    from covgen.evalkit import ATYPICAL_MOTIFS, load_run, motif_graph, motif_search, motif_table

    out = args.out_dir / "motifs.csv"
    _write_manifest(args, cfg, [args.run], [out])
    names = args.motif or list(ATYPICAL_MOTIFS)
    run = load_run(args.run)
    hits = motif_search(run, {name: motif_graph(name) for name in names})
    write_table(motif_table(hits, run), out, config_hash(cfg))


def cmd_project(args, cfg: RunConfig) -> None:
    from covgen.evalkit import project_chemical_space, projection_frame

    out = args.out_dir / "projection.csv"
    outputs = [out] + ([args.plot] if args.plot else [])
    _write_manifest(args, cfg, [args.input], outputs)
    smiles, ids, labels = _corpus_smiles(args.input)
    kept_ids, fps, cohorts = [], [], []
    for mol_id, s, label in zip(ids, smiles, labels):
        try:
            fps.append(morgan_fingerprint(parse_smiles(s)))
        except SmilesParseError:
            logger.warning(f"{args.input}: skipping invalid SMILES {s!r}")
            continue
        kept_ids.append(mol_id)
        cohorts.append(label or "generated")
    frame = projection_frame(kept_ids, project_chemical_space(fps, k=2), cohorts)
    write_table(frame, out, config_hash(cfg), float_format="%.6f")
    if args.plot:
        from covgen.viz import plot_projection, save_plot

        save_plot(plot_projection(frame, title=f"Chemical space ({cfg.preset})"), args.plot)


COMMANDS = {
    "pretrain": cmd_pretrain,
    "train-graph": cmd_train_graph,
    "rltrain": cmd_rltrain,
    "sample": cmd_sample,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "attribute": cmd_attribute,
    "motif-search": cmd_motif_search,
    "project": cmd_project,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--preset", help="Model preset (egfr-1..4, ache-1..4)")
    common.add_argument("--seed", type=int, help="Run seed (overrides the config)")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="Output directory")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(prog="covgen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"covgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="Pretrain the SMILES generator")
    p.add_argument("--corpus", type=Path)

    p = sub.add_parser("train-graph", parents=[common], help="Train a graph model")
    p.add_argument("--corpus", type=Path, required=True, help="Labelled corpus (smiles, id, label)")
    p.add_argument("--task", choices=sorted(GRAPH_TASKS), required=True)
    p.add_argument("--balanced", action="store_true", help="Class-balanced retraining")

    p = sub.add_parser("rltrain", parents=[common], help="Multi-objective RL fine-tuning",
                       epilog=SOURCES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--model", type=Path)

    p = sub.add_parser("sample", parents=[common], help="Sample SMILES from a generator")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--temperature", type=float)

    p = sub.add_parser("score", parents=[common], help="Score a SMILES file",
                       epilog=SOURCES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--in", dest="input", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="Rediscovery evaluation")
    p.add_argument("--run", type=Path, action="append", required=True, help="Score CSV (repeatable)")
    p.add_argument("--reference", type=Path, required=True)

    p = sub.add_parser("sweep", parents=[common], help="Generation-volume sweep",
                       epilog=SOURCES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--scales", required=True, help="Comma-separated ascending sample counts")
    p.add_argument("--reference", type=Path, required=True)

    p = sub.add_parser("attribute", parents=[common], help="GradCAM warhead attribution")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--class", dest="target_class", type=int, default=1)
    p.add_argument("--poses", type=Path, help="Directory of <id>.pose files")

    p = sub.add_parser("motif-search", parents=[common], help="Search desirable structures for motifs")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--motif", action="append", help="Motif name or SMILES (repeatable)")

    p = sub.add_parser("project", parents=[common], help="Chemical-space projection")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--plot", type=Path, help="Scatter output (.svg or .html)")
    return parser


def exit_code(error: BaseException) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (InputError, FileNotFoundError, CheckpointError, ExternalScoreError)):
        return EXIT_INPUT
    if isinstance(error, ValueError):
        return EXIT_INPUT
    return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    t0 = time.time()
    try:
        torch.set_num_threads(thread_count())
        cfg = load_config(args.config, preset=args.preset, seed=args.seed)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except Exception as e:
        code = exit_code(e)
        logger.error(f"{args.command} failed: {e}", exc_info=code == EXIT_RUNTIME)
        return code
    logger.info(f"✓ {args.command} finished in {time.time() - t0:.1f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
