"""Run configuration: parameter classes, TOML loading, presets and config hash.

A config file is TOML with top-level ``preset``, ``seed``, ``[paths]``,
``[generator]``, ``[graph]``, ``[rl]`` and ``[scorers.<name>]`` tables.
Scorer tables override the preset's scorers of the same name or add new
ones (``kind`` required unless the name is itself a scorer kind).
"""

import hashlib
import json
import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import param

from covgen.scorers import ClippedScorer, ScorerKind, Threshold, default_scorer

logger = logging.getLogger(__name__)

HASH_LENGTH = 16
QUINOLINE = "c1ccc2ncccc2c1"
BASE_SCORERS = ("validity", "sa", "covalent_activity", "residue_affinity", "docking")
# scorers added by models 2, 3 and 4 of each target, cumulatively
ADDED_SCORERS = ("overlap", "qed", "tanimoto")
PATH_KEYS = (
    "corpus", "reference", "fragment_table", "generator", "covalent_model",
    "residue_model", "docking_model", "out_dir",
)


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


@dataclass(frozen=True)
class Target:
    name: str
    residue_class: str
    residue_label: str


TARGETS = {
    "egfr": Target("EGFR", "Cys", "Cys797"),
    "ache": Target("ACHE", "Ser/Thr", "Ser200"),
}


def preset_names() -> list[str]:
    return [f"{t}-{k}" for t in TARGETS for k in range(1, 5)]


def preset_scorer_names(preset: str) -> list[str]:
    """
    Active scorer names of a preset.

    ``<target>-1`` uses the base scorers; models 2-4 add overlap, QED and
    Tanimoto similarity in that order.
    """
    _, level = _split_preset(preset)
    return list(BASE_SCORERS) + list(ADDED_SCORERS[: level - 1])


def _split_preset(preset: str) -> tuple[Target, int]:
    if preset not in preset_names():
        raise ConfigError(f"Unknown preset {preset!r}. Available: {preset_names()}")
    target, level = preset.split("-")
    return TARGETS[target], int(level)


class GeneratorConfig(param.Parameterized):
    """Recurrent generator size and pretraining settings."""

    embedding_dim = param.Integer(default=64, bounds=(1, None), doc="Token embedding width")
    hidden_dim = param.Integer(default=256, bounds=(1, None), doc="GRU hidden width")
    learning_rate = param.Number(default=0.1, bounds=(0, None), inclusive_bounds=(False, True),
                                 doc="SGD step size")
    momentum = param.Number(default=0.9, bounds=(0, 1), inclusive_bounds=(True, False))
    grad_clip = param.Number(default=5.0, bounds=(0, None), inclusive_bounds=(False, True),
                             doc="Gradient-norm clip")
    epochs = param.Integer(default=20, bounds=(1, None))
    batch_size = param.Integer(default=64, bounds=(1, None))
    holdout_fraction = param.Number(default=0.1, bounds=(0, 0.9))
    max_length = param.Integer(default=128, bounds=(2, None), doc="Maximum tokens per sequence")
    temperature = param.Number(default=1.0, bounds=(0, None), inclusive_bounds=(False, True),
                               doc="Sampling temperature")


class GraphConfig(param.Parameterized):
    """Graph model architecture and training settings."""

    kind = param.Selector(default="gcn", objects=["gcn", "attention", "deep"],
                          doc="Message-passing layer kind")
    hidden_dim = param.Integer(default=64, bounds=(1, None))
    n_layers = param.Integer(default=3, bounds=(1, None))
    learning_rate = param.Number(default=0.05, bounds=(0, None), inclusive_bounds=(False, True))
    momentum = param.Number(default=0.9, bounds=(0, 1), inclusive_bounds=(True, False))
    grad_clip = param.Number(default=5.0, bounds=(0, None), inclusive_bounds=(False, True))
    epochs = param.Integer(default=60, bounds=(1, None))
    batch_size = param.Integer(default=32, bounds=(1, None))
    holdout_fraction = param.Number(default=0.1, bounds=(0, 0.9))
    alpha = param.Number(default=0.1, bounds=(0, 1), doc="Initial-residual weight (deep layers)")
    lam = param.Number(default=0.5, bounds=(0, None), inclusive_bounds=(False, True),
                       doc="Identity-mapping strength (deep layers)")


class RlConfig(param.Parameterized):
    """Reinforcement-learning loop settings."""

    batch_size = param.Integer(default=512, bounds=(1, None), doc="Molecules sampled per iteration")
    iterations = param.Integer(default=50, bounds=(1, None))
    learning_rate = param.Number(default=1e-3, bounds=(0, None), inclusive_bounds=(False, True))
    momentum = param.Number(default=0.9, bounds=(0, 1), inclusive_bounds=(True, False))
    grad_clip = param.Number(default=5.0, bounds=(0, None), inclusive_bounds=(False, True))
    selection_fraction = param.Number(default=0.5, bounds=(0, 1), inclusive_bounds=(False, True),
                                      doc="Fraction of each batch used as episodes")
    use_pcd = param.Boolean(default=True, doc="Select episodes by Pareto rank and crowding distance")
    temperature = param.Number(default=1.0, bounds=(0, None), inclusive_bounds=(False, True))
    max_length = param.Integer(default=128, bounds=(2, None))
    checkpoint_every = param.Integer(default=10, bounds=(0, None), doc="0 disables periodic checkpoints")


class ScorerSpec(param.Parameterized):
    """One scorer entry; unset fields take the kind's defaults."""

    kind = param.Selector(default="validity", objects=[k.value for k in ScorerKind])
    knots = param.List(default=None, allow_None=True, doc="[[x, y], ...] clip knots")
    threshold = param.List(default=None, allow_None=True, doc='[op, value], e.g. [">=", 0.75]')
    hard_floor = param.Number(default=None, allow_None=True)
    weight = param.Number(default=1.0, bounds=(0, None))
    enabled = param.Boolean(default=True)
    external = param.String(default=None, allow_None=True, doc="id,score CSV with raw values")
    motif = param.String(default=None, allow_None=True, doc="Motif name or SMILES (kind = motif)")

    def to_scorer(self) -> ClippedScorer:
        overrides: dict[str, Any] = {"weight": float(self.weight)}
        if self.knots is not None:
            overrides["knots"] = tuple((float(x), float(y)) for x, y in self.knots)
        if self.threshold is not None:
            if len(self.threshold) != 2:
                raise ConfigError(f"Scorer {self.name!r}: threshold must be [op, value], got {self.threshold}")
            try:
                overrides["threshold"] = Threshold(str(self.threshold[0]), float(self.threshold[1]))
            except ValueError as e:
                raise ConfigError(f"Scorer {self.name!r}: {e}") from e
        if self.hard_floor is not None:
            overrides["hard_floor"] = float(self.hard_floor)
        if self.motif is not None:
            from covgen.evalkit import WARHEAD_MOTIFS

            overrides["motif"] = WARHEAD_MOTIFS.get(self.motif, self.motif)
        try:
            return default_scorer(self.kind, name=self.name, **overrides)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("kind", "knots", "threshold", "hard_floor", "weight", "enabled", "external", "motif")}


class RunConfig(param.Parameterized):
    """Resolved configuration of one run."""

    preset = param.Selector(default="egfr-1", objects=preset_names())
    seed = param.Integer(default=0, bounds=(0, 2**64 - 1))
    paths = param.Dict(default={})
    generator = param.ClassSelector(class_=GeneratorConfig)
    graph = param.ClassSelector(class_=GraphConfig)
    rl = param.ClassSelector(class_=RlConfig)
    scorers = param.List(default=[], item_type=ScorerSpec)

    def __init__(self, **params):
        params.setdefault("generator", GeneratorConfig())
        params.setdefault("graph", GraphConfig())
        params.setdefault("rl", RlConfig())
        super().__init__(**params)

    @property
    def target(self) -> Target:
        return _split_preset(self.preset)[0]

    @property
    def residue_class(self) -> str:
        return self.target.residue_class

    @property
    def reference_smiles(self) -> str:
        return QUINOLINE

    def scorer_spec(self, name: str) -> ScorerSpec:
        for spec in self.scorers:
            if spec.name == name:
                return spec
        raise ConfigError(f"Unknown scorer {name!r}. Available: {[s.name for s in self.scorers]}")

    def active_scorers(self) -> list[ClippedScorer]:
        """Enabled scorers in configuration order."""
        return [spec.to_scorer() for spec in self.scorers if spec.enabled]

    def path(self, key: str) -> Optional[Path]:
        value = self.paths.get(key)
        return Path(value) if value else None

    def as_dict(self) -> dict:
        def values(obj: param.Parameterized) -> dict:
            return {k: v for k, v in obj.param.values().items() if k != "name"}

        return {
            "preset": self.preset,
            "seed": self.seed,
            "paths": dict(sorted(self.paths.items())),
            "generator": values(self.generator),
            "graph": values(self.graph),
            "rl": values(self.rl),
            "scorers": {spec.name: spec.as_dict() for spec in self.scorers},
        }


def config_hash(cfg: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON of all resolved values."""
    canonical = json.dumps(cfg.as_dict(), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:HASH_LENGTH]


def _build(cls, values: dict, section: str, **fixed):
    unknown = sorted(set(values) - (set(cls.param) - {"name"}))
    if unknown:
        raise ConfigError(f"Unknown key(s) {unknown} in [{section}]. Available: "
                          f"{sorted(set(cls.param) - {'name'})}")
    try:
        return cls(**fixed, **values)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[{section}]: {e}") from e


def preset_scorers(preset: str) -> list[ScorerSpec]:
    return [ScorerSpec(name=name, kind=name) for name in preset_scorer_names(preset)]


def build_config(data: Optional[dict] = None, preset: Optional[str] = None,
                 seed: Optional[int] = None) -> RunConfig:
    """
    Resolve a configuration mapping (as parsed from TOML).

    ``preset`` and ``seed`` arguments take precedence over the mapping.

    Raises
    ------
    ConfigError
        On unknown keys, invalid values or an unknown preset.
    """
    data = dict(data or {})
    allowed = {"preset", "seed", "paths", "generator", "graph", "rl", "scorers"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"Unknown top-level key(s) {unknown}. Available: {sorted(allowed)}")
    preset = preset or data.get("preset", "egfr-1")
    _split_preset(preset)

    paths = data.get("paths", {})
    bad_paths = sorted(set(paths) - set(PATH_KEYS))
    if bad_paths:
        raise ConfigError(f"Unknown key(s) {bad_paths} in [paths]. Available: {list(PATH_KEYS)}")

    specs = {spec.name: spec for spec in preset_scorers(preset)}
    for name, entry in data.get("scorers", {}).items():
        entry = dict(entry)
        if name in specs:
            current = specs[name].as_dict()
            unknown = sorted(set(entry) - set(current))
            if unknown:
                raise ConfigError(f"Unknown key(s) {unknown} in [scorers.{name}]. Available: {sorted(current)}")
            current.update(entry)
            entry = current
        elif "kind" not in entry:
            if name not in {k.value for k in ScorerKind}:
                raise ConfigError(f"[scorers.{name}] needs a 'kind'. Available: {[k.value for k in ScorerKind]}")
            entry["kind"] = name
        specs[name] = _build(ScorerSpec, entry, f"scorers.{name}", name=name)

    try:
        cfg = RunConfig(
            preset=preset,
            seed=int(seed if seed is not None else data.get("seed", 0)),
            paths={k: str(v) for k, v in paths.items()},
            generator=_build(GeneratorConfig, data.get("generator", {}), "generator"),
            graph=_build(GraphConfig, data.get("graph", {}), "graph"),
            rl=_build(RlConfig, data.get("rl", {}), "rl"),
            scorers=list(specs.values()),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    for spec in cfg.scorers:
        if spec.enabled:
            spec.to_scorer()
    return cfg


def load_config(path: Optional[Union[str, Path]] = None, preset: Optional[str] = None,
                seed: Optional[int] = None) -> RunConfig:
    """
    Load a TOML config file, or the bare preset when ``path`` is None.

    Raises
    ------
    ConfigError
        If the file is missing, is not valid TOML or holds invalid values.
    """
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: invalid TOML ({e})") from e
    cfg = build_config(data, preset=preset, seed=seed)
    logger.info(f"Config: preset {cfg.preset}, seed {cfg.seed}, "
                f"scorers {[s.name for s in cfg.scorers if s.enabled]}, hash {config_hash(cfg)}")
    return cfg
