"""Graph neural networks over molecular graphs, with GradCAM attribution.

Three message-passing layer kinds share one model class:

- ``gcn``: ``H' = ReLU(Â H W)`` with the symmetric-normalized adjacency
  ``Â = D^-1/2 (A + I) D^-1/2``.
- ``attention``: single-head additive attention over each node's
  neighbourhood (self included).
- ``deep``: initial-residual plus identity mapping,
  ``H' = ReLU(((1 - a) Â H + a H0) ((1 - b_l) I + b_l W))`` with
  ``b_l = log(lam / l + 1)``.

Graphs are batched as one block-diagonal dense adjacency; readout is a
mean over each graph's nodes.
"""

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
from torch import nn
from torch.nn import functional as F

from covgen.chem import MolecularGraph
from covgen.checkpoint import load_checkpoint, load_state, save_checkpoint, state_tensors

logger = logging.getLogger(__name__)

ELEMENTS = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I")
MAX_DEGREE = 5
MAX_HYDROGENS = 4
FEATURE_DIM = len(ELEMENTS) + 1 + (MAX_DEGREE + 1) + (MAX_HYDROGENS + 1) + 3

RESIDUE_CLASSES = ("Cys", "Ser/Thr", "Lys/Nt", "Asp/Glu", "His", "Tyr")
RESIDUE_ALIASES = {"Ser": "Ser/Thr", "Thr": "Ser/Thr", "Lys": "Lys/Nt", "Nt": "Lys/Nt",
                   "Asp": "Asp/Glu", "Glu": "Asp/Glu"}

LAYER_KINDS = ("gcn", "attention", "deep")
HEADS = ("binary", "multiclass", "regression")
TAG_CUTOFF = 0.3
MAX_BATCH_ATOMS = 2048

SIZE_BINS = (("small", 0, 10), ("medium", 11, 20), ("large", 21, 35), ("very large", 36, math.inf))


def residue_index(name: str) -> int:
    """Index of a residue class; single residues map to their group (Ser → Ser/Thr)."""
    name = RESIDUE_ALIASES.get(name, name)
    if name not in RESIDUE_CLASSES:
        raise ValueError(f"Unknown residue class {name!r}. Available: {list(RESIDUE_CLASSES)}")
    return RESIDUE_CLASSES.index(name)


def atom_features(m: MolecularGraph) -> np.ndarray:
    """
    Node feature matrix (n_atoms, FEATURE_DIM).

    Columns: element one-hot (with an "other" slot), degree one-hot 0-5,
    hydrogen-count one-hot 0-4, formal charge, aromatic flag, ring flag.
    """
    x = np.zeros((len(m.atoms), FEATURE_DIM), dtype=np.float32)
    degree_offset = len(ELEMENTS) + 1
    h_offset = degree_offset + MAX_DEGREE + 1
    tail = h_offset + MAX_HYDROGENS + 1
    for i, atom in enumerate(m.atoms):
        slot = ELEMENTS.index(atom.element) if atom.element in ELEMENTS else len(ELEMENTS)
        x[i, slot] = 1.0
        x[i, degree_offset + min(atom.degree, MAX_DEGREE)] = 1.0
        x[i, h_offset + min(atom.total_h, MAX_HYDROGENS)] = 1.0
        x[i, tail] = float(atom.formal_charge)
        x[i, tail + 1] = float(atom.is_aromatic)
        x[i, tail + 2] = float(atom.ring_membership)
    return x


@dataclass
class GraphBatch:
    """Block-diagonal batch of molecular graphs."""

    x: torch.Tensor
    adjacency: torch.Tensor
    graph_index: torch.Tensor
    n_graphs: int

    @property
    def sizes(self) -> torch.Tensor:
        return torch.bincount(self.graph_index, minlength=self.n_graphs)


def featurize(graphs: Sequence[MolecularGraph]) -> GraphBatch:
    """Stack node features and adjacency of several graphs into one batch."""
    if not graphs:
        raise ValueError("featurize requires at least one graph")
    sizes = [len(m.atoms) for m in graphs]
    total = sum(sizes)
    x = np.zeros((total, FEATURE_DIM), dtype=np.float32)
    adjacency = np.zeros((total, total), dtype=np.float32)
    index = np.zeros(total, dtype=np.int64)
    offset = 0
    for g, m in enumerate(graphs):
        n = sizes[g]
        x[offset:offset + n] = atom_features(m)
        for bond in m.bonds:
            adjacency[offset + bond.begin, offset + bond.end] = 1.0
            adjacency[offset + bond.end, offset + bond.begin] = 1.0
        index[offset:offset + n] = g
        offset += n
    return GraphBatch(torch.from_numpy(x), torch.from_numpy(adjacency), torch.from_numpy(index), len(graphs))


def normalized_adjacency(adjacency: torch.Tensor) -> torch.Tensor:
    a = adjacency + torch.eye(adjacency.shape[0], dtype=adjacency.dtype)
    inv_sqrt = a.sum(dim=1).pow(-0.5)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def mean_pool(h: torch.Tensor, graph_index: torch.Tensor, n_graphs: int) -> torch.Tensor:
    sums = torch.zeros(n_graphs, h.shape[1], dtype=h.dtype).index_add_(0, graph_index, h)
    counts = torch.bincount(graph_index, minlength=n_graphs).clamp(min=1).to(h.dtype)
    return sums / counts[:, None]


class GCNLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)

    def forward(self, h, a_hat, adjacency, h0=None):
        return F.relu(a_hat @ self.linear(h))


class AttentionLayer(nn.Module):
    """Single-head additive attention over neighbours and self."""

    def __init__(self, in_dim: int, out_dim: int, negative_slope: float = 0.2):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim, bias=False)
        self.attend_source = nn.Parameter(torch.empty(out_dim))
        self.attend_target = nn.Parameter(torch.empty(out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.negative_slope = negative_slope
        bound = 1.0 / math.sqrt(out_dim)
        nn.init.uniform_(self.attend_source, -bound, bound)
        nn.init.uniform_(self.attend_target, -bound, bound)

    def forward(self, h, a_hat, adjacency, h0=None):
        wh = self.linear(h)
        scores = (wh @ self.attend_target)[:, None] + (wh @ self.attend_source)[None, :]
        scores = F.leaky_relu(scores, self.negative_slope)
        neighbourhood = (adjacency + torch.eye(adjacency.shape[0], dtype=adjacency.dtype)) > 0
        weights = torch.softmax(scores.masked_fill(~neighbourhood, -math.inf), dim=1)
        return F.relu(weights @ wh + self.bias)


class DeepLayer(nn.Module):
    """Initial-residual, identity-mapped propagation layer."""

    def __init__(self, dim: int, layer_number: int, alpha: float = 0.1, lam: float = 0.5):
        super().__init__()
        self.linear = nn.Linear(dim, dim, bias=False)
        self.alpha = alpha
        self.beta = math.log(lam / layer_number + 1.0)

    def forward(self, h, a_hat, adjacency, h0=None):
        support = (1.0 - self.alpha) * (a_hat @ h) + self.alpha * h0
        return F.relu((1.0 - self.beta) * support + self.beta * self.linear(support))


class GraphModel(nn.Module):
    """
    Message-passing graph model with a mean-pool readout and one head.

    Parameters
    ----------
    in_dim : int
        Node feature width.
    hidden_dim : int
        Width of every message-passing layer.
    n_layers : int
        Number of message-passing layers L (>= 1).
    kind : {"gcn", "attention", "deep"}
        Layer kind.
    head : {"binary", "multiclass", "regression"}
        Output head; binary and regression emit one value per graph.
    n_classes : int
        Number of classes for the multiclass head.
    """

    def __init__(self, in_dim: int = FEATURE_DIM, hidden_dim: int = 64, n_layers: int = 3,
                 kind: str = "gcn", head: str = "binary", n_classes: int = 2,
                 alpha: float = 0.1, lam: float = 0.5):
        super().__init__()
        if kind not in LAYER_KINDS:
            raise ValueError(f"Unknown layer kind {kind!r}. Available: {list(LAYER_KINDS)}")
        if head not in HEADS:
            raise ValueError(f"Unknown head {head!r}. Available: {list(HEADS)}")
        if n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {n_layers}")
        if head == "multiclass" and n_classes < 2:
            raise ValueError(f"multiclass head needs n_classes >= 2, got {n_classes}")
        self.arch = dict(in_dim=in_dim, hidden_dim=hidden_dim, n_layers=n_layers, kind=kind,
                         head=head, n_classes=n_classes if head == "multiclass" else 1,
                         alpha=alpha, lam=lam)
        self.kind = kind
        self.head_kind = head
        self.n_classes = n_classes if head == "multiclass" else (2 if head == "binary" else 1)
        if kind == "deep":
            self.input = nn.Linear(in_dim, hidden_dim)
            self.layers = nn.ModuleList(
                DeepLayer(hidden_dim, layer + 1, alpha, lam) for layer in range(n_layers)
            )
        else:
            self.input = None
            layer_cls = GCNLayer if kind == "gcn" else AttentionLayer
            dims = [in_dim] + [hidden_dim] * n_layers
            self.layers = nn.ModuleList(layer_cls(dims[k], dims[k + 1]) for k in range(n_layers))
        self.head = nn.Linear(hidden_dim, n_classes if head == "multiclass" else 1)
        self.register_buffer("target_mean", torch.zeros(1))
        self.register_buffer("target_std", torch.ones(1))

    def _prepare(self, batch: GraphBatch):
        dtype = self.head.weight.dtype
        x = batch.x.to(dtype)
        adjacency = batch.adjacency.to(dtype)
        h0 = F.relu(self.input(x)) if self.input is not None else None
        return x, adjacency, normalized_adjacency(adjacency), h0

    def _readout(self, h: torch.Tensor, batch: GraphBatch) -> torch.Tensor:
        return self.head(mean_pool(h, batch.graph_index, batch.n_graphs))

    def forward(self, batch: GraphBatch, keep_activations: bool = False):
        """
        Head outputs (n_graphs, out_dim) and, when requested, the per-layer
        node activations F^l (n_nodes, hidden_dim).
        """
        x, adjacency, a_hat, h0 = self._prepare(batch)
        h = h0 if h0 is not None else x
        activations = []
        for layer in self.layers:
            h = layer(h, a_hat, adjacency, h0)
            activations.append(h)
        out = self._readout(h, batch)
        return (out, activations) if keep_activations else out

    def resume(self, batch: GraphBatch, layer_index: int, features: torch.Tensor) -> torch.Tensor:
        """Head outputs when layer ``layer_index``'s activations are replaced by ``features``."""
        _, adjacency, a_hat, h0 = self._prepare(batch)
        h = features
        for layer in self.layers[layer_index + 1:]:
            h = layer(h, a_hat, adjacency, h0)
        return self._readout(h, batch)


def class_score(gm: GraphModel, outputs: torch.Tensor, c: int) -> torch.Tensor:
    """
    Per-graph score y^c.

    Binary heads score class 1 with the logit and class 0 with its
    negation; multiclass heads use the class logit; regression uses the
    (standardized) prediction and only accepts class 0.
    """
    if gm.head_kind == "binary":
        if c not in (0, 1):
            raise ValueError(f"Class {c} out of range for a binary head (0 or 1)")
        return outputs[:, 0] if c == 1 else -outputs[:, 0]
    if gm.head_kind == "multiclass":
        if not 0 <= c < gm.n_classes:
            raise ValueError(f"Class {c} out of range for {gm.n_classes} classes")
        return outputs[:, c]
    if c != 0:
        raise ValueError(f"Class {c} out of range for a regression head (0 only)")
    return outputs[:, 0]


@dataclass(frozen=True)
class AttributionMap:
    raw: np.ndarray
    normalized: np.ndarray
    tagged: frozenset[int]
    cutoff: float = TAG_CUTOFF


def gradcam(gm: GraphModel, m: MolecularGraph, c: int = 1, cutoff: float = TAG_CUTOFF) -> AttributionMap:
    """
    Gradient-weighted node attribution for class ``c``.

    For each layer l the feature weights are the node-mean of
    ``∂y^c/∂F^l``; the layer heat map is ``ReLU(F^l α^l)``. Node scores are
    averaged over layers, max-normalized and nodes above ``cutoff`` are
    tagged.

    Raises
    ------
    ValueError
        If ``c`` is out of range for the model's head.
    """
    was_training = gm.training
    gm.eval()
    batch = featurize([m])
    outputs, activations = gm(batch, keep_activations=True)
    y = class_score(gm, outputs, c)[0]
    gradients = torch.autograd.grad(y, activations, allow_unused=True)
    heat = torch.zeros(len(m.atoms), dtype=outputs.dtype)
    for features, gradient in zip(activations, gradients):
        if gradient is None:
            gradient = torch.zeros_like(features)
        alpha = gradient.mean(dim=0)
        heat = heat + F.relu(features @ alpha)
    raw = (heat / len(activations)).detach().cpu().numpy().astype(float)
    peak = raw.max() if raw.size else 0.0
    normalized = raw / peak if peak > 0 else np.zeros_like(raw)
    tagged = frozenset(int(i) for i in np.flatnonzero(normalized > cutoff))
    gm.train(was_training)
    return AttributionMap(raw=raw, normalized=normalized, tagged=tagged, cutoff=cutoff)


def _check_labels(labels: np.ndarray, head: str, n_classes: int) -> None:
    if head == "regression":
        if not np.all(np.isfinite(labels.astype(float))):
            raise ValueError("Regression labels must be finite reals")
        return
    if not np.all(np.equal(np.mod(labels, 1), 0)):
        raise ValueError(f"{head} head needs integer class labels, found non-integers")
    upper = 2 if head == "binary" else n_classes
    bad = sorted(set(int(v) for v in labels if not 0 <= v < upper))
    if bad:
        raise ValueError(f"Labels {bad} do not fit a {head} head with {upper} classes")


def _loss(gm: GraphModel, outputs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if gm.head_kind == "binary":
        return F.binary_cross_entropy_with_logits(outputs[:, 0], targets.to(outputs.dtype))
    if gm.head_kind == "multiclass":
        return F.cross_entropy(outputs, targets.long())
    standardized = (targets.to(outputs.dtype) - gm.target_mean) / gm.target_std
    return F.mse_loss(outputs[:, 0], standardized)


def train_graph_classifier(graphs: Sequence[MolecularGraph], labels: Sequence, config,
                           head: str = "binary", n_classes: int = 2,
                           seed: int = 0) -> tuple[GraphModel, dict]:
    """
    Train a graph model on labelled molecules.

    Parameters
    ----------
    graphs : sequence of MolecularGraph
        Training molecules.
    labels : sequence
        Class ids (binary / multiclass) or reals (regression).
    config : GraphConfig
        Layer kind, widths and optimizer settings.
    head : {"binary", "multiclass", "regression"}
        Output head.
    n_classes : int
        Class count for a multiclass head.
    seed : int
        Seed for initialization, split and shuffling.

    Returns
    -------
    GraphModel
        Trained model in eval mode.
    dict
        ``train_loss`` per epoch plus ``holdout_indices``.

    Raises
    ------
    ValueError
        On a label/head mismatch or an empty training set.
    """
    if not graphs:
        raise ValueError("Cannot train a graph model on an empty corpus")
    y = np.asarray(labels, dtype=float)
    if len(y) != len(graphs):
        raise ValueError(f"{len(graphs)} graphs but {len(y)} labels")
    _check_labels(y, head, n_classes)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(graphs))
    n_holdout = int(round(config.holdout_fraction * len(graphs))) if len(graphs) >= 10 else 0
    holdout, train = order[:n_holdout], order[n_holdout:]

    torch.manual_seed(seed)
    gm = GraphModel(FEATURE_DIM, config.hidden_dim, config.n_layers, config.kind, head,
                    n_classes, config.alpha, config.lam)
    if head == "regression":
        std = float(y[train].std())
        gm.target_mean.fill_(float(y[train].mean()))
        gm.target_std.fill_(std if std > 0 else 1.0)
    optimizer = torch.optim.SGD(gm.parameters(), lr=config.learning_rate, momentum=config.momentum)

    logger.info(f"Training {config.kind} graph model ({head}): {len(train)} train / "
                f"{len(holdout)} holdout molecules, {config.epochs} epochs")
    t0 = time.time()
    history = {"train_loss": [], "holdout_indices": holdout.tolist()}
    gm.train()
    for epoch in range(config.epochs):
        permutation = train[rng.permutation(len(train))]
        epoch_loss, batches = 0.0, 0
        for start in range(0, len(permutation), config.batch_size):
            rows = permutation[start:start + config.batch_size]
            batch = featurize([graphs[i] for i in rows])
            optimizer.zero_grad()
            loss = _loss(gm, gm(batch), torch.from_numpy(y[rows]))
            loss.backward()
            nn.utils.clip_grad_norm_(gm.parameters(), config.grad_clip)
            optimizer.step()
            epoch_loss += float(loss.detach())
            batches += 1
        history["train_loss"].append(epoch_loss / max(batches, 1))
        logger.debug(f"epoch {epoch + 1}/{config.epochs} loss={history['train_loss'][-1]:.4f}")
    gm.eval()
    logger.info(f"✓ Graph model trained in {time.time() - t0:.1f}s "
                f"(final loss {history['train_loss'][-1]:.4f})")
    return gm, history


def balanced_indices(labels: Sequence[int], seed: int = 0) -> np.ndarray:
    """
    Indices subsampled so every class has the minority-class count.

    Raises
    ------
    ValueError
        If a binary class is absent.
    """
    y = np.asarray(labels).astype(int)
    classes = [0, 1] if set(np.unique(y)) <= {0, 1} else sorted(np.unique(y).tolist())
    members = {c: np.flatnonzero(y == c) for c in classes}
    absent = [c for c, idx in members.items() if len(idx) == 0]
    if absent:
        raise ValueError(f"Cannot balance: class(es) {absent} absent from the labels")
    size = min(len(idx) for idx in members.values())
    rng = np.random.default_rng(seed)
    chosen = [np.sort(rng.choice(members[c], size=size, replace=False)) for c in classes]
    return np.sort(np.concatenate(chosen))


def retrain_balanced(graphs: Sequence[MolecularGraph], labels: Sequence[int], config,
                     head: str = "binary", n_classes: int = 2, seed: int = 0) -> tuple[GraphModel, dict]:
    """Train on a class-balanced subsample (see ``balanced_indices``)."""
    keep = balanced_indices(labels, seed)
    logger.info(f"Balanced retraining on {len(keep)} of {len(graphs)} molecules")
    gm, history = train_graph_classifier([graphs[i] for i in keep], [labels[i] for i in keep],
                                         config, head, n_classes, seed)
    history["balanced_indices"] = keep.tolist()
    return gm, history


@torch.no_grad()
def atom_bounded_batches(graphs: Sequence[MolecularGraph], batch_size: int,
                         max_atoms: int = MAX_BATCH_ATOMS) -> Iterator[slice]:
    """Consecutive slices of at most ``batch_size`` graphs and ``max_atoms`` atoms.

    A graph larger than ``max_atoms`` gets a slice of its own.
    """
    start, atoms = 0, 0
    for k, m in enumerate(graphs):
        n = len(m.atoms)
        if k > start and (k - start >= batch_size or atoms + n > max_atoms):
            yield slice(start, k)
            start, atoms = k, 0
        atoms += n
    if start < len(graphs):
        yield slice(start, len(graphs))


def predict(gm: GraphModel, graphs: Sequence[MolecularGraph], batch_size: int = 256,
            max_atoms: int = MAX_BATCH_ATOMS) -> np.ndarray:
    """
    Model predictions.

    Batches hold at most ``batch_size`` graphs and ``max_atoms`` atoms, which
    bounds the dense block-diagonal adjacency at ``max_atoms ** 2`` entries.

    Returns
    -------
    np.ndarray
        Probability of class 1 (binary, shape (n,)), class probabilities
        (multiclass, shape (n, C)) or de-standardized values (regression,
        shape (n,)).
    """
    was_training = gm.training
    gm.eval()
    chunks = []
    for batch in atom_bounded_batches(graphs, batch_size, max_atoms):
        out = gm(featurize(graphs[batch]))
        if gm.head_kind == "binary":
            chunks.append(torch.sigmoid(out[:, 0]))
        elif gm.head_kind == "multiclass":
            chunks.append(torch.softmax(out, dim=1))
        else:
            chunks.append(out[:, 0] * gm.target_std + gm.target_mean)
    gm.train(was_training)
    if not chunks:
        return np.zeros((0, gm.n_classes) if gm.head_kind == "multiclass" else 0)
    return torch.cat(chunks).detach().double().cpu().numpy()


def regression_metrics(y: Sequence[float], y_hat: Sequence[float]) -> dict[str, float]:
    """R², MSE and MAE."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    residual = y - y_hat
    ss_res = float(np.sum(residual ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2)) if y.size else 0.0
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    return {"r2": r2, "mse": float(np.mean(residual ** 2)) if y.size else 0.0,
            "mae": float(np.mean(np.abs(residual))) if y.size else 0.0}


def size_stratified_metrics(graphs: Sequence[MolecularGraph], y: Sequence[float],
                            y_hat: Sequence[float]) -> pd.DataFrame:
    """Regression metrics per heavy-atom size bin (small ≤10, medium 11-20, large 21-35, very large >35)."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    sizes = np.array([m.heavy_atom_count for m in graphs])
    rows = []
    for name, low, high in SIZE_BINS:
        mask = (sizes >= low) & (sizes <= high)
        metrics = regression_metrics(y[mask], y_hat[mask]) if mask.any() else {"r2": np.nan, "mse": np.nan, "mae": np.nan}
        rows.append({"Size": name, "Count": int(mask.sum()), "R2": metrics["r2"],
                     "MSE": metrics["mse"], "MAE": metrics["mae"]})
    return pd.DataFrame(rows)


def per_class_accuracy(y: Sequence[int], y_hat: Sequence[int], classes: Sequence[str]) -> pd.DataFrame:
    """Class / Correct / Total / Accuracy (%) table."""
    y = np.asarray(y, dtype=int)
    y_hat = np.asarray(y_hat, dtype=int)
    rows = []
    for k, name in enumerate(classes):
        mask = y == k
        total = int(mask.sum())
        correct = int((y_hat[mask] == k).sum())
        rows.append({"Class": name, "Correct": correct, "Total": total,
                     "Accuracy (%)": round(100.0 * correct / total, 2) if total else np.nan})
    return pd.DataFrame(rows)


def save_graph_model(gm: GraphModel, path: Union[str, Path], config_hash: str = "",
                     task: Optional[str] = None) -> Path:
    manifest = {"kind": "graph", "arch": gm.arch, "task": task, "config_hash": config_hash}
    return save_checkpoint(path, state_tensors(gm), manifest)


def load_graph_model(path: Union[str, Path]) -> GraphModel:
    tensors, manifest = load_checkpoint(path)
    if manifest.get("kind") != "graph":
        raise ValueError(f"{path} is a {manifest.get('kind')!r} checkpoint, expected 'graph'")
    arch = dict(manifest["arch"])
    if arch["head"] != "multiclass":
        arch["n_classes"] = 2
    gm = GraphModel(**arch)
    load_state(gm, tensors)
    gm.eval()
    return gm
