"""Token-level recurrent SMILES generator.

A single GRU layer over token embeddings predicts the next SMILES token.
The vocabulary is built from the regex tokenizer in ``covgen.chem`` with
three special tokens: ``<pad>`` (0), ``<bos>`` (1) and ``<eos>`` (2).
"""

import logging
import math
import time
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from covgen.chem import SmilesParseError, tokenize_smiles
from covgen.checkpoint import load_checkpoint, load_state, save_checkpoint, state_tensors

logger = logging.getLogger(__name__)

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
PAD_INDEX, BOS_INDEX, EOS_INDEX = 0, 1, 2
MAX_LENGTH = 128
SAMPLE_CHUNK = 256


class VocabularyError(ValueError):
    """A SMILES string contains a token the vocabulary does not cover."""


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[:3] != (PAD, BOS, EOS):
            raise VocabularyError(f"Vocabulary must start with {PAD}, {BOS}, {EOS}")

    @classmethod
    def from_corpus(cls, smiles: Iterable[str]) -> "Vocabulary":
        """Special tokens followed by every corpus token in sorted order."""
        seen: set[str] = set()
        for s in smiles:
            try:
                seen.update(tokenize_smiles(s))
            except SmilesParseError as e:
                raise VocabularyError(f"Cannot tokenize corpus SMILES {s!r}: {e}") from e
        return cls(tokens=(PAD, BOS, EOS, *sorted(seen)))

    def __len__(self) -> int:
        return len(self.tokens)

    @cached_property
    def _lookup(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def encode(self, smiles: str) -> list[int]:
        """Token ids of ``smiles`` followed by EOS (no BOS)."""
        lookup = self._lookup
        try:
            tokens = tokenize_smiles(smiles)
        except SmilesParseError as e:
            raise VocabularyError(str(e)) from e
        unknown = [t for t in tokens if t not in lookup]
        if unknown:
            raise VocabularyError(f"Tokens {sorted(set(unknown))} of {smiles!r} are outside the vocabulary")
        return [lookup[t] for t in tokens] + [EOS_INDEX]

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            if i == EOS_INDEX:
                break
            if i in (PAD_INDEX, BOS_INDEX):
                continue
            out.append(self.tokens[i])
        return "".join(out)


@dataclass(frozen=True)
class TokenSequence:
    """
    One sampled sequence.

    ``tokens`` excludes BOS and includes EOS when ``terminated``;
    ``log_probs[t]`` is the model log-probability of ``tokens[t]``.
    """

    tokens: tuple[int, ...]
    log_probs: np.ndarray
    terminated: bool
    smiles: str

    @property
    def log_prob(self) -> float:
        return float(np.sum(self.log_probs))


class GeneratorModel(nn.Module):
    """
    Embedding → GRU → linear next-token model.

    Parameters
    ----------
    vocabulary : Vocabulary
        Token list including the special tokens.
    embedding_dim : int
        Embedding width E.
    hidden_dim : int
        GRU hidden width H.
    """

    def __init__(self, vocabulary: Vocabulary, embedding_dim: int = 64, hidden_dim: int = 256):
        super().__init__()
        self.vocabulary = vocabulary
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.embedding = nn.Embedding(len(vocabulary), embedding_dim, padding_idx=PAD_INDEX)
        self.gru = nn.GRU(embedding_dim, hidden_dim, batch_first=True)
        self.output = nn.Linear(hidden_dim, len(vocabulary))
        mask = torch.zeros(len(vocabulary), dtype=torch.bool)
        mask[[PAD_INDEX, BOS_INDEX]] = True
        self.register_buffer("_never_emitted", mask, persistent=False)

    def forward(self, inputs: torch.Tensor, hidden: Optional[torch.Tensor] = None):
        """Logits (B, T, V) with PAD/BOS masked out, and the final hidden state."""
        states, hidden = self.gru(self.embedding(inputs), hidden)
        logits = self.output(states).masked_fill(self._never_emitted, -math.inf)
        return logits, hidden


def _pad_batch(sequences: Sequence[Sequence[int]], device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Teacher-forcing inputs (BOS + tokens[:-1]) and targets, padded with PAD."""
    longest = max(len(s) for s in sequences)
    inputs = torch.full((len(sequences), longest), PAD_INDEX, dtype=torch.long, device=device)
    targets = torch.full((len(sequences), longest), PAD_INDEX, dtype=torch.long, device=device)
    for row, seq in enumerate(sequences):
        seq = list(seq)
        inputs[row, : len(seq)] = torch.tensor([BOS_INDEX] + seq[:-1], dtype=torch.long)
        targets[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    return inputs, targets


def log_likelihood(g: GeneratorModel, sequences: Sequence[Union[TokenSequence, Sequence[int]]]) -> torch.Tensor:
    """
    Teacher-forced summed log-probability of each sequence (differentiable).

    Returns
    -------
    torch.Tensor
        Shape (n,).
    """
    token_lists = [s.tokens if isinstance(s, TokenSequence) else s for s in sequences]
    if any(len(t) == 0 for t in token_lists):
        raise ValueError("Sequences must contain at least one token")
    inputs, targets = _pad_batch(token_lists)
    logits, _ = g(inputs)
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    picked = picked.masked_fill(targets == PAD_INDEX, 0.0)
    return picked.sum(dim=1)


def sequence_loss(g: GeneratorModel, encoded: Sequence[Sequence[int]]) -> torch.Tensor:
    """Mean next-token cross-entropy over non-PAD positions."""
    inputs, targets = _pad_batch(encoded)
    logits, _ = g(inputs)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=PAD_INDEX)


def pretrain_generator(corpus: Sequence[str], config, seed: int = 0,
                       vocabulary: Optional[Vocabulary] = None) -> tuple[GeneratorModel, dict]:
    """
    Train a generator on a SMILES corpus by next-token prediction.

    Parameters
    ----------
    corpus : sequence of str
        Training SMILES.
    config : GeneratorConfig
        Model widths and optimizer settings.
    seed : int
        Seed for initialization, the hold-out split and shuffling.
    vocabulary : Vocabulary, optional
        Fixed vocabulary; built from the corpus when omitted.

    Returns
    -------
    GeneratorModel
        Trained model.
    dict
        ``train_loss`` and ``holdout_loss`` per epoch plus ``uniform_loss``
        (log V, the loss of a uniform predictor).

    Raises
    ------
    ValueError
        If the corpus is empty.
    VocabularyError
        If a corpus token is outside a supplied vocabulary.
    """
    if not corpus:
        raise ValueError("Cannot pretrain a generator on an empty corpus")
    vocabulary = vocabulary or Vocabulary.from_corpus(corpus)
    encoded = [vocabulary.encode(s) for s in corpus]
    too_long = sum(1 for e in encoded if len(e) > config.max_length)
    if too_long:
        logger.warning(f"{too_long} corpus molecules exceed {config.max_length} tokens; truncated")
        encoded = [e[: config.max_length] for e in encoded]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(encoded))
    n_holdout = int(round(config.holdout_fraction * len(encoded))) if len(encoded) >= 10 else 0
    holdout = [encoded[i] for i in order[:n_holdout]]
    train = [encoded[i] for i in order[n_holdout:]]

    torch.manual_seed(seed)
    g = GeneratorModel(vocabulary, config.embedding_dim, config.hidden_dim)
    optimizer = torch.optim.SGD(g.parameters(), lr=config.learning_rate, momentum=config.momentum)
    history = {"train_loss": [], "holdout_loss": [], "uniform_loss": math.log(len(vocabulary))}

    logger.info(
        f"Pretraining generator: {len(train)} train / {len(holdout)} holdout molecules, "
        f"vocabulary {len(vocabulary)}, {config.epochs} epochs"
    )
    t0 = time.time()
    for epoch in range(config.epochs):
        g.train()
        epoch_loss, batches = 0.0, 0
        permutation = rng.permutation(len(train))
        for start in range(0, len(train), config.batch_size):
            batch = [train[i] for i in permutation[start:start + config.batch_size]]
            optimizer.zero_grad()
            loss = sequence_loss(g, batch)
            loss.backward()
            nn.utils.clip_grad_norm_(g.parameters(), config.grad_clip)
            optimizer.step()
            epoch_loss += float(loss.detach())
            batches += 1
        history["train_loss"].append(epoch_loss / max(batches, 1))
        if holdout:
            g.eval()
            with torch.no_grad():
                history["holdout_loss"].append(float(sequence_loss(g, holdout)))
        logger.debug(f"epoch {epoch + 1}/{config.epochs} train={history['train_loss'][-1]:.4f}"
                     + (f" holdout={history['holdout_loss'][-1]:.4f}" if holdout else ""))
    g.eval()
    logger.info(f"✓ Generator pretrained in {time.time() - t0:.1f}s "
                f"(final train loss {history['train_loss'][-1]:.4f})")
    return g, history


def _chunk_seed(seed: int, chunk: int) -> int:
    return int(np.random.SeedSequence([seed, chunk]).generate_state(1, dtype=np.uint64)[0] >> 1)


@torch.no_grad()
def _sample_chunk(g: GeneratorModel, size: int, temperature: float, seed: int,
                  max_length: int) -> list[TokenSequence]:
    generator = torch.Generator().manual_seed(seed)
    current = torch.full((size, 1), BOS_INDEX, dtype=torch.long)
    hidden = None
    finished = torch.zeros(size, dtype=torch.bool)
    chosen_steps, logp_steps = [], []
    for _ in range(max_length):
        logits, hidden = g(current, hidden)
        logits = logits[:, -1, :]
        log_probs = F.log_softmax(logits, dim=-1)
        probs = F.softmax(logits / temperature, dim=-1)
        chosen = torch.multinomial(probs, 1, generator=generator).squeeze(1)
        chosen = chosen.masked_fill(finished, PAD_INDEX)
        chosen_steps.append(chosen)
        logp_steps.append(log_probs.gather(1, chosen.unsqueeze(1)).squeeze(1))
        finished = finished | (chosen == EOS_INDEX)
        if bool(finished.all()):
            break
        current = chosen.unsqueeze(1)

    tokens = torch.stack(chosen_steps, dim=1).tolist()
    logps = torch.stack(logp_steps, dim=1).double().numpy()
    sequences = []
    for row in range(size):
        ids = []
        for t in tokens[row]:
            if t == PAD_INDEX:
                break
            ids.append(t)
            if t == EOS_INDEX:
                break
        sequences.append(TokenSequence(
            tokens=tuple(ids),
            log_probs=logps[row, : len(ids)].copy(),
            terminated=bool(ids) and ids[-1] == EOS_INDEX,
            smiles=g.vocabulary.decode(ids),
        ))
    return sequences


def sample(g: GeneratorModel, n: int, temperature: float = 1.0, seed: int = 0,
           max_length: int = MAX_LENGTH) -> list[TokenSequence]:
    """
    Sample ``n`` sequences.

    Sampling proceeds in fixed-size chunks, each with its own seed derived
    from ``seed`` and the chunk index, so ``sample(g, n)`` is always a prefix
    of ``sample(g, m)`` for ``n <= m``. Stored log-probabilities are those of
    the untempered model.

    Raises
    ------
    ValueError
        If ``n < 1`` or ``temperature <= 0``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    was_training = g.training
    g.eval()
    out: list[TokenSequence] = []
    chunk = 0
    while len(out) < n:
        out.extend(_sample_chunk(g, SAMPLE_CHUNK, temperature, _chunk_seed(seed, chunk), max_length))
        chunk += 1
    g.train(was_training)
    return out[:n]


@torch.no_grad()
def greedy_decode(g: GeneratorModel, max_length: int = MAX_LENGTH) -> str:
    """Argmax decoding from BOS."""
    current = torch.full((1, 1), BOS_INDEX, dtype=torch.long)
    hidden = None
    ids = []
    for _ in range(max_length):
        logits, hidden = g(current, hidden)
        token = int(logits[0, -1].argmax())
        if token == EOS_INDEX:
            break
        ids.append(token)
        current = torch.tensor([[token]], dtype=torch.long)
    return g.vocabulary.decode(ids)


def save_generator(g: GeneratorModel, path: Union[str, Path], config_hash: str = "") -> Path:
    manifest = {
        "kind": "generator",
        "vocabulary": list(g.vocabulary.tokens),
        "embedding_dim": g.embedding_dim,
        "hidden_dim": g.hidden_dim,
        "config_hash": config_hash,
    }
    return save_checkpoint(path, state_tensors(g), manifest)


def load_generator(path: Union[str, Path]) -> GeneratorModel:
    tensors, manifest = load_checkpoint(path)
    if manifest.get("kind") != "generator":
        raise ValueError(f"{path} is a {manifest.get('kind')!r} checkpoint, expected 'generator'")
    g = GeneratorModel(Vocabulary(tuple(manifest["vocabulary"])),
                       manifest["embedding_dim"], manifest["hidden_dim"])
    load_state(g, tensors)
    g.eval()
    return g
