"""Multi-objective reinforcement learning for the SMILES generator.

Each iteration samples a batch, scores it, ranks it into Pareto fronts with
crowding distances, keeps the top fraction as episodes and takes one
REINFORCE step on ``J = mean(R * log G(sequence))`` over those episodes.
Invalid molecules stay in the batch with reward 0.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
import xarray as xr
from torch import nn

from covgen.data import append_rows, write_table
from covgen.generator import GeneratorModel, TokenSequence, log_likelihood, sample, save_generator
from covgen.pareto import non_dominated_sort, select_by_reward, select_episodes
from covgen.scorers import ClippedScorer, ScoringContext, score_batch, score_table

logger = logging.getLogger(__name__)

RL_LOG_NAME = "rl_log.csv"


@dataclass(frozen=True)
class RlIterationReport:
    iteration: int
    mean_reward: float
    fraction_valid: float
    fraction_desirable: float
    selected: int
    objective_means: dict[str, float] = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {k: v for k, v in asdict(self).items() if k != "objective_means"}
        row.update({f"mean_{name}": value for name, value in self.objective_means.items()})
        return row


def iteration_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, 1]).generate_state(1, dtype=np.uint64)[0] >> 1)


def episode_ids(iteration: int, n: int) -> list[str]:
    return [f"{iteration:05d}-{i:06d}" for i in range(n)]


def policy_objective(g: GeneratorModel, episodes: Sequence[tuple[TokenSequence, float]]) -> torch.Tensor:
    """
    ``J(θ)``: mean over episodes of reward times teacher-forced sequence log-probability.

    Raises
    ------
    ValueError
        If ``episodes`` is empty or a reward lies outside [0, 1].
    """
    if not episodes:
        raise ValueError("policy gradient requires at least one episode")
    rewards = [float(r) for _, r in episodes]
    bad = [r for r in rewards if not 0.0 <= r <= 1.0]
    if bad:
        raise ValueError(f"Rewards must lie in [0, 1], found {bad[:5]}")
    log_probs = log_likelihood(g, [s for s, _ in episodes])
    weights = torch.tensor(rewards, dtype=log_probs.dtype)
    return (weights * log_probs).mean()


def policy_gradient(g: GeneratorModel, episodes: Sequence[tuple[TokenSequence, float]]) -> list[torch.Tensor]:
    """Gradient of ``policy_objective`` for every generator parameter (unclipped)."""
    params = list(g.parameters())
    objective = policy_objective(g, episodes)
    grads = torch.autograd.grad(objective, params, allow_unused=True)
    return [torch.zeros_like(p) if grad is None else grad for p, grad in zip(params, grads)]


def policy_gradient_update(g: GeneratorModel, episodes: Sequence[tuple[TokenSequence, float]],
                           learning_rate: float = 1e-3, momentum: float = 0.9, grad_clip: float = 5.0,
                           optimizer: Optional[torch.optim.Optimizer] = None) -> GeneratorModel:
    """
    One gradient-ascent step on ``J``.

    The gradient norm is clipped to ``grad_clip``. Without ``optimizer`` a
    fresh SGD optimizer is built, so all-zero rewards leave the parameters
    unchanged; a reused optimizer keeps moving them through its momentum buffer.
    """
    grads = policy_gradient(g, episodes)
    if optimizer is None:
        optimizer = torch.optim.SGD(g.parameters(), lr=learning_rate, momentum=momentum)
    optimizer.zero_grad()
    for p, grad in zip(g.parameters(), grads):
        p.grad = -grad.detach().clone()
    nn.utils.clip_grad_norm_(g.parameters(), grad_clip)
    optimizer.step()
    return g


def objective_names(active: Sequence[ClippedScorer]) -> list[str]:
    """Scorers that take part in Pareto ranking (weight > 0)."""
    return [s.name for s in active if s.weight > 0]


def _report(iteration: int, table: xr.Dataset, objectives: Sequence[str], selected: int) -> RlIterationReport:
    n = table.sizes["molecule"]
    means = table["clipped"].sel(scorer=list(objectives)).mean("molecule")
    return RlIterationReport(
        iteration=iteration,
        mean_reward=float(table["reward"].mean()) if n else 0.0,
        fraction_valid=float(table["valid"].astype(float).mean()) if n else 0.0,
        fraction_desirable=float(table["desirable"].astype(float).mean()) if n else 0.0,
        selected=selected,
        objective_means={name: float(means.sel(scorer=name)) for name in objectives},
    )


def rl_train(g: GeneratorModel, active: Sequence[ClippedScorer], config,
             context: Optional[ScoringContext] = None, seed: int = 0,
             out_dir: Optional[Union[str, Path]] = None, config_hash: str = "",
             on_iteration: Optional[Callable[[RlIterationReport], None]] = None,
             ) -> tuple[GeneratorModel, list[RlIterationReport]]:
    """
    Optimize a pretrained generator against the active scorers.

    Parameters
    ----------
    g : GeneratorModel
        Pretrained generator; updated in place.
    active : sequence of ClippedScorer
        Scorers for reward, desirability and (weight > 0) Pareto ranking.
    config : RlConfig
        Batch size, iterations, step size, momentum, selection fraction, PCD switch,
        temperature and checkpoint cadence.
    context : ScoringContext, optional
        Models, fragment table, references and external scores for scoring.
    seed : int
        Run seed; iteration ``k`` samples with a seed derived from ``(seed, k)``.
    out_dir : str or Path, optional
        When given, each report is appended to ``rl_log.csv`` and
        checkpoints are written every ``config.checkpoint_every`` iterations.
    config_hash : str
        Recorded in the log's comment line and checkpoint manifests.
    on_iteration : callable, optional
        Called with each report.

    Returns
    -------
    GeneratorModel
        The updated generator.
    list of RlIterationReport
        One report per iteration.

    Raises
    ------
    ValueError
        If no active scorer has a positive weight.
    ScoringError
        If a scorer fails; the iteration is aborted.
    """
    objectives = objective_names(active)
    if not objectives:
        raise ValueError(
            f"RL needs at least one active scorer with weight > 0. Active: {[s.name for s in active]}"
        )
    out_dir = Path(out_dir) if out_dir is not None else None
    optimizer = torch.optim.SGD(g.parameters(), lr=config.learning_rate, momentum=config.momentum)
    reports: list[RlIterationReport] = []

    logger.info(
        f"RL training: {config.iterations} iterations × {config.batch_size} samples, "
        f"objectives {objectives}, selection {'PCD' if config.use_pcd else 'reward'} "
        f"top {config.selection_fraction:.0%}"
    )
    t0 = time.time()
    for it in range(config.iterations):
        sequences = sample(g, config.batch_size, temperature=config.temperature,
                           seed=iteration_seed(seed, it), max_length=config.max_length)
        ids = episode_ids(it, len(sequences))
        vectors = score_batch(ids, [s.smiles for s in sequences], active, context)
        table = score_table(vectors, active)
        rewards = table["reward"].values

        if config.use_pcd:
            ranking = non_dominated_sort(vectors, objectives)
            chosen = select_episodes(vectors, ranking, config.selection_fraction)
        else:
            chosen = select_by_reward(vectors, rewards, config.selection_fraction)

        g.train()
        policy_gradient_update(g, [(sequences[i], float(rewards[i])) for i in chosen],
                               grad_clip=config.grad_clip, optimizer=optimizer)
        g.eval()

        report = _report(it, table, objectives, len(chosen))
        reports.append(report)
        logger.info(
            f"iteration {it + 1}/{config.iterations}: reward={report.mean_reward:.3f} "
            f"valid={report.fraction_valid:.1%} desirable={report.fraction_desirable:.1%}"
        )
        if on_iteration is not None:
            on_iteration(report)
        if out_dir is not None:
            row = pd.DataFrame([report.as_row()])
            if it == 0:
                write_table(row, out_dir / RL_LOG_NAME, config_hash)
            else:
                append_rows(row, out_dir / RL_LOG_NAME)
            if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                save_generator(g, out_dir / f"generator_rl_{it + 1:05d}.ckpt", config_hash)

    logger.info(f"✓ RL training finished in {time.time() - t0:.1f}s")
    return g, reports
