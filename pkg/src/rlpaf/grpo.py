"""Group-relative policy optimization against the proof checker.

For each statement a group of G proofs is sampled from a frozen snapshot of
the policy.  Each proof is checked, mapped to a terminal reward, and the
rewards are standardized within the group.  That standardized reward is the
advantage of every token of the proof.  The update maximizes the clipped
ratio surrogate.  There is no KL term, no reference model and no value
network.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import policy, verifier
from .lang import Statement
from .policy import PolicyParams
from .verifier import RewardConfig, VerifierOutcome

VARIANTS = ("grpo", "dr_grpo")
STD_FLOOR = 1e-8


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 8
    epsilon: float = 0.2
    lr: float = 1e-3
    statements_per_batch: int = 16
    max_rollout_len: int = 8
    variant: str = "grpo"
    iterations: int = 200
    eval_every: int = 50
    eval_samples: int = 32
    inner_epochs: int = 1
    temperature: float = 1.0
    step_budget: int = verifier.DEFAULT_STEP_BUDGET
    workers: int = 1
    seed: int = 0
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")


@dataclass
class RolloutGroup:
    statement: Statement
    outputs: list[list[int]]
    old_logprobs: list[np.ndarray]
    outcomes: list[VerifierOutcome]
    rewards: np.ndarray
    advantages: np.ndarray

    @property
    def size(self) -> int:
        return len(self.outputs)


def compute_advantages(rewards: Sequence[float], variant: str = "grpo") -> np.ndarray:
    """Center rewards on the group mean; ``grpo`` also divides by the population std."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("a group needs at least two rewards")
    centered = r - r.mean()
    if variant == "dr_grpo":
        return centered
    if variant != "grpo":
        raise ValueError(f"unknown variant {variant!r}")
    std = r.std()
    if std < STD_FLOOR:
        return np.zeros_like(r)
    return centered / std


def rollout_groups(
    theta_old: PolicyParams,
    statements: Sequence[Statement],
    cfg: TrainConfig,
    group_seeds: Sequence[int],
) -> list[RolloutGroup]:
    """Sample, score and verify one group per statement in one batched pass."""
    G = cfg.group_size
    rows_s = [s for s in statements for _ in range(G)]
    rows_seed = [policy.derive_seed(gs, i) for gs in group_seeds for i in range(G)]
    outputs = policy.sample_batch(theta_old, rows_s, rows_seed, cfg.temperature, cfg.max_rollout_len)
    old = policy.token_logprobs(theta_old, rows_s, outputs)
    outcomes = verifier.verify_batch(
        [(s, policy.decode(o)) for s, o in zip(rows_s, outputs)], workers=cfg.workers, step_budget=cfg.step_budget
    )
    groups = []
    for k, s in enumerate(statements):
        sl = slice(k * G, (k + 1) * G)
        rewards = np.array([verifier.reward_of(o, cfg.reward) for o in outcomes[sl]])
        groups.append(
            RolloutGroup(s, outputs[sl], old[sl], outcomes[sl], rewards, compute_advantages(rewards, cfg.variant))
        )
    return groups


def rollout_group(theta_old: PolicyParams, q: Statement, cfg: TrainConfig, group_seed: int | None = None) -> RolloutGroup:
    return rollout_groups(theta_old, [q], cfg, [cfg.seed if group_seed is None else group_seed])[0]


def _token_weights(groups: Sequence[RolloutGroup], cfg: TrainConfig) -> list[np.ndarray]:
    n = len(groups)
    out = []
    for g in groups:
        for o in g.outputs:
            denom = len(o) if cfg.variant == "grpo" else cfg.max_rollout_len
            out.append(np.full(len(o), 1.0 / (n * g.size * denom)))
    return out


def surrogate_terms(new_lp: np.ndarray, old_lp: np.ndarray, adv: float, epsilon: float):
    """Per-token clipped surrogate, d(term)/d(new logprob) and clip mask."""
    ratio = np.exp(new_lp - old_lp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv
    value = np.minimum(unclipped, clipped)
    # the min selects the clipped constant strictly outside the band on the advantage's side
    dead = ((adv > 0) & (ratio > 1.0 + epsilon)) | ((adv < 0) & (ratio < 1.0 - epsilon))
    dvalue = np.where(dead, 0.0, unclipped)
    return value, dvalue, dead


def grpo_objective(
    params: PolicyParams, groups: Sequence[RolloutGroup], cfg: TrainConfig, with_stats: bool = False
):
    """Value and exact gradient of the clipped group surrogate at ``params``."""
    if not groups:
        raise ValueError("grpo_objective needs at least one group")
    statements, seqs, olds, advs = [], [], [], []
    for g in groups:
        for o, old, a in zip(g.outputs, g.old_logprobs, g.advantages):
            if len(old) != len(o):
                raise LengthMismatch(f"{len(old)} old logprobs for an output of length {len(o)}")
            statements.append(g.statement)
            seqs.append(o)
            olds.append(np.asarray(old))
            advs.append(float(a))
    weights = _token_weights(groups, cfg)
    new = policy.token_logprobs(params, statements, seqs)
    value = 0.0
    coefs = []
    n_dead = n_tok = 0
    for lp, old, a, w in zip(new, olds, advs, weights):
        v, dv, dead = surrogate_terms(lp, old, a, cfg.epsilon)
        value += float((w * v).sum())
        coefs.append(w * dv)
        n_dead += int(dead.sum())
        n_tok += len(lp)
    if any(np.any(c) for c in coefs):
        grad = policy.backprop(params, statements, seqs, coefs)
    else:
        grad = np.zeros(params.arch.n_params)
    if with_stats:
        return value, grad, {"clip_fraction": n_dead / max(n_tok, 1)}
    return value, grad


def train_step(
    params: PolicyParams,
    q_batch: Sequence[Statement],
    cfg: TrainConfig,
    iteration: int = 0,
) -> tuple[PolicyParams, dict]:
    """Roll out one group per statement from a frozen snapshot, then ascend."""
    t0 = time.perf_counter()
    theta_old = params
    seeds = [policy.derive_seed(cfg.seed, iteration, k) for k in range(len(q_batch))]
    groups = rollout_groups(theta_old, q_batch, cfg, seeds)
    clip_fracs = []
    for _ in range(cfg.inner_epochs):
        _, grad, stats = grpo_objective(params, groups, cfg, with_stats=True)
        clip_fracs.append(stats["clip_fraction"])
        if np.any(grad):
            params = params.updated(cfg.lr * grad)
    outcomes = [o for g in groups for o in g.outcomes]
    rewards = np.concatenate([g.rewards for g in groups])
    metrics = {
        "iteration": iteration,
        "mean_reward": float(rewards.mean()),
        "verified_fraction": sum(o.success for o in outcomes) / len(outcomes),
        "mean_len": float(np.mean([len(o) for g in groups for o in g.outputs])),
        "clip_fraction": float(np.mean(clip_fracs)),
        "wall_ms": (time.perf_counter() - t0) * 1000.0,
    }
    return params, metrics


CURVE_COLUMNS = ("iteration", "mean_reward", "verified_fraction", "mean_len", "clip_fraction", "wall_ms")


def train_rl(
    params: PolicyParams,
    pool: Sequence[Statement],
    cfg: TrainConfig,
    evaluate: Callable[[PolicyParams, int], dict] | None = None,
    log: Callable[[dict], None] | None = None,
) -> tuple[PolicyParams, list[dict], list[dict]]:
    """Run ``cfg.iterations`` GRPO steps over ``pool``.

    Statements are visited round-robin through a reshuffled order each epoch.
    ``evaluate(params, iteration)`` is called every ``cfg.eval_every``
    iterations and once at the end; its rows are returned separately.
    """
    if not pool:
        raise ValueError("empty RL pool")
    rng = np.random.default_rng(policy.derive_seed(cfg.seed, 0x5EED))
    order: list[int] = []
    curve, evals = [], []
    for it in range(cfg.iterations):
        batch = []
        while len(batch) < cfg.statements_per_batch:
            if not order:
                order = rng.permutation(len(pool)).tolist()
            batch.append(pool[order.pop(0)])
        params, metrics = train_step(params, batch, cfg, iteration=it)
        curve.append(metrics)
        if log is not None:
            log(metrics)
        if evaluate is not None and cfg.eval_every > 0 and (it + 1) % cfg.eval_every == 0:
            evals.append(evaluate(params, it + 1))
    if evaluate is not None and (not evals or evals[-1].get("iteration") != cfg.iterations):
        evals.append(evaluate(params, cfg.iterations))
    return params, curve, evals
