"""Clipped-ratio policy optimisation with a per-token KL penalty to the initial policy.

Each context is a one-decision episode: a script is sampled token by token,
scored once by the reward function, and every token shares the advantage
r - baseline. The loss minimised per batch of S samples is

    -1/S sum_s sum_l min(rho A_s, clip(rho, 1-eps, 1+eps) A_s)
    + beta/S sum_s sum_l KL(pi(.|prefix_l) || pi_init(.|prefix_l))

with both distributions restricted to the grammar mask at each prefix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import DivergedLoss, TrainConfig
from .policy import Adam, Batch, PolicyModel, decode_ids, log_softmax
from .reward import RewardModel
from .tokens import response_text_for_tokens

log = logging.getLogger(__name__)

RATIO_LIMIT = 1e6


class RatioOverflow(FloatingPointError):
    pass


@dataclass
class Context:
    x: np.ndarray
    instruction: str
    objects: list[str]


def kl_divergence(p_logits: np.ndarray, q_logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """KL(p || q) along the last axis, from logits."""
    lp = log_softmax(p_logits, mask)
    lq = log_softmax(q_logits, mask)
    p = np.exp(lp)
    with np.errstate(invalid="ignore"):
        terms = np.where(p > 0, p * (lp - lq), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


@dataclass
class Rollout:
    batch: Batch
    old_logp: np.ndarray  # (T,) log-prob of the sampled token under the sampling policy
    ref_logits: np.ndarray  # (T, V) pi_init logits
    adv: np.ndarray  # (S,) advantage per sample
    tokens: list[list[str]]
    rewards: np.ndarray


def ppo_loss_and_grad(policy: PolicyModel, ro: Rollout, beta: float, eps: float
                      ) -> tuple[float, dict[str, np.ndarray], float]:
    """Returns (loss, grads, mean summed KL per sample)."""
    b = ro.batch
    z, logits = policy.forward(b)
    lp = log_softmax(logits, b.mask)
    lq = log_softmax(ro.ref_logits, b.mask)
    p = np.exp(lp)
    rows = np.arange(len(b.targ))
    S = b.n_examples
    ratio = np.exp(lp[rows, b.targ] - ro.old_logp)
    if not np.all(np.isfinite(ratio)) or np.any(ratio > RATIO_LIMIT):
        raise RatioOverflow(f"probability ratio reached {np.nanmax(ratio):.3g}")
    A = ro.adv[b.ex]
    clipped = np.clip(ratio, 1 - eps, 1 + eps)
    surr = np.minimum(ratio * A, clipped * A)
    with np.errstate(invalid="ignore"):
        diff = np.where(b.mask, lp - lq, 0.0)
    kl_tok = np.sum(np.where(b.mask, p * diff, 0.0), axis=1)
    loss = -surr.sum() / S + beta * kl_tok.sum() / S

    active = np.where(A >= 0, ratio < 1 + eps, ratio > 1 - eps)
    coef = np.where(active, -A * ratio / S, 0.0)
    onehot = np.zeros_like(p)
    onehot[rows, b.targ] = 1.0
    dlogits = coef[:, None] * (onehot - p)
    dlogits += (beta / S) * np.where(b.mask, p * (diff - kl_tok[:, None]), 0.0)
    grads = policy.backward(b, z, dlogits)
    return float(loss), grads, float(kl_tok.sum() / S)


def reward_fn_from_model(model: RewardModel) -> Callable[[Context, list[str]], float]:
    def fn(ctx: Context, tokens: list[str]) -> float:
        return model.score(ctx.instruction, response_text_for_tokens(tokens))

    return fn


def rollout(policy: PolicyModel, reference: PolicyModel, contexts: Sequence[Context],
            reward_fn: Callable[[Context, list[str]], float], k: int, seed: int, it: int,
            baseline: float | None) -> tuple[Rollout, float]:
    xs, seqs, masks, toks, rewards = [], [], [], [], []
    for ci, ctx in enumerate(contexts):
        rng = np.random.default_rng([seed, it, ci])
        for _ in range(k):
            ids, m = decode_ids(policy, ctx.x, ctx.objects, temperature=1.0, rng=rng)
            t = policy.vocab.decode(ids)
            xs.append(ctx.x)
            seqs.append(ids)
            masks.append(m)
            toks.append(t)
            rewards.append(reward_fn(ctx, t))
    batch = Batch.build(xs, seqs, masks)
    rows = np.arange(len(batch.targ))
    old = policy.log_probs(batch)[rows, batch.targ]
    _, ref_logits = reference.forward(batch)
    r = np.array(rewards)
    base = float(r.mean()) if baseline is None else baseline
    return Rollout(batch, old, ref_logits, r - base, toks, r), base


@dataclass
class PPOTrace:
    mean_reward: list[float] = field(default_factory=list)
    mean_kl: list[float] = field(default_factory=list)
    skipped: int = 0


def ppo_train(policy_init: PolicyModel, reward: RewardModel | Callable[[Context, list[str]], float],
              contexts: Sequence[Context], cfg: TrainConfig | None = None) -> tuple[PolicyModel, PPOTrace]:
    cfg = cfg or TrainConfig()
    reward_fn = reward_fn_from_model(reward) if isinstance(reward, RewardModel) else reward
    reference = policy_init.copy()  # frozen pi_init
    policy = policy_init.copy()
    opt = Adam(policy.params, cfg.ppo_lr)
    trace = PPOTrace()
    baseline: float | None = None
    for it in range(cfg.ppo_iters):
        ro, base = rollout(policy, reference, contexts, reward_fn, cfg.samples_per_context, cfg.seed, it, baseline)
        trace.mean_reward.append(float(ro.rewards.mean()))
        baseline = 0.9 * base + 0.1 * float(ro.rewards.mean()) if baseline is not None else base
        kl = 0.0
        try:
            for _ in range(cfg.ppo_epochs):
                loss, grads, kl = ppo_loss_and_grad(policy, ro, cfg.beta, cfg.clip_eps)
                if not np.isfinite(loss):
                    raise DivergedLoss(f"PPO loss became {loss}")
                opt.step(policy.params, grads)
        except RatioOverflow as e:
            log.warning("iteration %d skipped: %s", it, e)
            trace.skipped += 1
        trace.mean_kl.append(kl)
    return policy, trace


def policy_kl(policy: PolicyModel, reference: PolicyModel, contexts: Sequence[Context]) -> float:
    """Mean over contexts of the summed per-token KL along the policy's greedy script."""
    if not contexts:
        return 0.0
    xs, seqs, masks = [], [], []
    for ctx in contexts:
        ids, m = decode_ids(policy, ctx.x, ctx.objects)
        xs.append(ctx.x)
        seqs.append(ids)
        masks.append(m)
    b = Batch.build(xs, seqs, masks)
    _, lp_logits = policy.forward(b)
    _, lq_logits = reference.forward(b)
    kl = kl_divergence(lp_logits, lq_logits, b.mask)
    return float(kl.sum() / len(contexts))
