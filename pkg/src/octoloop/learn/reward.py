"""Linear reward model over hashed instruction/response text."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dsl import ParseError, parse
from ..feedback import RewardDataset, RewardExample
from ..protocol import MalformedResponse, parse_teacher_response
from .config import TrainConfig
from .featurize import fnv1a_32, normalize, tokenize
from .policy import descend


def response_view(response: str) -> str:
    """The part of a response the reward model sees: code statements and target states.

    Free-form prose is dropped so that teacher text and templated policy text
    with the same code and targets score identically. Unparseable responses are
    kept verbatim.
    """
    try:
        resp = parse_teacher_response(response)
        script = parse(resp.code)
    except (MalformedResponse, ParseError):
        return response
    ts = resp.target_states
    lines = [s.render() for s in script.statements]
    lines.append("Inventory: " + (", ".join(ts.inventory) if ts.inventory else "None"))
    lines.extend(c.render() for c in ts.conditions)
    return "\n".join(lines)


def reward_features(instruction: str, response: str, d: int) -> np.ndarray:
    """Hashed counts of instruction tokens, a separator, response tokens, and
    every distinct (instruction token, response token) pair.

    The pair terms let a linear head prefer different responses under
    different instructions.
    """
    inst = tokenize(instruction)
    resp = tokenize(response_view(response))
    x = np.zeros(d, dtype=np.float64)
    for tok in inst + ["SEP"] + resp:
        x[fnv1a_32(tok) % d] += 1.0
    rset = sorted(set(resp))
    for a in sorted(set(inst)):
        for b in rset:
            x[fnv1a_32(f"{a}|{b}") % d] += 1.0
    return normalize(x)


def _softplus(v: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, v)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


class RewardModel:
    def __init__(self, dim: int = 4096, params: dict[str, np.ndarray] | None = None):
        self.dim = dim
        self.params = params or {"w": np.zeros(dim), "b": np.zeros(1)}

    def features(self, instruction: str, response: str) -> np.ndarray:
        return reward_features(instruction, response, self.dim)

    def score_features(self, phi: np.ndarray) -> np.ndarray:
        return phi @ self.params["w"] + self.params["b"][0]

    def score(self, instruction: str, response: str) -> float:
        return float(self.score_features(self.features(instruction, response)))


@dataclass
class RewardBatch:
    win: np.ndarray  # (Np, d)
    lose: np.ndarray  # (Np, d)
    single: np.ndarray  # (Ns, d)
    labels: np.ndarray  # (Ns,)


def winner_loser(e: RewardExample) -> tuple[str, str]:
    return (e.response_i, e.response_j) if e.preferred == 0 else (e.response_j, e.response_i)


def make_batch(model: RewardModel, examples: Sequence[RewardExample]) -> RewardBatch:
    d = model.dim
    win, lose, single, labels = [], [], [], []
    for e in examples:
        if e.pair_kind == "sibling":
            w, l = winner_loser(e)
            win.append(model.features(e.instruction, w))
            lose.append(model.features(e.instruction, l))
        else:
            single.append(model.features(e.instruction, e.response_i))
            labels.append(float(e.preferred))
    z = np.zeros((0, d))
    return RewardBatch(np.array(win) if win else z, np.array(lose) if lose else z,
                       np.array(single) if single else z, np.array(labels))


def reward_loss_and_grad(model: RewardModel, batch: RewardBatch, singleton_weight: float = 0.5,
                         l2: float = 0.0) -> tuple[float, dict[str, np.ndarray]]:
    """Pairwise -log sigmoid(r_w - r_l) plus weighted BCE on singletons, plus L2 on w."""
    w = model.params["w"]
    gw = l2 * w
    gb = np.zeros(1)
    loss = 0.5 * l2 * float(w @ w)
    if len(batch.win):
        m = model.score_features(batch.win) - model.score_features(batch.lose)
        loss += float(np.mean(_softplus(-m)))
        dm = -_sigmoid(-m) / len(m)
        gw = gw + (batch.win - batch.lose).T @ dm
    if len(batch.single) and singleton_weight > 0:
        r = model.score_features(batch.single)
        y = batch.labels
        loss += singleton_weight * float(np.mean(_softplus(r) - y * r))
        dr = singleton_weight * (_sigmoid(r) - y) / len(r)
        gw = gw + batch.single.T @ dr
        gb = gb + dr.sum()
    return loss, {"w": gw, "b": gb}


def pairwise_accuracy(model: RewardModel, examples: Sequence[RewardExample]) -> float:
    pairs = [e for e in examples if e.pair_kind == "sibling"]
    if not pairs:
        return float("nan")
    hits = 0
    for e in pairs:
        w, l = winner_loser(e)
        hits += model.score(e.instruction, w) > model.score(e.instruction, l)
    return hits / len(pairs)


@dataclass
class RewardReport:
    n_train: int
    n_heldout: int
    train_accuracy: float
    heldout_accuracy: float
    history: list[float] = field(default_factory=list)


def split_heldout(examples: Sequence[RewardExample], fraction: float, seed: int):
    """Deterministic split; only sibling pairs are held out."""
    pair_idx = [i for i, e in enumerate(examples) if e.pair_kind == "sibling"]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pair_idx))
    n_hold = int(round(fraction * len(pair_idx)))
    held = {pair_idx[i] for i in order[:n_hold]}
    train = [e for i, e in enumerate(examples) if i not in held]
    test = [e for i, e in enumerate(examples) if i in held]
    return train, test


def reward_train(ds: RewardDataset | Sequence[RewardExample], cfg: TrainConfig | None = None
                 ) -> tuple[RewardModel, RewardReport]:
    examples = list(ds.examples if isinstance(ds, RewardDataset) else ds)
    if not examples:
        raise ValueError("reward_train needs a nonempty dataset")
    cfg = cfg or TrainConfig()
    train, test = split_heldout(examples, cfg.holdout, cfg.seed)
    model = RewardModel(cfg.dim)
    batch = make_batch(model, train)
    history = descend(model.params,
                      lambda: reward_loss_and_grad(model, batch, cfg.singleton_weight, cfg.reward_l2),
                      cfg.reward_lr, cfg.reward_epochs)
    report = RewardReport(len(train), len(test), pairwise_accuracy(model, train),
                          pairwise_accuracy(model, test), history)
    return model, report
