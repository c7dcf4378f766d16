"""Autoregressive token policy with one tanh layer and hand-written gradients.

For a context vector x and sequence t_0 = BOS, t_1, ..., t_L = EOS:

    a   = W x_hat + b                      (x_hat = x / |x|)
    z_l = tanh(a + E[t_{l-1}] + P[l-1])    l = 1..L
    p(t_l | x, t_<l) = softmax(U z_l + c)

so log p(sequence) is exactly the sum of the per-token log-probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..actions import KINDS, OBJECT_SLOTS
from .config import DivergedLoss, TrainConfig
from .featurize import normalize
from .tokens import BOS, EOS, SEP, SPECIALS, TokenVocab

MAX_STATEMENTS = 4
PARAM_NAMES = ("W", "b", "E", "P", "U", "c")


def log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    m = np.max(logits, axis=-1, keepdims=True)
    return logits - (m + np.log(np.sum(np.exp(logits - m), axis=-1, keepdims=True)))


@dataclass
class Batch:
    """Flattened positions of several sequences; row t predicts targ[t]."""

    xhat: np.ndarray  # (N, d)
    ex: np.ndarray  # (T,) example index of each position
    pos: np.ndarray  # (T,)
    prev: np.ndarray  # (T,)
    targ: np.ndarray  # (T,)
    mask: np.ndarray | None = None  # (T, V) allowed next tokens

    @classmethod
    def build(cls, xs: Sequence[np.ndarray], seqs: Sequence[Sequence[int]],
              masks: Sequence[np.ndarray] | None = None) -> Batch:
        ex, pos, prev, targ = [], [], [], []
        for i, ids in enumerate(seqs):
            n = len(ids) - 1
            ex += [i] * n
            pos += list(range(n))
            prev += list(ids[:-1])
            targ += list(ids[1:])
        mask = np.concatenate(list(masks), axis=0) if masks is not None else None
        return cls(
            np.stack([normalize(x) for x in xs]) if len(xs) else np.zeros((0, 0)),
            np.array(ex, dtype=np.int64),
            np.array(pos, dtype=np.int64),
            np.array(prev, dtype=np.int64),
            np.array(targ, dtype=np.int64),
            mask,
        )

    @property
    def n_examples(self) -> int:
        return self.xhat.shape[0]


class PolicyModel:
    def __init__(self, vocab: TokenVocab, dim: int = 4096, hidden: int = 64, max_len: int = 16,
                 seed: int = 0, params: dict[str, np.ndarray] | None = None):
        self.vocab = vocab
        self.dim, self.hidden, self.max_len = dim, hidden, max_len
        if params is None:
            rng = np.random.default_rng(seed)
            V = len(vocab)
            params = {
                "W": rng.normal(0.0, 1.0, (hidden, dim)),
                "b": np.zeros(hidden),
                "E": rng.normal(0.0, 0.5, (V, hidden)),
                "P": rng.normal(0.0, 0.5, (max_len, hidden)),
                # zero readout: every next-token distribution starts uniform
                "U": np.zeros((V, hidden)),
                "c": np.zeros(V),
            }
        self.params = params

    def copy(self) -> PolicyModel:
        return PolicyModel(self.vocab, self.dim, self.hidden, self.max_len,
                           params={k: v.copy() for k, v in self.params.items()})

    # -- forward / backward ------------------------------------------------

    def forward(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        a = batch.xhat @ p["W"].T + p["b"]
        z = np.tanh(a[batch.ex] + p["E"][batch.prev] + p["P"][batch.pos])
        logits = z @ p["U"].T + p["c"]
        return z, logits

    def backward(self, batch: Batch, z: np.ndarray, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        g = {k: np.zeros_like(v) for k, v in p.items()}
        g["U"] = dlogits.T @ z
        g["c"] = dlogits.sum(axis=0)
        dpre = (dlogits @ p["U"]) * (1.0 - z * z)
        np.add.at(g["E"], batch.prev, dpre)
        np.add.at(g["P"], batch.pos, dpre)
        da = np.zeros((batch.n_examples, self.hidden))
        np.add.at(da, batch.ex, dpre)
        g["W"] = da.T @ batch.xhat
        g["b"] = da.sum(axis=0)
        return g

    def log_probs(self, batch: Batch, masked: bool = True) -> np.ndarray:
        """(T, V) next-token log-probabilities."""
        _, logits = self.forward(batch)
        return log_softmax(logits, batch.mask if masked else None)

    def token_logprobs(self, x: np.ndarray, ids: Sequence[int], masks: np.ndarray | None = None) -> np.ndarray:
        b = Batch.build([x], [ids], None if masks is None else [masks])
        lp = self.log_probs(b)
        return lp[np.arange(len(b.targ)), b.targ]

    def sequence_logprob(self, x: np.ndarray, ids: Sequence[int], masks: np.ndarray | None = None) -> float:
        """log p(t_1..t_L | x), computed in one pass over the whole sequence."""
        b = Batch.build([x], [ids], None if masks is None else [masks])
        lp = self.log_probs(b)
        return float(lp[np.arange(len(b.targ)), b.targ].sum())

    def next_distribution(self, x: np.ndarray, prefix: Sequence[int], mask: np.ndarray | None = None) -> np.ndarray:
        """Probabilities of the token following `prefix`."""
        xhat = normalize(x)
        p = self.params
        l = len(prefix) - 1
        z = np.tanh(p["W"] @ xhat + p["b"] + p["E"][prefix[-1]] + p["P"][l])
        lp = log_softmax(z @ p["U"].T + p["c"], mask)
        return np.exp(lp)


# ---------------------------------------------------------------------------
# SFT loss


def sft_loss_and_grad(policy: PolicyModel, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean over sequences of the summed token negative log-likelihood (unmasked)."""
    z, logits = policy.forward(batch)
    lp = log_softmax(logits)
    rows = np.arange(len(batch.targ))
    n = max(batch.n_examples, 1)
    loss = -float(lp[rows, batch.targ].sum()) / n
    dlogits = np.exp(lp)
    dlogits[rows, batch.targ] -= 1.0
    dlogits /= n
    return loss, policy.backward(batch, z, dlogits)


# ---------------------------------------------------------------------------
# grammar mask and decoding


def allowed_object_ids(vocab: TokenVocab, objects: Sequence[str]) -> list[int]:
    return sorted(vocab.index[o] for o in set(objects) if o in vocab.index and vocab.is_object(vocab.index[o]))


def grammar_mask(vocab: TokenVocab, prefix: Sequence[int], objects: Sequence[int],
                 max_statements: int = MAX_STATEMENTS) -> np.ndarray:
    """Tokens that keep `prefix` a prefix of a well-formed script."""
    mask = np.zeros(len(vocab), dtype=bool)
    n_stmt, need = 0, 0
    for t in prefix[1:]:
        if vocab.is_kind(t):
            n_stmt += 1
            need = len(OBJECT_SLOTS[vocab.tokens[t]])
        elif vocab.is_object(t):
            need -= 1
    last = vocab.tokens[prefix[-1]]
    if last in (BOS, SEP):
        for k in range(len(vocab)):
            if vocab.is_kind(k):
                kind = vocab.tokens[k]
                if kind != "registry" and (objects or not OBJECT_SLOTS[kind]):
                    mask[k] = True
    elif need > 0:
        mask[list(objects)] = True
    else:
        mask[vocab.index[EOS]] = True
        if n_stmt < max_statements:
            mask[vocab.index[SEP]] = True
    return mask


def decode_ids(policy: PolicyModel, x: np.ndarray, objects: Sequence[str], temperature: float = 0.0,
               rng: np.random.Generator | None = None) -> tuple[list[int], np.ndarray]:
    """Masked decoding; returns token ids and the (L, V) masks used at each step."""
    vocab = policy.vocab
    obj_ids = allowed_object_ids(vocab, objects)
    ids = [vocab.index[BOS]]
    masks = []
    while ids[-1] != vocab.index[EOS]:
        m = grammar_mask(vocab, ids, obj_ids)
        masks.append(m)
        probs = policy.next_distribution(x, ids, m)
        if temperature <= 0:
            nxt = int(np.argmax(probs))
        else:
            logits = np.log(np.where(m, probs, 1.0)) / temperature
            logits = np.where(m, logits, -np.inf)
            q = np.exp(logits - logits.max())
            q /= q.sum()
            nxt = int((rng or np.random.default_rng()).choice(len(q), p=q))
        ids.append(nxt)
    return ids, np.stack(masks)


def sequence_masks(vocab: TokenVocab, ids: Sequence[int], objects: Sequence[str]) -> np.ndarray:
    obj_ids = allowed_object_ids(vocab, objects)
    return np.stack([grammar_mask(vocab, ids[:l], obj_ids) for l in range(1, len(ids))])


# ---------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k in params:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)

    def state(self) -> tuple:
        return ({k: v.copy() for k, v in self.m.items()}, {k: v.copy() for k, v in self.v.items()}, self.t)

    def load(self, state: tuple) -> None:
        self.m, self.v, self.t = state


def _finite(loss: float) -> float:
    if not np.isfinite(loss):
        raise DivergedLoss(f"loss became {loss}")
    return loss


def descend(params: dict[str, np.ndarray], loss_and_grad, lr: float, epochs: int,
            target: float | None = None) -> list[float]:
    """Full-batch Adam that rejects any step raising the loss (and halves lr).

    The returned loss history is therefore nonincreasing.
    """
    opt = Adam(params, lr)
    loss, grads = loss_and_grad()
    history = [_finite(loss)]
    for _ in range(epochs):
        if target is not None and loss <= target:
            break
        saved = ({k: v.copy() for k, v in params.items()}, opt.state())
        opt.step(params, grads)
        new_loss, new_grads = loss_and_grad()
        if not np.isfinite(new_loss) or new_loss > loss:
            for k, v in saved[0].items():
                params[k][...] = v
            opt.load(saved[1])
            opt.lr *= 0.5
            if opt.lr < 1e-10:
                break
            continue
        loss, grads = new_loss, new_grads
        history.append(loss)
    return history


@dataclass
class SFTExample:
    x: np.ndarray
    tokens: list[str]
    objects: list[str]


def build_vocab(examples: Sequence[SFTExample], extra_objects: Sequence[str] = ()) -> TokenVocab:
    objs = set(extra_objects)
    for e in examples:
        objs.update(e.objects)
        objs.update(t for t in e.tokens if t not in KINDS and t not in SPECIALS)
    return TokenVocab.build(objs)


def sft_train(examples: Sequence[SFTExample], cfg: TrainConfig | None = None,
              vocab: TokenVocab | None = None) -> tuple[PolicyModel, list[float]]:
    if not examples:
        raise ValueError("sft_train needs at least one example")
    cfg = cfg or TrainConfig()
    vocab = vocab or build_vocab(examples)
    policy = PolicyModel(vocab, cfg.dim, cfg.hidden, cfg.max_len, cfg.seed)
    batch = Batch.build([e.x for e in examples], [vocab.encode(e.tokens) for e in examples])
    history = descend(policy.params, lambda: sft_loss_and_grad(policy, batch), cfg.lr, cfg.epochs, target=1e-4)
    return policy, history


def exact_match_rate(policy: PolicyModel, examples: Sequence[SFTExample]) -> float:
    if not examples:
        return 0.0
    hits = 0
    for e in examples:
        ids, _ = decode_ids(policy, e.x, e.objects)
        hits += policy.vocab.decode(ids) == list(e.tokens)
    return hits / len(examples)
