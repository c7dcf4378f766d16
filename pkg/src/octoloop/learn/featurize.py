"""Hashed bag-of-words features (FNV-1a, 32 bit)."""
from __future__ import annotations

import re

import numpy as np

DEFAULT_DIM = 4096
FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193
# underscores stay inside tokens so object ids like fridge_33 hash as one unit
_TOKEN_RE = re.compile(r"[0-9a-z_]+")


def fnv1a_32(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFF
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def featurize(env_msg: str, task_goal: str = "", d: int = DEFAULT_DIM) -> np.ndarray:
    """Token counts hashed into `d` buckets; the goal text is counted alongside the message."""
    x = np.zeros(d, dtype=np.float64)
    for tok in tokenize(env_msg) + tokenize(task_goal):
        x[fnv1a_32(tok) % d] += 1.0
    return x


def normalize(x: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(x))
    return x / n if n > 0 else x.copy()
