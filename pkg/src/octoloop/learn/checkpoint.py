"""Model files.

Layout (one header per line, UTF-8)::

    OCTO-MODEL v1
    encoding base64|binary
    kind policy|reward
    config <json>
    vocab <json list of tokens>          (policies only)
    param <name> <dim0,dim1,...> <nbytes>
    <payload>
    ...
    end

Each payload is the parameter in row-major little-endian float64. With
``base64`` it is one base64 line; with ``binary`` it is exactly ``nbytes``
raw bytes followed by a newline.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .policy import PolicyModel
from .reward import RewardModel
from .tokens import TokenVocab

MAGIC = b"OCTO-MODEL v1"
ENCODINGS = ("base64", "binary")


class CheckpointError(ValueError):
    pass


def _write(path: Path, kind: str, config: dict, params: dict[str, np.ndarray],
           vocab: TokenVocab | None, encoding: str) -> None:
    if encoding not in ENCODINGS:
        raise CheckpointError(f"unknown encoding {encoding!r}")
    out = [MAGIC + b"\n", f"encoding {encoding}\n".encode(), f"kind {kind}\n".encode(),
           b"config " + json.dumps(config, sort_keys=True).encode() + b"\n"]
    if vocab is not None:
        out.append(b"vocab " + json.dumps(list(vocab.tokens)).encode() + b"\n")
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = arr.tobytes(order="C")
        shape = ",".join(str(s) for s in arr.shape)
        out.append(f"param {name} {shape} {len(raw)}\n".encode())
        out.append((base64.b64encode(raw) if encoding == "base64" else raw) + b"\n")
    out.append(b"end\n")
    path.write_bytes(b"".join(out))


def _read(path: Path) -> tuple[str, dict, dict[str, np.ndarray], TokenVocab | None]:
    data = Path(path).read_bytes()
    pos = 0

    def line() -> bytes:
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise CheckpointError("truncated checkpoint")
        out = data[pos:end]
        pos = end + 1
        return out

    if line() != MAGIC:
        raise CheckpointError(f"{path}: not an OCTO-MODEL v1 file")
    header: dict[str, str] = {}
    params: dict[str, np.ndarray] = {}
    while True:
        text = line().decode("utf-8")
        if text == "end":
            break
        key, _, rest = text.partition(" ")
        if key != "param":
            header[key] = rest
            continue
        name, shape_s, nbytes_s = rest.split(" ")
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        nbytes = int(nbytes_s)
        if header.get("encoding") == "binary":
            raw = data[pos:pos + nbytes]
            pos += nbytes + 1
        else:
            raw = base64.b64decode(line())
        if len(raw) != nbytes:
            raise CheckpointError(f"parameter {name}: expected {nbytes} bytes, got {len(raw)}")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    vocab = TokenVocab(tuple(json.loads(header["vocab"]))) if "vocab" in header else None
    return header.get("kind", ""), json.loads(header.get("config", "{}")), params, vocab


def save_policy(policy: PolicyModel, path: str | Path, encoding: str = "base64", train_config: dict | None = None) -> None:
    config = {"dim": policy.dim, "hidden": policy.hidden, "max_len": policy.max_len, "train": train_config or {}}
    _write(Path(path), "policy", config, policy.params, policy.vocab, encoding)


def load_policy(path: str | Path) -> PolicyModel:
    kind, config, params, vocab = _read(Path(path))
    if kind != "policy" or vocab is None:
        raise CheckpointError(f"{path}: not a policy checkpoint")
    return PolicyModel(vocab, config["dim"], config["hidden"], config["max_len"], params=params)


def save_reward(model: RewardModel, path: str | Path, encoding: str = "base64", train_config: dict | None = None) -> None:
    _write(Path(path), "reward", {"dim": model.dim, "train": train_config or {}}, model.params, None, encoding)


def load_reward(path: str | Path) -> RewardModel:
    kind, config, params, _ = _read(Path(path))
    if kind != "reward":
        raise CheckpointError(f"{path}: not a reward checkpoint")
    return RewardModel(config["dim"], params=params)
