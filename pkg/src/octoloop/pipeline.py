"""Glue between collected data and the learning stack, plus the desk-scale end-to-end run."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .bench import EvalReport, evaluate_policy
from .explore import Collection, OracleTeacher, collect_dataset
from .feedback import RewardDataset, build_reward_dataset
from .learn.config import TrainConfig
from .learn.featurize import featurize
from .learn.policy import PolicyModel, SFTExample, exact_match_rate, sft_train
from .learn.ppo import Context, PPOTrace, ppo_train
from .learn.reward import RewardModel, RewardReport, reward_train
from .learn.tokens import TokenVocab
from .suite import Task
from .teacher import TeacherConfig

NOISY_TEMPERATURE = 0.5


def suite_vocab(tasks: Iterable[Task]) -> TokenVocab:
    """Vocabulary covering every object in every task scene."""
    objects: set[str] = set()
    for t in tasks:
        objects.update(t.world(0).objects)
    return TokenVocab.build(objects)


def sft_examples(records: Sequence[dict[str, Any]], dim: int = 4096) -> list[SFTExample]:
    return [SFTExample(featurize(r["env_msg"], r["goal"], d=dim), list(r["tokens"]), list(r["allowed_objects"]))
            for r in records]


def ppo_contexts(records: Sequence[dict[str, Any]], dim: int = 4096) -> list[Context]:
    return [Context(featurize(r["env_msg"], r["goal"], d=dim), r["instruction"], list(r["allowed_objects"]))
            for r in records]


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text("utf-8").splitlines() if line.strip()]


def noisy_collection(tasks: Sequence[Task], seeds: Sequence[int], temperature: float = NOISY_TEMPERATURE,
                     attempts_per_step: int = 2, out_dir: str | Path | None = None) -> Collection:
    """Perturbed-oracle exploration with two attempts per step, which yields sibling branches."""
    return collect_dataset(tasks, TeacherConfig(n_parallel=1), seeds, out_dir, attempts_per_step,
                           teacher_factory=lambda t, s: OracleTeacher(t, temperature, s))


@dataclass
class DeskRun:
    sft_policy: PolicyModel
    sft_history: list[float]
    sft_accuracy: float
    reward_model: RewardModel
    reward_report: RewardReport
    reward_dataset: RewardDataset
    rlef_policy: PolicyModel
    trace: PPOTrace
    sft_eval: EvalReport
    rlef_eval: EvalReport


def desk_pipeline(tasks: Sequence[Task], cfg: TrainConfig | None = None,
                  reward_seeds: Sequence[int] = (0, 1, 2)) -> DeskRun:
    """Train on routine seen-scene tasks, then evaluate SFT and SFT+PPO on the whole suite.

    Reasoning tasks and unseen scenes never contribute training data.
    """
    cfg = cfg or TrainConfig()
    train = [t for t in tasks if t.seen_env and t.category == "routine"]
    clean = collect_dataset(train, TeacherConfig(n_parallel=1), [cfg.seed])
    examples = sft_examples(clean.sft, cfg.dim)
    vocab = suite_vocab(tasks)
    policy, hist = sft_train(examples, cfg, vocab)

    noisy = noisy_collection(train, [cfg.seed + s for s in reward_seeds])
    ds = build_reward_dataset(noisy.trees, {"seeds": [cfg.seed + s for s in reward_seeds]})
    rm, rep = reward_train(ds, cfg)

    tuned, trace = ppo_train(policy, rm, ppo_contexts(clean.sft, cfg.dim), cfg)
    return DeskRun(
        sft_policy=policy,
        sft_history=hist,
        sft_accuracy=exact_match_rate(policy, examples),
        reward_model=rm,
        reward_report=rep,
        reward_dataset=ds,
        rlef_policy=tuned,
        trace=trace,
        sft_eval=evaluate_policy(policy, tasks, (cfg.seed,), "SFT"),
        rlef_eval=evaluate_policy(tuned, tasks, (cfg.seed,), "SFT+RLEF"),
    )
