"""Policy evaluation on the task suite and the completion-rate table."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .explore import OracleTeacher, actable_ids, run_episode
from .learn.featurize import featurize
from .learn.policy import PolicyModel, decode_ids
from .learn.tokens import templated_response, tokens_to_calls
from .protocol import render_teacher_response, task_goal_of
from .suite import Task
from .world import WorldState

COLUMNS = ("Seen Env", "Unseen Env", "Follow", "Reason", "All")


class PolicyTeacher:
    """Answers environment messages by decoding a script from the policy."""

    kind = "policy"

    def __init__(self, policy: PolicyModel, temperature: float = 0.0, seed: int = 0):
        self.policy = policy
        self.temperature = temperature
        self.rng = np.random.default_rng(seed)

    def ask(self, system_msg: str, env_msg: str, world: WorldState | None = None) -> str:
        objects = actable_ids(world) if world is not None else []
        x = featurize(env_msg, task_goal_of(env_msg), d=self.policy.dim)
        ids, _ = decode_ids(self.policy, x, objects, self.temperature, self.rng)
        calls = tokens_to_calls(self.policy.vocab.decode(ids))
        return render_teacher_response(templated_response(calls))


def in_split(seen_env: bool, category: str, column: str) -> bool:
    """Split membership; the "Follow" column holds routine tasks."""
    return {
        "Seen Env": seen_env,
        "Unseen Env": not seen_env,
        "Follow": category == "routine",
        "Reason": category == "reasoning",
        "All": True,
    }[column]


@dataclass
class TaskOutcome:
    task: str
    seed: int
    seen_env: bool
    category: str
    outcome: int
    steps: int
    scripts: int
    executable: int


@dataclass
class EvalReport:
    label: str = ""
    outcomes: list[TaskOutcome] = field(default_factory=list)

    def split(self, column: str) -> list[TaskOutcome]:
        return [o for o in self.outcomes if in_split(o.seen_env, o.category, column)]

    def rate(self, column: str) -> float | None:
        rows = self.split(column)
        return sum(o.outcome for o in rows) / len(rows) if rows else None

    @property
    def rates(self) -> dict[str, float | None]:
        return {c: self.rate(c) for c in COLUMNS}

    @property
    def executability(self) -> float | None:
        n = sum(o.scripts for o in self.outcomes)
        return sum(o.executable for o in self.outcomes) / n if n else None

    @property
    def steps_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for o in self.outcomes:
            hist[o.steps] = hist.get(o.steps, 0) + 1
        return dict(sorted(hist.items()))

    def to_json(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "rates": self.rates,
            "counts": {c: len(self.split(c)) for c in COLUMNS},
            "executability": self.executability,
            "steps_histogram": {str(k): v for k, v in self.steps_histogram.items()},
            "outcomes": [asdict(o) for o in self.outcomes],
        }


def evaluate(tasks: Iterable[Task], seeds: Sequence[int], make_actor: Callable[[Task, int], Any],
             label: str = "") -> EvalReport:
    report = EvalReport(label)
    for task in sorted(tasks, key=lambda t: t.key):
        for seed in seeds:
            ep = run_episode(task, make_actor(task, seed), seed)
            report.outcomes.append(TaskOutcome(
                task=task.key,
                seed=seed,
                seen_env=task.seen_env,
                category=task.category,
                outcome=ep.outcome,
                steps=ep.steps_used,
                scripts=ep.steps_used,
                executable=sum(1 for s in ep.steps if s.executable),
            ))
    return report


def evaluate_policy(policy: PolicyModel, tasks: Iterable[Task], seeds: Sequence[int] = (0,),
                    label: str = "policy", temperature: float = 0.0) -> EvalReport:
    return evaluate(tasks, seeds, lambda t, s: PolicyTeacher(policy, temperature, s), label)


def evaluate_oracle(tasks: Iterable[Task], seeds: Sequence[int] = (0,)) -> EvalReport:
    return evaluate(tasks, seeds, lambda t, s: OracleTeacher(t, seed=s), "oracle")


def _cell(v: float | None) -> str:
    return "-" if v is None else f"{v:.2f}"


def render_report(reports: EvalReport | Sequence[EvalReport]) -> str:
    """Fixed-width completion-rate table, one row per report."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    name_w = max([len("Model")] + [len(r.label) for r in reports])
    widths = [len(c) for c in COLUMNS]
    header = " | ".join([f"{'Model':<{name_w}}"] + [f"{c:>{w}}" for c, w in zip(COLUMNS, widths)])
    lines = [header, "-" * len(header)]
    for r in reports:
        if not r.outcomes:
            continue
        cells = [f"{_cell(r.rate(c)):>{w}}" for c, w in zip(COLUMNS, widths)]
        lines.append(" | ".join([f"{r.label:<{name_w}}"] + cells))
    for r in reports:
        if r.outcomes:
            lines.append(f"Executability ({r.label}): {_cell(r.executability)}")
    return "\n".join(lines) + "\n"


def write_report(reports: EvalReport | Sequence[EvalReport], out_dir: str | Path) -> tuple[Path, Path]:
    if isinstance(reports, EvalReport):
        reports = [reports]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt, js = out / "report.txt", out / "report.json"
    txt.write_text(render_report(reports), encoding="utf-8")
    js.write_text(json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return txt, js
