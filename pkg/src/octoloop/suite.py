"""Task files: a scene document plus a `task` block naming the goal."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .feedback import Goal
from .world import SchemaError, TargetCondition, WorldState, check_condition, world_from_dict

CATEGORIES = ("routine", "reasoning")


@dataclass(frozen=True)
class Task:
    key: str
    name: str
    category: str
    seen_env: bool
    goal: Goal
    doc: dict[str, Any]

    def world(self, seed: int = 0) -> WorldState:
        w = world_from_dict(self.doc)
        w.rng_seed = seed
        return w

    @property
    def scene_id(self) -> str:
        return str(self.doc.get("scene_id", ""))


def task_from_dict(doc: dict[str, Any], key: str) -> Task:
    world = world_from_dict(doc)
    raw = doc.get("task")
    if not isinstance(raw, dict):
        raise SchemaError(f"{key}: missing task block")
    category = raw.get("category", "routine")
    if category not in CATEGORIES:
        raise SchemaError(f"{key}: unknown category {category!r}")
    g = raw.get("goal", {})
    conditions = [TargetCondition.from_list(c) for c in g.get("conditions", [])]
    for c in conditions:
        try:
            check_condition(world, c)
        except KeyError as e:
            raise SchemaError(f"{key}: goal condition {c.as_list()} is invalid: {e}") from None
    goal = Goal(inventory=[str(x) for x in g.get("inventory", [])], conditions=conditions)
    return Task(
        key=key,
        name=str(raw.get("name", key)),
        category=category,
        seen_env=bool(raw.get("seen_env", True)),
        goal=goal,
        doc=doc,
    )


def load_task(path: str | Path) -> Task:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e
    return task_from_dict(doc, path.stem)


def builtin_tasks_dir() -> Path:
    return Path(str(resources.files("octoloop").joinpath("tasks")))


def load_suite(directory: str | Path | None = None) -> list[Task]:
    """All *.json task files in a directory, sorted by file name."""
    directory = Path(directory) if directory else builtin_tasks_dir()
    return [load_task(p) for p in sorted(directory.glob("*.json"))]
