"""Step/task judgments, per-task trees and the preference dataset built from them."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from .protocol import TargetStates
from .world import TargetCondition, WorldState, check_condition

PAIR_KINDS = ("sibling", "singleton")


@dataclass
class Goal:
    inventory: list[str] = field(default_factory=list)
    conditions: list[TargetCondition] = field(default_factory=list)


def _inventory_has(world: WorldState, item: str) -> bool:
    for oid in world.agent.inventory:
        if oid == item or world.objects[oid].category == item:
            return True
    return False


def judge_step(world_after: WorldState, target: TargetStates | Goal) -> tuple[int, str]:
    """1 iff every inventory expectation and condition holds; returns (bit, reason)."""
    for item in target.inventory:
        if not _inventory_has(world_after, item):
            return 0, f"{item} is not in the inventory"
    for cond in target.conditions:
        try:
            ok = check_condition(world_after, cond)
        except KeyError as e:
            return 0, f"unknown name in target state [{cond.render()}]: {e}"
        if not ok:
            return 0, f"target state not reached: [{cond.render()}]"
    return 1, ""


def judge_task(world_final: WorldState, goal: Goal, steps_used: int, budget: int = 10) -> int:
    if steps_used > budget:
        return 0
    return judge_step(world_final, goal)[0]


# ---------------------------------------------------------------------------
# trees


@dataclass
class StepNode:
    node_id: str
    parent_id: str | None
    instruction: str
    response: str
    env_msg: str
    step_success: int
    world_before: str
    world_after: str
    effective: int = 0
    allowed_objects: tuple[str, ...] = ()
    order: int = 0


@dataclass
class TaskTree:
    task_name: str
    nodes: dict[str, StepNode]
    root_id: str
    task_success: int
    steps_used: int

    def children(self, node_id: str) -> list[StepNode]:
        return sorted((n for n in self.nodes.values() if n.parent_id == node_id), key=lambda n: n.order)

    def step_nodes(self) -> list[StepNode]:
        return sorted((n for n in self.nodes.values() if n.node_id != self.root_id), key=lambda n: n.order)


def label_tree(tree: TaskTree) -> TaskTree:
    """Apply the task-level override: a failed task zeroes every effective label."""
    for n in tree.nodes.values():
        if n.node_id == tree.root_id:
            continue
        n.effective = n.step_success if tree.task_success else 0
    return tree


@dataclass
class RewardExample:
    env_msg: str
    instruction: str
    response_i: str
    response_j: str
    preferred: int
    pair_kind: str


@dataclass
class RewardDataset:
    examples: list[RewardExample] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def pairs(self) -> list[RewardExample]:
        return [e for e in self.examples if e.pair_kind == "sibling"]

    def singletons(self) -> list[RewardExample]:
        return [e for e in self.examples if e.pair_kind == "singleton"]

    def write_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as f:
            for e in self.examples:
                f.write(json.dumps(asdict(e), ensure_ascii=False) + "\n")
        meta = path.with_suffix(".meta.json")
        meta.write_text(json.dumps(self.provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> RewardDataset:
        path = Path(path)
        examples = [RewardExample(**json.loads(line)) for line in path.read_text("utf-8").splitlines() if line.strip()]
        meta = path.with_suffix(".meta.json")
        prov = json.loads(meta.read_text("utf-8")) if meta.exists() else {}
        return cls(examples, prov)


def sibling_groups(tree: TaskTree) -> list[list[StepNode]]:
    groups: dict[str, list[StepNode]] = {}
    for n in tree.step_nodes():
        groups.setdefault(n.parent_id, []).append(n)
    return list(groups.values())


def build_reward_dataset(trees: Iterable[TaskTree], provenance: dict | None = None) -> RewardDataset:
    examples: list[RewardExample] = []
    seen: set[tuple[str, str, str, int]] = set()

    def add(e: RewardExample) -> None:
        # a comparison is the same whichever slot holds the winner
        good, bad = (e.response_i, e.response_j) if e.preferred == 0 or not e.response_j else (e.response_j, e.response_i)
        key = (e.env_msg, good, bad, e.preferred if not e.response_j else -1)
        if key not in seen:
            seen.add(key)
            examples.append(e)

    for tree in sorted(trees, key=lambda t: t.task_name):
        flip = 0
        for group in sibling_groups(tree):
            wins = [n for n in group if n.effective == 1]
            losses = [n for n in group if n.effective == 0]
            ctx = group[0]
            if wins and losses:
                for w in wins:
                    for l in losses:
                        # alternate the slot of the winner so neither index is privileged
                        if flip % 2 == 0:
                            add(RewardExample(ctx.env_msg, ctx.instruction, w.response, l.response, 0, "sibling"))
                        else:
                            add(RewardExample(ctx.env_msg, ctx.instruction, l.response, w.response, 1, "sibling"))
                        flip += 1
            else:
                for n in group:
                    add(RewardExample(n.env_msg, n.instruction, n.response, "", n.effective, "singleton"))
    return RewardDataset(examples, dict(provenance or {}))

