"""Teacher-driven episodes, the breadth-first oracle teacher, and trajectory files."""
from __future__ import annotations

import json
import logging
import random
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .actions import (
    OBJECT_SLOTS,
    UNARY_ACTIONS,
    ActionCall,
    _CLEARS,
    execute,
    state_effect,
    unquote,
)
from .dsl import ParseError, Script, ground_calls, grounded_script, parse, render, resolve_names, run
from .feedback import Goal, StepNode, TaskTree, judge_step, judge_task, label_tree
from .protocol import (
    EpisodeMemory,
    MalformedResponse,
    TargetStates,
    TeacherResponse,
    parse_teacher_response,
    prompt_hash,
    render_env_message,
    render_teacher_response,
    system_message,
)
from .suite import Task, task_from_dict
from .teacher import ReplayTeacher, TeacherConfig, TeacherError, make_teacher
from .world import (
    AGENT,
    ObservationConfig,
    TargetCondition,
    WorldState,
    check_condition,
    restore,
    restore_into,
    snapshot,
    state_hash,
    visible_ids,
    world_to_dict,
)

log = logging.getLogger(__name__)

MAX_STEPS = 10
PLAN_DEPTH = 12


class NoPlanFound(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# breadth-first oracle


def goal_met(world: WorldState, goal: Goal) -> bool:
    return judge_step(world, goal)[0] == 1


def _search_key(world: WorldState) -> str:
    doc = world_to_dict(world)
    for k in ("step_counter", "rng_seed"):
        doc.pop(k)
    doc["agent"].pop("name_registry")
    doc["relations"] = sorted(doc["relations"])
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _precheck(world: WorldState, goal: Goal) -> None:
    for item in goal.inventory:
        if not any(o.size_class == "small" and item in (o.id, o.category) for o in world.objects.values()):
            raise NoPlanFound(f"no graspable object matches inventory item {item!r}")
    for c in goal.conditions:
        try:
            holds = check_condition(world, c)
        except KeyError as e:
            raise NoPlanFound(f"goal condition [{c.render()}] names something unknown: {e}") from None
        if holds:
            continue
        if c.format == "unary":
            if c.value == 1 and c.state_or_relation not in world.objects[c.subject].states:
                raise NoPlanFound(f"{c.subject} has no {c.state_or_relation} state")
        elif c.value == 1:
            rel = c.state_or_relation
            creatable = rel in ("inside", "ontop") or (rel == "nextto" and AGENT in (c.subject, c.object))
            if not creatable:
                raise NoPlanFound(f"no action produces the relation {rel!r}")


def _goal_objects(world: WorldState, goal: Goal) -> set[str]:
    ids = set()
    for item in goal.inventory:
        ids |= {o.id for o in world.objects.values() if item in (o.id, o.category)}
    for c in goal.conditions:
        ids.add(c.subject)
        if c.object:
            ids.add(c.object)
    ids.discard(AGENT)
    return ids


def _candidates(world: WorldState, goal: Goal, movers: set[str]) -> list[ActionCall]:
    """Calls worth expanding, in applicable_actions order.

    Only goal objects are grasped, placed or state-changed; a container is
    opened only when it shuts in a goal object or is a goal destination.
    Any large object may be driven to.
    """
    ids = sorted(world.objects)
    unary_goals = {(c.subject, c.state_or_relation, c.value) for c in goal.conditions if c.format == "unary"}
    places = {(c.subject, c.state_or_relation, c.object) for c in goal.conditions
              if c.format == "binary" and c.value == 1 and c.state_or_relation in ("inside", "ontop")}
    openers = {o for s, r, o in places if r == "inside"}
    for oid in movers:
        openers.update(world.inside_ancestors(oid))
    out = []
    for oid in ids:
        if oid in movers:
            out.append(ActionCall.grounded("EasyGrasp", oid))
    out += [ActionCall.grounded("MoveBot", oid) for oid in ids]
    if world.agent.inventory:
        top = world.agent.inventory[-1]
        for kind, rel in (("put_ontop", "ontop"), ("put_inside", "inside")):
            out += [ActionCall.grounded(kind, top, o2) for o2 in ids if (top, rel, o2) in places]
    for kind in UNARY_ACTIONS:
        state, value = state_effect(kind)
        cleared = _CLEARS.get(kind)
        for oid in ids:
            wanted = (oid, state, value) in unary_goals or (cleared and (oid, cleared, 0) in unary_goals)
            if wanted or (kind == "open" and oid in openers):
                out.append(ActionCall.grounded(kind, oid))
    return out


def plan_actions(world: WorldState, goal: Goal, max_depth: int = PLAN_DEPTH) -> list[ActionCall]:
    """Shortest action sequence reaching `goal` over goal-relevant calls.

    Ties are broken by kind order then object id, as in applicable_actions.
    """
    start = world.copy()
    if goal_met(start, goal):
        return []
    _precheck(start, goal)
    movers = _goal_objects(start, goal)
    frontier: deque[tuple[WorldState, list[ActionCall]]] = deque([(start, [])])
    seen = {_search_key(start)}
    while frontier:
        w, path = frontier.popleft()
        if len(path) >= max_depth:
            continue
        for call in _candidates(w, goal, movers):
            nxt = w.copy()
            if not execute(nxt, call).success:
                continue
            key = _search_key(nxt)
            if key in seen:
                continue
            seen.add(key)
            new_path = path + [call]
            if goal_met(nxt, goal):
                return new_path
            frontier.append((nxt, new_path))
    raise NoPlanFound(f"goal unreachable within {max_depth} actions")


def objects_of(call: ActionCall) -> list[str]:
    return [unquote(call.args[i]) for i in OBJECT_SLOTS[call.kind]]


_VERBS = {
    "MoveBot": "Move to the {0}",
    "EasyGrasp": "Grasp the {0}",
    "put_ontop": "Put the {0} on the {1}",
    "put_inside": "Put the {0} inside the {1}",
    "toggle_on": "Turn on the {0}",
    "toggle_off": "Turn off the {0}",
    "donothing": "Wait",
}


def describe(call: ActionCall) -> str:
    template = _VERBS.get(call.kind, call.kind.capitalize() + " the {0}")
    return template.format(*objects_of(call))


def script_for(call: ActionCall, comment: str | None = None) -> Script:
    """One action followed by donothing, with its registry prelude."""
    calls = [call] if call.kind == "donothing" else [call, ActionCall.grounded("donothing")]
    return grounded_script(calls, comment)


def oracle_plan(world: WorldState, goal: Goal, max_depth: int = PLAN_DEPTH) -> list[Script]:
    return [script_for(c, describe(c)) for c in plan_actions(world, goal, max_depth)]


def expected_targets(world: WorldState, call: ActionCall) -> TargetStates:
    """Conditions `call` is meant to establish, plus the inventory it leaves."""
    after = world.copy()
    execute(after, call)
    objs = objects_of(call)
    conds: list[TargetCondition] = []
    if call.kind == "MoveBot":
        conds.append(TargetCondition.binary(AGENT, "nextto", objs[0], 1))
    elif call.kind == "put_ontop":
        conds.append(TargetCondition.binary(objs[0], "ontop", objs[1], 1))
    elif call.kind == "put_inside":
        conds.append(TargetCondition.binary(objs[0], "inside", objs[1], 1))
    elif call.kind in UNARY_ACTIONS:
        state, value = state_effect(call.kind)
        conds.append(TargetCondition.unary(objs[0], state, value))
    inventory = list(after.agent.inventory)
    if call.kind == "EasyGrasp" and objs[0] not in inventory:
        inventory.append(objs[0])
    return TargetStates(inventory=inventory, conditions=conds)


def response_for(world: WorldState, plan: list[ActionCall], act: ActionCall | None = None,
                 targets: TargetStates | None = None) -> TeacherResponse:
    """Templated four-section answer for the next planned action."""
    act = act or plan[0]
    n = len(plan)
    explain = (
        f"{n} action{'s' if n != 1 else ''} remain before the goal holds. "
        f"The next subtask is: {describe(plan[0]).lower()}."
    )
    return TeacherResponse(
        explain=explain,
        subtasks=[describe(c) for c in plan],
        code=render(script_for(act, describe(act))),
        target_states=targets if targets is not None else expected_targets(world, act),
    )


def idle_response(reason: str) -> TeacherResponse:
    return TeacherResponse(
        explain=f"No sequence of actions reaches the goal from here ({reason}).",
        subtasks=["Wait for the scene to change"],
        code=render(script_for(ActionCall.grounded("donothing"))),
        target_states=TargetStates(),
    )


PERTURBATIONS = ("object", "kind", "skip", "malformed")


class OracleTeacher:
    """Plans from the live world on every call.

    With temperature > 0 some answers are deliberately wrong (a different
    object or action, a skipped step, a missing section) so that episodes
    contain failed siblings. The perturbation stream is seeded by
    (seed, task, call index) and is therefore reproducible.
    """

    kind = "oracle"

    def __init__(self, task: Task, temperature: float = 0.0, seed: int = 0):
        self.task = task
        self.temperature = temperature
        self.seed = seed
        self.calls = 0

    def respond(self, world: WorldState) -> tuple[TeacherResponse, str | None]:
        self.calls += 1
        try:
            plan = plan_actions(world, self.task.goal)
        except NoPlanFound as e:
            return idle_response(str(e)), None
        if not plan:
            return idle_response("the goal already holds"), None
        rng = random.Random(f"{self.seed}:{self.task.key}:{self.calls}")
        if self.temperature <= 0 or rng.random() >= min(1.0, self.temperature):
            return response_for(world, plan), None
        mode = rng.choice(PERTURBATIONS)
        act = plan[0]
        intended = expected_targets(world, act)
        if mode == "object":
            objs = objects_of(act)
            others = [o for o in visible_ids(world) if o not in objs]
            if others:
                objs[0] = rng.choice(sorted(others))
                act = ActionCall.grounded(act.kind, *objs)
            return response_for(world, plan, act, intended), mode
        if mode == "kind":
            obj = objects_of(act)[0]
            choices = [k for k in UNARY_ACTIONS if k != act.kind]
            act = ActionCall.grounded(rng.choice(choices), obj)
            return response_for(world, plan, act, intended), mode
        if mode == "skip" and len(plan) > 1:
            act = plan[1]
            return response_for(world, plan, act, expected_targets(world, act)), mode
        return response_for(world, plan), "malformed"

    def ask(self, system_msg: str, env_msg: str, world: WorldState | None = None) -> str:
        if world is None:
            raise TeacherError("the oracle teacher needs the world state")
        resp, mode = self.respond(world)
        text = render_teacher_response(resp)
        if mode == "malformed":
            text = text.split("Target States:")[0].rstrip("\n") + "\n"
        return text


# ---------------------------------------------------------------------------
# episodes


@dataclass
class StepRecord:
    step: int
    attempt: int
    instruction: str
    env_msg: str
    response: str
    parsed: bool
    code: str
    grounded: list[list[str]]
    halted_at: int | None
    error_code: str | None
    error_text: str
    executable: bool
    step_success: int
    judge_reason: str
    world_before: str
    world_after: str
    allowed_objects: list[str]
    subtask: str = ""


@dataclass
class Episode:
    task_key: str
    task_name: str
    seed: int
    teacher_kind: str
    prompt_hash: str
    steps: list[StepRecord] = field(default_factory=list)
    alternatives: list[StepRecord] = field(default_factory=list)
    outcome: int = 0
    valid: bool = True
    invalid_reason: str = ""
    final_hash: str = ""
    step_counter: int = 0

    @property
    def steps_used(self) -> int:
        return len(self.steps)

    def all_records(self) -> list[StepRecord]:
        """Main-line steps with their alternatives, in the order the teacher was asked."""
        alts: dict[int, list[StepRecord]] = {}
        for a in self.alternatives:
            alts.setdefault(a.step, []).append(a)
        out = []
        for s in self.steps:
            out.append(s)
            out.extend(alts.get(s.step, []))
        return out


def actable_ids(world: WorldState) -> list[str]:
    """Objects a script may name this step: what is visible plus what is held."""
    return visible_ids(world) + list(world.agent.inventory)


def instruction_text(task: Task, completed: list[str]) -> str:
    done = "; ".join(completed) if completed else "none"
    return f"Task Goal: {task.name}. Completed subtasks: {done}."


def _grounded_lists(script: Script, registry: dict[str, str]) -> list[list[str]]:
    return [[c.kind, *objects_of(c)] for c in ground_calls(script, registry)]


def attempt_step(teacher, world: WorldState, env_msg: str, system_msg: str,
                 step: int, attempt: int, instruction: str) -> tuple[StepRecord, TeacherResponse | None]:
    """Ask once, execute, judge, and roll back on failure. TeacherError propagates."""
    snap = snapshot(world)
    before = state_hash(world)
    allowed = actable_ids(world)
    text = teacher.ask(system_msg, env_msg, world.copy())
    resp: TeacherResponse | None = None
    code, grounded, subtask = "", [], ""
    halted_at, error_code, reason = None, None, ""
    executable = False
    bit = 0
    try:
        resp = parse_teacher_response(text)
        subtask = resp.subtasks[0]
        script = resolve_names(parse(resp.code), world)
    except MalformedResponse as e:
        error_code, error_text = "MalformedResponse", str(e)
    except ParseError as e:
        error_code, error_text = "ParseError", f"ParseError: {e}"
        code = resp.code if resp else ""
    else:
        code = render(script)
        registry_before = dict(world.agent.name_registry)
        result = run(script, world)
        executable = not result.code_error
        halted_at, error_code, error_text = result.halted_at, result.error_code, result.error_text
        if result.ok:
            grounded = _grounded_lists(script, registry_before)
            bit, reason = judge_step(world, resp.target_states)
            if not bit:
                error_code, error_text = "TargetMismatch", f"TargetMismatch: {reason}"
    if not bit:
        restore_into(world, snap)
    rec = StepRecord(
        step=step,
        attempt=attempt,
        instruction=instruction,
        env_msg=env_msg,
        response=text,
        parsed=resp is not None,
        code=code,
        grounded=grounded,
        halted_at=halted_at,
        error_code=error_code if not bit else None,
        error_text=error_text if not bit else "No error",
        executable=executable,
        step_success=bit,
        judge_reason=reason,
        world_before=before,
        world_after=state_hash(world),
        allowed_objects=allowed,
        subtask=subtask,
    )
    return rec, resp


def run_episode(
    task: Task,
    teacher,
    seed: int = 0,
    budget: int = MAX_STEPS,
    attempts_per_step: int = 1,
    obs_cfg: ObservationConfig | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
) -> Episode:
    world = task.world(seed)
    sys_msg = system_message()
    ep = Episode(task.key, task.name, seed, getattr(teacher, "kind", type(teacher).__name__),
                 prompt_hash(sys_msg))
    memory = EpisodeMemory(task_goal=task.name)
    completed: list[str] = []
    while len(ep.steps) < budget and not goal_met(world, task.goal):
        world.step_counter += 1
        step = world.step_counter
        env_msg = render_env_message(world, memory, obs_cfg)
        instruction = instruction_text(task, completed)
        snap = snapshot(world)
        try:
            rec, resp = attempt_step(teacher, world, env_msg, sys_msg, step, 0, instruction)
            ep.steps.append(rec)
            if on_step:
                on_step(rec)
            for k in range(1, attempts_per_step):
                alt_world = restore(snap)
                alt, _ = attempt_step(teacher, alt_world, env_msg, sys_msg, step, k, instruction)
                ep.alternatives.append(alt)
        except TeacherError as e:
            log.warning("%s seed %d: teacher failed at step %d: %s", task.key, seed, step, e)
            ep.valid = False
            ep.invalid_reason = f"{type(e).__name__}: {e}"
            break
        if resp is not None:
            memory.original_subtasks = resp.subtasks
            memory.previous_code = resp.code
        else:
            memory.previous_code = None
        memory.execution_error = rec.error_text
        if rec.step_success:
            completed.append(rec.subtask)
    ep.step_counter = world.step_counter
    ep.outcome = judge_task(world, task.goal, len(ep.steps), budget) if ep.valid else 0
    ep.final_hash = state_hash(world)
    return ep


def build_tree(ep: Episode) -> TaskTree:
    """Attempts become nodes; every attempt hangs off the last successful main step."""
    root = StepNode("root", None, "", "", "", 1, "", "")
    nodes = {"root": root}
    parent = "root"
    order = 0
    alts: dict[int, list[StepRecord]] = {}
    for a in ep.alternatives:
        alts.setdefault(a.step, []).append(a)
    for s in ep.steps:
        for rec in [s, *alts.get(s.step, [])]:
            order += 1
            nid = f"s{rec.step:02d}a{rec.attempt}"
            nodes[nid] = StepNode(
                node_id=nid,
                parent_id=parent,
                instruction=rec.instruction,
                response=rec.response,
                env_msg=rec.env_msg,
                step_success=rec.step_success,
                world_before=rec.world_before,
                world_after=rec.world_after,
                allowed_objects=tuple(rec.allowed_objects),
                order=order,
            )
        if s.step_success:
            parent = f"s{s.step:02d}a0"
    return label_tree(TaskTree(ep.task_key, nodes, "root", ep.outcome, ep.steps_used))


# ---------------------------------------------------------------------------
# trajectory files


def _header(task: Task, ep: Episode, attempts_per_step: int) -> dict[str, Any]:
    return {
        "record": "episode",
        "task": task.key,
        "seed": ep.seed,
        "teacher": ep.teacher_kind,
        "prompt_hash": ep.prompt_hash,
        "budget": MAX_STEPS,
        "attempts_per_step": attempts_per_step,
        "task_doc": task.doc,
    }


def _summary(ep: Episode) -> dict[str, Any]:
    return {
        "record": "summary",
        "outcome": ep.outcome,
        "valid": ep.valid,
        "invalid_reason": ep.invalid_reason,
        "steps_used": ep.steps_used,
        "step_counter": ep.step_counter,
        "final_hash": ep.final_hash,
    }


def _dump(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_episode(task: Task, ep: Episode, out_dir: str | Path, attempts_per_step: int = 1) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = out / f"{task.key}_{ep.seed}.traj.jsonl"
    transcript = out / f"{task.key}_{ep.seed}.teacher.jsonl"
    records = ep.all_records()
    lines = [_dump(_header(task, ep, attempts_per_step))]
    lines += [_dump({"record": "step", **asdict(r)}) for r in records]
    lines.append(_dump(_summary(ep)))
    traj.write_text("\n".join(lines) + "\n", encoding="utf-8")
    talk = [_dump({"step": r.step, "attempt": r.attempt, "env_msg": r.env_msg, "response": r.response})
            for r in records]
    transcript.write_text("".join(x + "\n" for x in talk), encoding="utf-8")
    return traj, transcript


@dataclass
class Trajectory:
    header: dict[str, Any]
    records: list[dict[str, Any]]
    summary: dict[str, Any]

    @property
    def task(self) -> Task:
        return task_from_dict(self.header["task_doc"], self.header["task"])


def read_trajectory(path: str | Path) -> Trajectory:
    rows = [json.loads(x) for x in Path(path).read_text("utf-8").splitlines() if x.strip()]
    if not rows or rows[0].get("record") != "episode":
        raise ValueError(f"{path}: missing episode header")
    steps = [r for r in rows if r.get("record") == "step"]
    summary = next((r for r in rows if r.get("record") == "summary"), {})
    return Trajectory(rows[0], steps, summary)


@dataclass
class ReplayReport:
    steps_verified: int
    mismatches: list[str]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def render(self) -> str:
        if self.ok:
            return f"OK: {self.steps_verified} steps verified"
        return "MISMATCH: " + "; ".join(self.mismatches)


_CHECKED = ("world_before", "world_after", "step_success", "error_text")


def replay_trajectory(path: str | Path) -> ReplayReport:
    """Re-execute recorded responses against a fresh world and compare hashes."""
    traj = read_trajectory(path)
    task = traj.task
    teacher = ReplayTeacher([{"env_msg": r["env_msg"], "response": r["response"]} for r in traj.records])
    teacher.kind = traj.header.get("teacher", "replay")
    ep = run_episode(task, teacher, seed=traj.header["seed"],
                     attempts_per_step=traj.header.get("attempts_per_step", 1))
    mismatches = []
    fresh = ep.all_records()
    if len(fresh) != len(traj.records):
        mismatches.append(f"{len(traj.records)} recorded attempts, {len(fresh)} replayed")
    verified = 0
    for old, new in zip(traj.records, fresh):
        bad = [k for k in _CHECKED if old[k] != getattr(new, k)]
        if bad:
            mismatches.append(f"step {old['step']} attempt {old['attempt']}: {', '.join(bad)} differ")
        elif old["attempt"] == 0:
            verified += 1
    if traj.summary and traj.summary.get("final_hash") != ep.final_hash and traj.summary.get("valid", True):
        mismatches.append("final world hash differs")
    return ReplayReport(verified, mismatches)


# ---------------------------------------------------------------------------
# collection


@dataclass
class Collection:
    episodes: list[Episode]
    sft: list[dict[str, Any]]
    trees: list[TaskTree]

    def failures(self) -> dict[str, int]:
        """Counts of step error codes over all attempts (the failure taxonomy)."""
        out: dict[str, int] = {}
        for ep in self.episodes:
            for r in ep.all_records():
                if not r.step_success:
                    out[r.error_code or "unknown"] = out.get(r.error_code or "unknown", 0) + 1
        return dict(sorted(out.items()))


def sft_records(task: Task, ep: Episode) -> list[dict[str, Any]]:
    from .learn.tokens import calls_to_tokens

    if not (ep.valid and ep.outcome):
        return []
    out = []
    for r in ep.steps:
        if r.step_success and r.grounded:
            out.append({
                "task": task.key,
                "seed": ep.seed,
                "step": r.step,
                "env_msg": r.env_msg,
                "goal": task.name,
                "instruction": r.instruction,
                "tokens": calls_to_tokens(r.grounded),
                "allowed_objects": r.allowed_objects,
            })
    return out


def collect_dataset(
    tasks: Iterable[Task],
    config: TeacherConfig | None = None,
    seeds: Iterable[int] = (0,),
    out_dir: str | Path | None = None,
    attempts_per_step: int = 1,
    teacher_factory: Callable[[Task, int], Any] | None = None,
) -> Collection:
    """Run every (task, seed) episode; results are merged in (task, seed) order."""
    config = config or TeacherConfig()
    jobs = sorted(((t, s) for t in tasks for s in seeds), key=lambda js: (js[0].key, js[1]))

    def one(job: tuple[Task, int]) -> Episode:
        task, seed = job
        teacher = teacher_factory(task, seed) if teacher_factory else make_teacher(config, task, seed)
        return run_episode(task, teacher, seed, attempts_per_step=attempts_per_step)

    workers = max(1, config.n_parallel)
    if workers == 1 or len(jobs) <= 1:
        episodes = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            episodes = list(pool.map(one, jobs))

    sft: list[dict[str, Any]] = []
    trees: list[TaskTree] = []
    for (task, _), ep in zip(jobs, episodes):
        if out_dir is not None:
            write_episode(task, ep, out_dir, attempts_per_step)
        status = "ok" if ep.outcome else ("invalid" if not ep.valid else "failed")
        log.info("%s seed %d: %s in %d steps", task.key, ep.seed, status, ep.steps_used)
        if not ep.valid:
            continue
        sft.extend(sft_records(task, ep))
        trees.append(build_tree(ep))
    return Collection(episodes, sft, trees)
