"""Text protocol between the environment and a teacher or policy.

The environment message lists what the agent sees plus episode memory; a
teacher answers with four sections (Explain, Subtasks, Code, Target States).
"""
from __future__ import annotations

import ast
import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources

from .world import (
    RELATIONS,
    UNARY_STATES,
    ObservationConfig,
    TargetCondition,
    WorldState,
    observe,
)

SYSTEM_MESSAGE_VERSION = "v1"
INSTRUCTION = (
    "Now, please output Explain, Subtasks (revise if necessary), Code that completing the next subtask, "
    "and Target States, according to the instruction above. Remember you can only use the functions "
    "provided above and pay attention to the response format."
)
SECTIONS = ("Explain", "Subtasks", "Code", "Target States")


def system_message(version: str = SYSTEM_MESSAGE_VERSION) -> str:
    text = resources.files("octoloop").joinpath(f"assets/system_message_{version}.txt").read_text("utf-8")
    return text.replace("{response_format}\n", "")


def prompt_hash(text: str | None = None) -> str:
    text = system_message() if text is None else text
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class MalformedResponse(ValueError):
    def __init__(self, section: str, reason: str):
        super().__init__(f"MalformedResponse: {section}: {reason}")
        self.section = section
        self.reason = reason


# ---------------------------------------------------------------------------
# environment message


@dataclass
class EpisodeMemory:
    task_goal: str
    original_subtasks: list[str] | None = None
    previous_code: str | None = None
    execution_error: str | None = None


@dataclass
class EnvironmentMessage:
    observed_objects: list[tuple[str, list[tuple[str, int]], float]]
    observed_relations: list[tuple[str, str, str]]
    inventory: list[str] | None
    task_goal: str
    original_subtasks: list[str] | None
    previous_action_code: str
    execution_error: str


def build_env_message(world: WorldState, memory: EpisodeMemory,
                      obs_cfg: ObservationConfig | None = None) -> EnvironmentMessage:
    bundle = observe(world, obs_cfg)
    by_id = {}
    for layer in [*bundle.fpv_sectors, bundle.bev_near, bundle.bev_far]:
        for rec in layer:
            by_id[rec.id] = rec
    # scene declaration order
    objects = [(oid, list(by_id[oid].states), by_id[oid].distance) for oid in world.objects if oid in by_id]
    seen = set(by_id)
    relations = [t for t in world.derived_relations() if t[0] in seen and t[2] in seen]
    return EnvironmentMessage(
        observed_objects=objects,
        observed_relations=relations,
        inventory=list(world.agent.inventory) or None,
        task_goal=memory.task_goal,
        original_subtasks=list(memory.original_subtasks) if memory.original_subtasks else None,
        previous_action_code=(memory.previous_code or "No code").rstrip("\n"),
        execution_error=memory.execution_error or "No error",
    )


def _fmt_object(oid: str, states: list[tuple[str, int]], dist: float) -> str:
    inner = ", ".join(f"[{s!r}, {v}]" for s, v in states)
    return f"({oid}, ({inner}), {dist:.2f})"


def format_env_message(msg: EnvironmentMessage) -> str:
    objs = "".join(_fmt_object(*o) for o in msg.observed_objects) or "None"
    lines = [
        f"Observed Objects: {objs}",
        f"Observed Relations: {[tuple(t) for t in msg.observed_relations]!r}",
        f"Inventory: {msg.inventory!r}" if msg.inventory else "Inventory: None",
        f"Task Goal: {msg.task_goal}",
    ]
    if msg.original_subtasks:
        lines.append("Original Subtasks:")
        lines.extend(f"({i}) {t}" for i, t in enumerate(msg.original_subtasks, start=1))
    else:
        lines.append("Original Subtasks: None")
    if msg.previous_action_code == "No code":
        lines.append("Previous Action Code: No code")
    else:
        lines.append("Previous Action Code:")
        lines.append(msg.previous_action_code)
    lines.append(f"Execution error: {msg.execution_error}")
    lines.append(INSTRUCTION)
    return "\n".join(lines)


def render_env_message(world: WorldState, memory: EpisodeMemory,
                       obs_cfg: ObservationConfig | None = None) -> str:
    return format_env_message(build_env_message(world, memory, obs_cfg))


_OBJ_RE = re.compile(r"\(([^,()\s]+), \(((?:\['\w+', [01]\](?:, )?)*)\), (\d+\.\d{2})\)")
_STATE_RE = re.compile(r"\['(\w+)', ([01])\]")
_ENV_HEADERS = (
    "Observed Objects:",
    "Observed Relations:",
    "Inventory:",
    "Task Goal:",
    "Original Subtasks:",
    "Previous Action Code:",
    "Execution error:",
)


def parse_env_message(text: str) -> EnvironmentMessage:
    """Strict reader for the layout produced by :func:`format_env_message`."""
    lines = text.split("\n")
    if not lines or lines[-1] != INSTRUCTION:
        raise ValueError("missing closing instruction line")
    lines = lines[:-1]
    blocks: dict[str, list[str]] = {}
    pos = 0
    for i, header in enumerate(_ENV_HEADERS):
        if pos >= len(lines) or not lines[pos].startswith(header):
            raise ValueError(f"expected {header!r} at line {pos + 1}")
        first = lines[pos][len(header):].strip()
        pos += 1
        extra = []
        nxt = _ENV_HEADERS[i + 1] if i + 1 < len(_ENV_HEADERS) else None
        while pos < len(lines) and (nxt is None or not lines[pos].startswith(nxt)):
            extra.append(lines[pos])
            pos += 1
        blocks[header] = [first, *extra]

    objs_text = blocks["Observed Objects:"][0]
    objects = []
    if objs_text != "None":
        matches = list(_OBJ_RE.finditer(objs_text))
        if "".join(m.group(0) for m in matches) != objs_text:
            raise ValueError("unparseable Observed Objects")
        for m in matches:
            states = [(s, int(v)) for s, v in _STATE_RE.findall(m.group(2))]
            objects.append((m.group(1), states, float(m.group(3))))
    rel = ast.literal_eval(blocks["Observed Relations:"][0])
    inv_text = blocks["Inventory:"][0]
    inventory = None if inv_text == "None" else list(ast.literal_eval(inv_text))
    sub_first, *sub_rest = blocks["Original Subtasks:"]
    if sub_first == "None":
        subtasks = None
    else:
        subtasks = [re.sub(r"^\(\d+\)\s*", "", s) for s in sub_rest]
    code_first, *code_rest = blocks["Previous Action Code:"]
    code = code_first if code_first == "No code" else "\n".join(code_rest)
    return EnvironmentMessage(
        observed_objects=objects,
        observed_relations=[tuple(t) for t in rel],
        inventory=inventory,
        task_goal=blocks["Task Goal:"][0],
        original_subtasks=subtasks,
        previous_action_code=code,
        execution_error="\n".join(x for x in blocks["Execution error:"] if x) or "",
    )


def task_goal_of(env_msg: str) -> str:
    m = re.search(r"^Task Goal: (.*)$", env_msg, flags=re.M)
    return m.group(1) if m else ""


# ---------------------------------------------------------------------------
# teacher responses


@dataclass
class TargetStates:
    inventory: list[str] = field(default_factory=list)
    conditions: list[TargetCondition] = field(default_factory=list)


@dataclass
class TeacherResponse:
    explain: str
    subtasks: list[str]
    code: str
    target_states: TargetStates


def _label(i: int) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    out = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        out = letters[r] + out
    return out


def render_teacher_response(resp: TeacherResponse) -> str:
    ts = resp.target_states
    parts = [
        "Explain:",
        resp.explain,
        "",
        "Subtasks:",
        *[f"({i}) {t}" for i, t in enumerate(resp.subtasks, start=1)],
        "",
        "Code:",
        resp.code.rstrip("\n"),
        "",
        "Target States:",
        f"(1) Inventory: {', '.join(ts.inventory) if ts.inventory else 'None'}",
        "(2) Object Information:",
        *[f"({_label(i)}) {c.render()}" for i, c in enumerate(ts.conditions)],
    ]
    return "\n".join(parts) + "\n"


_SECTION_RE = re.compile(
    r"^[ \t]*(?:\*\*)?(Explain|Subtasks|Code|Target States)(?:\*\*)?[ \t]*(?:\([^)\n]*\))?[ \t]*"
    r"(?::(?:\*\*)?[ \t]*(.*)|(?:\*\*)?[ \t]*)$",
    re.M,
)


def _split_sections(text: str) -> dict[str, str]:
    found: dict[str, str] = {}
    pos = 0
    starts = []
    for name in SECTIONS:
        for m in _SECTION_RE.finditer(text, pos):
            if m.group(1) == name:
                starts.append((name, m))
                pos = m.end()
                break
        else:
            raise MalformedResponse(name, "section missing or out of order")
    for i, (name, m) in enumerate(starts):
        end = starts[i + 1][1].start() if i + 1 < len(starts) else len(text)
        found[name] = ((m.group(2) or "") + "\n" + text[m.end():end]).strip("\n")
    return found


def _extract_code(section: str) -> str:
    fence = re.search(r"```[^\n]*\n(.*?)```", section, flags=re.S)
    code = fence.group(1) if fence else section
    code = code.strip("\n")
    if not code.strip():
        raise MalformedResponse("Code", "no code found")
    return code + "\n"


def _clean_item(s: str) -> str:
    return s.strip().strip("[]()").strip().strip("'\"").strip()


def parse_condition(line: str) -> TargetCondition:
    body = re.sub(r"^\s*\(?[a-z]{1,2}\)\s*", "", line).strip()
    body = body.strip().strip("[]").strip()
    fields = [_clean_item(x) for x in body.split(",")]
    if len(fields) not in (3, 4) or fields[-1] not in ("0", "1"):
        raise MalformedResponse("Target States", f"bad condition {line.strip()!r}")
    if len(fields) == 3:
        if fields[1] not in UNARY_STATES:
            raise MalformedResponse("Target States", f"unknown state {fields[1]!r}")
        return TargetCondition.unary(fields[0], fields[1], int(fields[2]))
    if fields[1] not in RELATIONS:
        raise MalformedResponse("Target States", f"unknown relation {fields[1]!r}")
    return TargetCondition.binary(fields[0], fields[1], fields[2], int(fields[3]))


def parse_target_states(section: str) -> TargetStates:
    out = TargetStates()
    in_info = False
    for raw in section.splitlines():
        line = raw.split("//")[0].strip()
        if not line:
            continue
        m = re.match(r"^(?:\(1\)\s*)?Inventory\s*:\s*(.*)$", line, flags=re.I)
        if m:
            value = m.group(1).strip()
            if value and value.lower() != "none":
                out.inventory = [_clean_item(x) for x in value.split(",") if _clean_item(x)]
            continue
        if re.match(r"^(?:\(2\)\s*)?Object Information\s*:?\s*$", line, flags=re.I):
            in_info = True
            continue
        if not in_info:
            raise MalformedResponse("Target States", f"unexpected line {line!r}")
        if _clean_item(re.sub(r"^\(?[a-z]{1,2}\)\s*", "", line)).lower() == "none":
            continue
        out.conditions.append(parse_condition(line))
    return out


def parse_teacher_response(text: str) -> TeacherResponse:
    sections = _split_sections(text)
    subtasks = []
    for line in sections["Subtasks"].splitlines():
        m = re.match(r"^\s*\((\d+)\)\s*(.*?)\s*$", line)
        if m:
            subtasks.append(m.group(2))
    if not subtasks:
        raise MalformedResponse("Subtasks", "no numbered subtasks")
    return TeacherResponse(
        explain=sections["Explain"].strip(),
        subtasks=subtasks,
        code=_extract_code(sections["Code"]),
        target_states=parse_target_states(sections["Target States"]),
    )
