"""The 16 agent functions: preconditions, effects and typed errors."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .world import AGENT, WorldState, distance

# Enum order; applicable_actions and the planner rely on it.
KINDS = (
    "donothing",
    "registry",
    "EasyGrasp",
    "MoveBot",
    "put_ontop",
    "put_inside",
    "cook",
    "burn",
    "freeze",
    "heat",
    "open",
    "close",
    "fold",
    "unfold",
    "toggle_on",
    "toggle_off",
)

# Full call signatures; names other than robot/env/camera are object slots.
SIGNATURES: dict[str, tuple[str, ...]] = {
    "donothing": ("env",),
    "registry": ("env", "obj_name"),
    "EasyGrasp": ("robot", "obj"),
    "MoveBot": ("env", "robot", "obj", "camera"),
    "put_ontop": ("robot", "obj1", "obj2"),
    "put_inside": ("robot", "obj1", "obj2"),
}
for _k in KINDS[6:]:
    SIGNATURES[_k] = ("robot", "obj")

RESERVED = ("robot", "env", "camera")
OBJECT_SLOTS = {k: tuple(i for i, a in enumerate(sig) if a not in RESERVED) for k, sig in SIGNATURES.items()}
ACTION_LIST = KINDS[2:]

# state set to 1 by each unary action, plus any state it clears
_SETS = {
    "cook": ("cookable", 1),
    "burn": ("burnable", 1),
    "freeze": ("freezable", 1),
    "heat": ("heatable", 1),
    "open": ("openable", 1),
    "close": ("openable", 0),
    "fold": ("foldable", 1),
    "unfold": ("unfoldable", 1),
    "toggle_on": ("togglable", 1),
    "toggle_off": ("togglable", 0),
}
_CLEARS = {"fold": "unfoldable", "unfold": "foldable"}
UNARY_ACTIONS = tuple(_SETS)

INTERACT_RANGE = 2.0
D_ARRIVE = 1.0

ERROR_CODES = (
    "TooFar",
    "NotRegistered",
    "AlreadyRegistered",
    "WrongCapability",
    "NotGraspable",
    "NotNavigable",
    "ClosedContainer",
    "NotTopOfStack",
    "EmptyInventory",
    "UnknownObject",
)


def state_effect(kind: str) -> tuple[str, int] | None:
    return _SETS.get(kind)


def is_literal(arg: str) -> bool:
    return len(arg) >= 2 and arg[0] == arg[-1] and arg[0] in "\"'"


def literal(value: str) -> str:
    return '"' + value + '"'


def unquote(arg: str) -> str:
    return arg[1:-1] if is_literal(arg) else arg


@dataclass(frozen=True)
class ActionCall:
    kind: str
    args: tuple[str, ...]

    def render(self) -> str:
        return f"{self.kind}({', '.join(self.args)})"

    @classmethod
    def grounded(cls, kind: str, *objects: str) -> ActionCall:
        """Build a call whose object slots are quoted object ids."""
        sig = SIGNATURES[kind]
        it = iter(objects)
        args = tuple(a if a in RESERVED else literal(next(it)) for a in sig)
        return cls(kind, args)


@dataclass
class ActionError(Exception):
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass(frozen=True)
class ActionOutcome:
    call: ActionCall
    success: int
    error: ActionError | None
    narration: str


def _resolve(world: WorldState, arg: str) -> str:
    if is_literal(arg):
        oid = unquote(arg)
    else:
        if arg not in world.agent.name_registry:
            raise ActionError("NotRegistered", f"{arg} has not been registered")
        oid = world.agent.name_registry[arg]
    if oid not in world.objects:
        raise ActionError("UnknownObject", f"{oid} does not exist in the scene")
    return oid


def _visible(world: WorldState, oid: str) -> None:
    if world.is_hidden(oid):
        raise ActionError("UnknownObject", f"{oid} is not observable (hidden inside a closed container)")


def _in_reach(world: WorldState, oid: str) -> None:
    d = distance(world, AGENT, oid)
    if d > INTERACT_RANGE:
        raise ActionError("TooFar", f"{oid} is {d:.2f} m away, must be within {INTERACT_RANGE:.0f} m")


def _drop_relations(world: WorldState, oid: str) -> None:
    world.relations = [t for t in world.relations if oid not in (t[0], t[2])]


def check(world: WorldState, call: ActionCall, bind_as: str | None = None) -> ActionError | None:
    """Return the first failing precondition of `call`, or None."""
    try:
        _check(world, call, bind_as)
    except ActionError as e:
        return e
    return None


def _check(world: WorldState, call: ActionCall, bind_as: str | None) -> list[str]:
    kind = call.kind
    if kind not in SIGNATURES:
        raise ActionError("UnknownObject", f"unknown function {kind}")
    if len(call.args) != len(SIGNATURES[kind]):
        raise ActionError("UnknownObject", f"{kind} takes {len(SIGNATURES[kind])} arguments")
    if kind == "donothing":
        return []
    if kind == "registry":
        oid = unquote(call.args[1])
        if oid not in world.objects:
            raise ActionError("UnknownObject", f"{oid} does not exist in the scene")
        _visible(world, oid)
        name = bind_as or oid
        bound = world.agent.name_registry.get(name)
        if bound is not None and bound != oid:
            raise ActionError("AlreadyRegistered", f"{name} is already registered to {bound}, cannot rebind to {oid}")
        return [oid]
    ids = [_resolve(world, call.args[i]) for i in OBJECT_SLOTS[kind]]
    inv = world.agent.inventory
    if kind == "EasyGrasp":
        (oid,) = ids
        if oid in inv:
            raise ActionError("NotGraspable", f"{oid} is already in the inventory")
        _visible(world, oid)
        if world.objects[oid].size_class != "small":
            raise ActionError("NotGraspable", f"{oid} is too large to grasp")
        _in_reach(world, oid)
    elif kind == "MoveBot":
        (oid,) = ids
        _visible(world, oid)
        o = world.objects[oid]
        if oid in inv or o.size_class != "large" or not o.on_ground:
            raise ActionError("NotNavigable", f"{oid} is not a large object placed on the ground")
    elif kind in ("put_ontop", "put_inside"):
        o1, o2 = ids
        if not inv:
            raise ActionError("EmptyInventory", f"cannot place {o1}: the inventory is empty")
        if inv[-1] != o1:
            held = "is not held" if o1 not in inv else f"is under {inv[-1]} in the inventory"
            raise ActionError("NotTopOfStack", f"{o1} {held}")
        if o2 == o1 or o2 in inv:
            raise ActionError("UnknownObject", f"{o2} is not in the scene")
        _visible(world, o2)
        _in_reach(world, o2)
        if kind == "put_inside":
            target = world.objects[o2]
            if not target.container:
                raise ActionError("WrongCapability", f"{o2} is not a container")
            if target.states.get("openable", 1) == 0:
                raise ActionError("ClosedContainer", f"{o2} is closed")
    else:
        (oid,) = ids
        if oid not in inv:
            _visible(world, oid)
        _in_reach(world, oid)
        needed = _SETS[kind][0]
        if needed not in world.objects[oid].states:
            raise ActionError("WrongCapability", f"{oid} lacks the {needed} state required by {kind}")
    return ids


def execute(world: WorldState, call: ActionCall, bind_as: str | None = None) -> ActionOutcome:
    """Run one call; failures leave `world` untouched."""
    try:
        ids = _check(world, call, bind_as)
    except ActionError as e:
        return ActionOutcome(call, 0, e, f"{call.render()} failed: {e}")
    kind = call.kind
    agent = world.agent
    if kind == "donothing":
        note = "waited for capture"
    elif kind == "registry":
        (oid,) = ids
        agent.name_registry[bind_as or oid] = oid
        note = f"registered {oid}"
    elif kind == "EasyGrasp":
        (oid,) = ids
        _drop_relations(world, oid)
        agent.inventory.append(oid)
        note = f"grasped {oid}"
    elif kind == "MoveBot":
        (oid,) = ids
        ox, oy = world.objects[oid].position
        # approach from the -y side; the arrival point depends only on the target
        agent.position = (ox, oy - D_ARRIVE)
        agent.heading = math.degrees(math.atan2(oy - agent.position[1], ox - agent.position[0])) % 360.0
        note = f"moved in front of {oid}"
    elif kind in ("put_ontop", "put_inside"):
        o1, o2 = ids
        agent.inventory.pop()
        rel = "ontop" if kind == "put_ontop" else "inside"
        world.relations.append((o1, rel, o2))
        world.objects[o1].position = world.objects[o2].position
        note = f"put {o1} {'onto' if rel == 'ontop' else 'inside'} {o2}"
    else:
        (oid,) = ids
        o = world.objects[oid]
        state, value = _SETS[kind]
        o.states[state] = value
        if kind in _CLEARS and _CLEARS[kind] in o.states:
            o.states[_CLEARS[kind]] = 0
        note = f"{kind} {oid}"
    return ActionOutcome(call, 1, None, note)


def applicable_actions(world: WorldState) -> list[ActionCall]:
    """Grounded calls whose preconditions hold, in kind order then object id."""
    out = [ActionCall.grounded("donothing")]
    ids = sorted(world.objects)
    top = world.agent.inventory[-1:] if world.agent.inventory else []
    for kind in ACTION_LIST:
        if kind in ("put_ontop", "put_inside"):
            cands = [ActionCall.grounded(kind, o1, o2) for o1 in top for o2 in ids]
        else:
            cands = [ActionCall.grounded(kind, oid) for oid in ids]
        out.extend(c for c in cands if check(world, c) is None)
    return out
