"""Symbolic scene-graph world: objects, unary states, relations, agent and observations."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

UNARY_STATES = (
    "cookable",
    "burnable",
    "freezable",
    "heatable",
    "openable",
    "togglable",
    "foldable",
    "unfoldable",
)
RELATIONS = (
    "inside",
    "nextto",
    "ontop",
    "under",
    "touching",
    "covered",
    "contains",
    "saturated",
    "filled",
    "attached",
    "overlaid",
    "draped",
)
SIZE_CLASSES = ("large", "small")
AGENT = "robot"

# Radii in meters.
R_FPV = 10.0
R_NEAR = 5.0
R_FAR = 20.0
D_NEXTTO = 2.0


class SchemaError(ValueError):
    """A scene/task file is malformed or violates a world invariant."""


class UnknownObject(KeyError):
    pass


class UnknownState(KeyError):
    pass


class UnknownRelation(KeyError):
    pass


@dataclass
class ObjectInstance:
    id: str
    category: str
    position: tuple[float, float]
    size_class: str = "small"
    on_ground: bool = False
    capabilities: tuple[str, ...] = ()
    # insertion order is the order states are rendered in
    states: dict[str, int] = field(default_factory=dict)
    container: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "category": self.category,
            "position": [self.position[0], self.position[1]],
            "size_class": self.size_class,
            "on_ground": self.on_ground,
            "capabilities": list(self.capabilities),
            "states": dict(self.states),
            "container": self.container,
        }


@dataclass
class AgentState:
    position: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    inventory: list[str] = field(default_factory=list)
    name_registry: dict[str, str] = field(default_factory=dict)


@dataclass
class WorldState:
    objects: dict[str, ObjectInstance] = field(default_factory=dict)
    relations: list[tuple[str, str, str]] = field(default_factory=list)
    agent: AgentState = field(default_factory=AgentState)
    rng_seed: int = 0
    step_counter: int = 0
    scene_id: str = ""

    def copy(self) -> WorldState:
        objects = {k: dataclasses.replace(o, states=dict(o.states)) for k, o in self.objects.items()}
        agent = AgentState(self.agent.position, self.agent.heading, list(self.agent.inventory),
                           dict(self.agent.name_registry))
        return WorldState(objects, list(self.relations), agent, self.rng_seed, self.step_counter, self.scene_id)

    def obj(self, oid: str) -> ObjectInstance:
        try:
            return self.objects[oid]
        except KeyError:
            raise UnknownObject(oid) from None

    def inside_parent(self, oid: str) -> str | None:
        for s, r, o in self.relations:
            if s == oid and r == "inside":
                return o
        return None

    def inside_ancestors(self, oid: str) -> list[str]:
        """Chain of containers an object sits in, innermost first."""
        chain = []
        cur = self.inside_parent(oid)
        while cur is not None and cur not in chain:
            chain.append(cur)
            cur = self.inside_parent(cur)
        return chain

    def is_hidden(self, oid: str) -> bool:
        for anc in self.inside_ancestors(oid):
            o = self.objects[anc]
            if "openable" in o.states and o.states["openable"] == 0:
                return True
        return False

    def in_inventory(self, oid: str) -> bool:
        return oid in self.agent.inventory

    def derived_relations(self) -> list[tuple[str, str, str]]:
        """Stored triples followed by the transitive closure of `inside` chains."""
        out = list(self.relations)
        seen = set(out)
        for s, r, _ in self.relations:
            if r != "inside":
                continue
            for anc in self.inside_ancestors(s)[1:]:
                t = (s, "inside", anc)
                if t not in seen:
                    seen.add(t)
                    out.append(t)
        return out

    def has_relation(self, subject: str, relation: str, obj: str) -> bool:
        if relation == "inside":
            return obj in self.inside_ancestors(subject)
        return (subject, relation, obj) in self.relations


# ---------------------------------------------------------------------------
# loading


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaError(msg)


def _parse_object(raw: Any) -> ObjectInstance:
    _require(isinstance(raw, dict), f"object entry must be a mapping, got {raw!r}")
    for key in ("id", "category", "position"):
        _require(key in raw, f"object missing field {key!r}")
    oid = raw["id"]
    _require(isinstance(oid, str) and oid != "" and oid != AGENT, f"bad object id {oid!r}")
    pos = raw["position"]
    _require(
        isinstance(pos, (list, tuple)) and len(pos) == 2
        and all(isinstance(v, (int, float)) and math.isfinite(v) for v in pos),
        f"{oid}: position must be two finite numbers",
    )
    size = raw.get("size_class", "small")
    _require(size in SIZE_CLASSES, f"{oid}: unknown size_class {size!r}")
    caps = raw.get("capabilities", [])
    for c in caps:
        _require(c in UNARY_STATES, f"{oid}: unknown state {c!r}")
    _require(len(set(caps)) == len(caps), f"{oid}: duplicate capability")
    states = raw.get("states", {c: 0 for c in caps})
    _require(isinstance(states, dict), f"{oid}: states must be a mapping")
    for s, v in states.items():
        _require(s in UNARY_STATES, f"{oid}: unknown state {s!r}")
        _require(v in (0, 1) and not isinstance(v, float), f"{oid}: state {s} must be 0 or 1")
    _require(set(states) == set(caps), f"{oid}: states must cover exactly the capabilities")
    return ObjectInstance(
        id=oid,
        category=str(raw["category"]),
        position=(float(pos[0]), float(pos[1])),
        size_class=size,
        on_ground=bool(raw.get("on_ground", False)),
        capabilities=tuple(caps),
        states={s: int(v) for s, v in states.items()},
        container=bool(raw.get("container", False)),
    )


def world_from_dict(doc: dict[str, Any]) -> WorldState:
    _require(isinstance(doc, dict), "scene document must be a JSON object")
    objects: dict[str, ObjectInstance] = {}
    for raw in doc.get("objects", []):
        o = _parse_object(raw)
        _require(o.id not in objects, f"duplicate object id {o.id!r}")
        objects[o.id] = o
    relations: list[tuple[str, str, str]] = []
    for raw in doc.get("relations", []):
        _require(isinstance(raw, (list, tuple)) and len(raw) == 3, f"bad relation {raw!r}")
        s, r, o = raw
        _require(r in RELATIONS, f"unknown relation {r!r}")
        _require(s in objects, f"relation references missing id {s!r}")
        _require(o in objects, f"relation references missing id {o!r}")
        _require(s != o, f"self relation on {s!r}")
        t = (s, r, o)
        _require(t not in relations, f"duplicate relation {t!r}")
        relations.append(t)
    agent_raw = doc.get("agent", {})
    pos = agent_raw.get("position", [0.0, 0.0])
    _require(isinstance(pos, (list, tuple)) and len(pos) == 2, "agent position must have 2 values")
    world = WorldState(
        objects=objects,
        relations=relations,
        agent=AgentState(position=(float(pos[0]), float(pos[1])),
                         heading=float(agent_raw.get("heading", 0.0)) % 360.0),
        scene_id=str(doc.get("scene_id", "")),
    )
    check_invariants(world)
    return world


def load_scene(scene_file: str | Path) -> WorldState:
    try:
        doc = json.loads(Path(scene_file).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{scene_file}: invalid JSON ({e})") from e
    return world_from_dict(doc)


def check_invariants(world: WorldState) -> None:
    """Raise SchemaError if parent uniqueness, acyclicity or reference rules fail."""
    for kind in ("inside", "ontop"):
        parents: dict[str, str] = {}
        for s, r, o in world.relations:
            if r != kind:
                continue
            _require(s not in parents, f"{s!r} has more than one {kind!r} parent")
            parents[s] = o
        for start in parents:
            seen = {start}
            cur = parents.get(start)
            while cur is not None:
                _require(cur not in seen, f"{kind!r} cycle through {start!r}")
                seen.add(cur)
                cur = parents.get(cur)
    for s, _, o in world.relations:
        _require(s in world.objects and o in world.objects, "dangling relation endpoint")
        _require(not world.in_inventory(s) and not world.in_inventory(o),
                 "inventory object appears in a relation")
    for o in world.objects.values():
        _require(set(o.states) == set(o.capabilities), f"{o.id}: states/capabilities mismatch")


# ---------------------------------------------------------------------------
# geometry


def position_of(world: WorldState, ref: str) -> tuple[float, float]:
    if ref == AGENT:
        return world.agent.position
    if world.in_inventory(ref):
        return world.agent.position
    return world.obj(ref).position


def distance(world: WorldState, a: str, b: str) -> float:
    """Euclidean distance between centroids; 'robot' names the agent."""
    for ref in (a, b):
        if ref != AGENT and ref not in world.objects:
            raise UnknownObject(ref)
    pa, pb = position_of(world, a), position_of(world, b)
    return math.hypot(pa[0] - pb[0], pa[1] - pb[1])


def bearing(world: WorldState, oid: str) -> float:
    ax, ay = world.agent.position
    ox, oy = position_of(world, oid)
    if ox == ax and oy == ay:
        return world.agent.heading
    return math.degrees(math.atan2(oy - ay, ox - ax)) % 360.0


def sector_of(bearing_deg: float, heading_deg: float) -> int:
    return int(((bearing_deg - heading_deg) % 360.0) // 45.0) % 8


# ---------------------------------------------------------------------------
# observation


@dataclass(frozen=True)
class ObservedRecord:
    id: str
    states: tuple[tuple[str, int], ...]
    distance: float


@dataclass(frozen=True)
class ObservationConfig:
    r_fpv: float = R_FPV
    r_near: float = R_NEAR
    r_far: float = R_FAR
    # Full scene-graph mode: contents of closed containers are reported too.
    reveal_hidden: bool = False


@dataclass
class ObservationBundle:
    fpv_sectors: list[list[ObservedRecord]]
    bev_near: list[ObservedRecord]
    bev_far: list[ObservedRecord]

    def all_ids(self) -> set[str]:
        ids = {r.id for r in self.bev_near} | {r.id for r in self.bev_far}
        for sec in self.fpv_sectors:
            ids |= {r.id for r in sec}
        return ids


def visible_ids(world: WorldState, cfg: ObservationConfig | None = None) -> list[str]:
    """Scene objects that can be seen at all (not carried, not shut away)."""
    cfg = cfg or ObservationConfig()
    out = []
    for oid in world.objects:
        if world.in_inventory(oid):
            continue
        if not cfg.reveal_hidden and world.is_hidden(oid):
            continue
        out.append(oid)
    return out


def observe(world: WorldState, cfg: ObservationConfig | None = None) -> ObservationBundle:
    cfg = cfg or ObservationConfig()
    fpv: list[list[ObservedRecord]] = [[] for _ in range(8)]
    near: list[ObservedRecord] = []
    far: list[ObservedRecord] = []
    for oid in visible_ids(world, cfg):
        d = distance(world, AGENT, oid)
        rec = ObservedRecord(oid, tuple(world.objects[oid].states.items()), d)
        if d <= cfg.r_fpv:
            fpv[sector_of(bearing(world, oid), world.agent.heading)].append(rec)
        if d <= cfg.r_near:
            near.append(rec)
        if d <= cfg.r_far:
            far.append(rec)

    def key(r: ObservedRecord) -> tuple[float, str]:
        return (r.distance, r.id)

    return ObservationBundle([sorted(s, key=key) for s in fpv], sorted(near, key=key), sorted(far, key=key))


# ---------------------------------------------------------------------------
# snapshots


def world_to_dict(world: WorldState) -> dict[str, Any]:
    return {
        "scene_id": world.scene_id,
        "objects": [o.to_json() for o in world.objects.values()],
        "relations": [list(t) for t in world.relations],
        "agent": {
            "position": [world.agent.position[0], world.agent.position[1]],
            "heading": world.agent.heading,
            "inventory": list(world.agent.inventory),
            "name_registry": dict(world.agent.name_registry),
        },
        "rng_seed": world.rng_seed,
        "step_counter": world.step_counter,
    }


@dataclass(frozen=True)
class Snapshot:
    data: bytes

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


def snapshot(world: WorldState) -> Snapshot:
    return Snapshot(json.dumps(world_to_dict(world), separators=(",", ":")).encode("utf-8"))


def restore(snap: Snapshot) -> WorldState:
    doc = json.loads(snap.data.decode("utf-8"))
    objects = {}
    for raw in doc["objects"]:
        objects[raw["id"]] = ObjectInstance(
            id=raw["id"],
            category=raw["category"],
            position=(raw["position"][0], raw["position"][1]),
            size_class=raw["size_class"],
            on_ground=raw["on_ground"],
            capabilities=tuple(raw["capabilities"]),
            states=dict(raw["states"]),
            container=raw["container"],
        )
    a = doc["agent"]
    return WorldState(
        objects=objects,
        relations=[tuple(t) for t in doc["relations"]],
        agent=AgentState(
            position=(a["position"][0], a["position"][1]),
            heading=a["heading"],
            inventory=list(a["inventory"]),
            name_registry=dict(a["name_registry"]),
        ),
        rng_seed=doc["rng_seed"],
        step_counter=doc["step_counter"],
        scene_id=doc["scene_id"],
    )


def world_hash(world: WorldState) -> str:
    return snapshot(world).hash


def state_hash(world: WorldState) -> str:
    """Hash of the scene state without the budget counter.

    Two attempts at the same step (a failure and its retry) see the same
    scene but different counters; this hash treats them as one state.
    """
    doc = world_to_dict(world)
    del doc["step_counter"]
    return hashlib.sha256(json.dumps(doc, separators=(",", ":")).encode("utf-8")).hexdigest()


def restore_into(world: WorldState, snap: Snapshot) -> None:
    """Reset `world` in place so callers holding a reference see the restored state."""
    fresh = restore(snap)
    world.objects = fresh.objects
    world.relations = fresh.relations
    world.agent = fresh.agent
    world.rng_seed = fresh.rng_seed
    world.step_counter = fresh.step_counter
    world.scene_id = fresh.scene_id


# ---------------------------------------------------------------------------
# target conditions


@dataclass(frozen=True)
class TargetCondition:
    format: str  # "unary" | "binary"
    subject: str
    state_or_relation: str
    object: str | None
    value: int

    @classmethod
    def unary(cls, subject: str, state: str, value: int) -> TargetCondition:
        return cls("unary", subject, state, None, int(value))

    @classmethod
    def binary(cls, subject: str, relation: str, obj: str, value: int) -> TargetCondition:
        return cls("binary", subject, relation, obj, int(value))

    def as_list(self) -> list[Any]:
        if self.format == "unary":
            return [self.subject, self.state_or_relation, self.value]
        return [self.subject, self.state_or_relation, self.object, self.value]

    @classmethod
    def from_list(cls, raw: Iterable[Any]) -> TargetCondition:
        items = list(raw)
        if len(items) == 3:
            return cls.unary(str(items[0]), str(items[1]), int(items[2]))
        if len(items) == 4:
            return cls.binary(str(items[0]), str(items[1]), str(items[2]), int(items[3]))
        raise SchemaError(f"condition must have 3 or 4 fields: {items!r}")

    def render(self) -> str:
        return ", ".join(str(v) for v in self.as_list())


def _check_ref(world: WorldState, ref: str) -> None:
    if ref != AGENT and ref not in world.objects:
        raise UnknownObject(ref)


def check_condition(world: WorldState, cond: TargetCondition, d_nextto: float = D_NEXTTO) -> bool:
    if cond.format == "unary":
        if cond.state_or_relation not in UNARY_STATES:
            raise UnknownState(cond.state_or_relation)
        o = world.obj(cond.subject)
        # A missing capability reads as state 0.
        return o.states.get(cond.state_or_relation, 0) == cond.value
    rel = cond.state_or_relation
    if rel not in RELATIONS:
        raise UnknownRelation(rel)
    _check_ref(world, cond.subject)
    _check_ref(world, cond.object)
    if rel == "nextto" and AGENT in (cond.subject, cond.object):
        other = cond.object if cond.subject == AGENT else cond.subject
        present = distance(world, AGENT, other) <= d_nextto
    else:
        present = world.has_relation(cond.subject, rel, cond.object)
    return present == bool(cond.value)
