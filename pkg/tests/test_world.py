import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import obj
from octoloop.actions import ActionCall, execute
from octoloop.world import (
    AGENT,
    ObservationConfig,
    SchemaError,
    TargetCondition,
    UnknownObject,
    UnknownRelation,
    UnknownState,
    check_condition,
    distance,
    load_scene,
    observe,
    restore,
    sector_of,
    snapshot,
    world_from_dict,
)


def scene(objects=(), relations=(), agent=None):
    return {"scene_id": "t", "objects": list(objects), "relations": [list(r) for r in relations],
            "agent": agent or {"position": [0.0, 0.0], "heading": 0.0}}


# --- loading ---------------------------------------------------------------

def test_bacon_scene_nesting(bacon_world):
    assert ("bacon_150", "inside", "tray_156") in bacon_world.relations
    assert ("tray_156", "inside", "fridge_xyejdx_0") in bacon_world.relations
    assert bacon_world.inside_ancestors("bacon_150") == ["tray_156", "fridge_xyejdx_0"]


def test_load_scene_from_file(tmp_path, bacon):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(bacon.doc), encoding="utf-8")
    a, b = load_scene(p), load_scene(p)
    assert snapshot(a) == snapshot(b)


def test_empty_scene():
    w = world_from_dict(scene())
    assert w.objects == {} and w.relations == []
    assert w.agent.position == (0.0, 0.0)


@pytest.mark.parametrize("doc", [
    scene([obj("a_1", (0, 0))], [("a_1", "ontop", "b_2")]),  # missing id
    scene([obj("a_1", (0, 0)), obj("a_1", (1, 1))]),  # duplicate id
    scene([obj("a_1", (0, 0), caps=["sparkly"])]),  # unknown state
    scene([obj("a_1", (0, 0)), obj("b_2", (1, 1))], [("a_1", "levitating", "b_2")]),  # unknown relation
    scene([obj("a_1", (0, 0)), obj("b_2", (1, 1))], [("a_1", "inside", "b_2"), ("b_2", "inside", "a_1")]),
    scene([obj("a_1", (0, 0)), obj("b_2", (1, 1)), obj("c_3", (2, 2))],
          [("a_1", "ontop", "b_2"), ("a_1", "ontop", "c_3")]),  # two ontop parents
    scene([obj("a_1", (0, 0), caps=["openable"], states={"openable": 1, "cookable": 0})]),
])
def test_schema_errors(doc):
    with pytest.raises(SchemaError):
        world_from_dict(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaError):
        load_scene(p)


# --- distance --------------------------------------------------------------

def test_distance_examples(bacon_world):
    assert distance(bacon_world, AGENT, AGENT) == 0.0
    assert f"{distance(bacon_world, AGENT, 'bacon_150'):.2f}" == "1.89"
    with pytest.raises(UnknownObject):
        distance(bacon_world, AGENT, "ghost_1")


coord = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=3), st.tuples(coord, coord))
def test_distance_is_a_metric(points, agent):
    objs = [obj(f"o_{i}", p) for i, p in enumerate(points)]
    w = world_from_dict(scene(objs, agent={"position": list(agent), "heading": 0}))
    ids = [AGENT, "o_0", "o_1", "o_2"]
    for a in ids:
        assert distance(w, a, a) == 0.0
        for b in ids:
            assert distance(w, a, b) == distance(w, b, a) >= 0.0
            for c in ids:
                assert distance(w, a, c) <= distance(w, a, b) + distance(w, b, c) + 1e-9


def test_inventory_distance_is_zero(bacon_world):
    w = bacon_world
    w.objects["fridge_xyejdx_0"].states["openable"] = 1
    w.agent.position = (0.0, 1.5)
    assert execute(w, ActionCall.grounded("EasyGrasp", "bacon_150")).success
    assert distance(w, AGENT, "bacon_150") == 0.0


# --- observation -----------------------------------------------------------

def test_closed_fridge_hides_contents(bacon_world):
    ids = observe(bacon_world).all_ids()
    assert "fridge_xyejdx_0" in ids
    assert "bacon_150" not in ids and "tray_156" not in ids
    bacon_world.objects["fridge_xyejdx_0"].states["openable"] = 1
    assert {"bacon_150", "tray_156"} <= observe(bacon_world).all_ids()


def test_bundle_shape_and_order(bacon_world):
    b = observe(bacon_world)
    assert len(b.fpv_sectors) == 8
    for layer in [*b.fpv_sectors, b.bev_near, b.bev_far]:
        keys = [(r.distance, r.id) for r in layer]
        assert keys == sorted(keys)
    assert observe(bacon_world) == b


def test_sector_at_ninety_degrees():
    assert sector_of(90.0, 0.0) == 2


def test_sector_sweep_against_direct_formula():
    # place an object at every whole-degree bearing and compare with floor(rel / 45)
    for heading in (0.0, 30.0, 359.0):
        for deg in range(360):
            rad = math.radians(deg + 0.5)
            w = world_from_dict(scene([obj("p_1", (3 * math.cos(rad), 3 * math.sin(rad)))],
                                      agent={"position": [0, 0], "heading": heading}))
            rel = (deg + 0.5 - heading) % 360
            expected = int(rel // 45)
            secs = [i for i, s in enumerate(observe(w).fpv_sectors) if s]
            assert secs == [expected]


def test_radii():
    w = world_from_dict(scene([obj("n_1", (4, 0)), obj("m_2", (8, 0)), obj("f_3", (15, 0)), obj("x_4", (30, 0))]))
    b = observe(w)
    assert [r.id for r in b.bev_near] == ["n_1"]
    assert [r.id for r in b.bev_far] == ["n_1", "m_2", "f_3"]
    assert {r.id for s in b.fpv_sectors for r in s} == {"n_1", "m_2"}
    assert observe(w, ObservationConfig(r_near=10)).bev_near[-1].id == "m_2"


def _hidden_by_walk(w, oid):
    cur = oid
    while True:
        parents = [o for s, r, o in w.relations if s == cur and r == "inside"]
        if not parents:
            return False
        cur = parents[0]
        if w.objects[cur].states.get("openable") == 0:
            return True


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=4, max_size=4), st.integers(0, 3))
def test_hidden_object_soundness(open_flags, depth):
    # chain box_0 ⊂ box_1 ⊂ ... with random open/closed flags and an item at some depth
    objs = [obj(f"box_{i}", (1 + i * 0.1, 0), caps=["openable"], container=True,
                states={"openable": int(f)}) for i, f in enumerate(open_flags)]
    objs.append(obj("item_9", (1, 0)))
    rels = [(f"box_{i}", "inside", f"box_{i + 1}") for i in range(3)] + [("item_9", "inside", f"box_{depth}")]
    w = world_from_dict(scene(objs, rels))
    seen = observe(w).all_ids()
    for oid in w.objects:
        assert (oid in seen) == (not _hidden_by_walk(w, oid))


# --- snapshots -------------------------------------------------------------

def test_snapshot_round_trip(bacon_world):
    bacon_world.step_counter = 3
    bacon_world.rng_seed = 2**63 - 1
    s1 = snapshot(bacon_world)
    assert snapshot(restore(s1)) == s1
    execute(bacon_world, ActionCall.grounded("MoveBot", "stove_rgpphy_0"))
    assert snapshot(bacon_world) != s1
    back = restore(s1)
    assert back.step_counter == 3 and back.rng_seed == 2**63 - 1
    assert snapshot(back) == s1


# --- conditions ------------------------------------------------------------

def test_condition_examples(bacon_world):
    w = bacon_world
    assert not check_condition(w, TargetCondition.binary("bacon_150", "inside", "tray_156", 0))
    assert check_condition(w, TargetCondition.binary("bacon_150", "inside", "fridge_xyejdx_0", 1))
    assert execute(w, ActionCall.grounded("MoveBot", "fridge_xyejdx_0")).success
    assert check_condition(w, TargetCondition.binary(AGENT, "nextto", "fridge_xyejdx_0", 1))
    assert execute(w, ActionCall.grounded("open", "fridge_xyejdx_0")).success
    assert check_condition(w, TargetCondition.unary("fridge_xyejdx_0", "openable", 1))


def test_condition_errors(bacon_world):
    with pytest.raises(UnknownObject):
        check_condition(bacon_world, TargetCondition.unary("ghost_1", "openable", 1))
    with pytest.raises(UnknownState):
        check_condition(bacon_world, TargetCondition.unary("bacon_150", "shiny", 1))
    with pytest.raises(UnknownRelation):
        check_condition(bacon_world, TargetCondition.binary("bacon_150", "orbits", "tray_156", 1))
