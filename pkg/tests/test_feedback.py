import json
from dataclasses import fields

import pytest

from octoloop.actions import ActionCall, execute
from octoloop.explore import OracleTeacher, build_tree, run_episode
from octoloop.feedback import (
    Goal,
    RewardDataset,
    RewardExample,
    StepNode,
    TaskTree,
    build_reward_dataset,
    judge_step,
    judge_task,
    label_tree,
    sibling_groups,
)
from octoloop.pipeline import noisy_collection
from octoloop.protocol import TargetStates
from octoloop.world import TargetCondition


def node(nid, parent, ok, resp=None, order=0):
    return StepNode(nid, parent, f"inst-{parent}", resp or f"resp-{nid}", f"env-{parent}", ok,
                    f"h-{parent}", f"h-{nid}", order=order)


def tree(nodes, success):
    root = StepNode("root", None, "", "", "", 1, "", "")
    d = {"root": root, **{n.node_id: n for n in nodes}}
    return label_tree(TaskTree("synthetic", d, "root", success, len(nodes)))


# --- judging ---------------------------------------------------------------

def test_judge_step_examples(bacon_world):
    w = bacon_world
    assert judge_step(w, TargetStates()) == (1, "")
    execute(w, ActionCall.grounded("MoveBot", "fridge_xyejdx_0"))
    assert judge_step(w, TargetStates([], [TargetCondition.binary("robot", "nextto", "fridge_xyejdx_0", 1)]))[0] == 1
    bit, reason = judge_step(w, TargetStates([], [TargetCondition.unary("bacon_150", "cookable", 1)]))
    assert bit == 0 and "bacon_150" in reason
    bit, reason = judge_step(w, TargetStates([], [TargetCondition.unary("ghost_9", "cookable", 1)]))
    assert bit == 0 and "ghost_9" in reason


def test_inventory_by_id_or_category(bacon_world):
    w = bacon_world
    for c in [("MoveBot", "fridge_xyejdx_0"), ("open", "fridge_xyejdx_0"), ("EasyGrasp", "bacon_150")]:
        execute(w, ActionCall.grounded(*c))
    assert judge_step(w, TargetStates(["bacon_150"], []))[0] == 1
    assert judge_step(w, TargetStates(["bacon"], []))[0] == 1
    assert judge_step(w, TargetStates(["tray"], []))[0] == 0


def test_judge_task_budget(bacon_world, bacon):
    assert judge_task(bacon_world, bacon.goal, 0) == 0
    ep = run_episode(bacon, OracleTeacher(bacon), 0)
    assert ep.outcome == 1 and ep.steps_used == 6


def test_goal_met_exactly_at_step_ten(bacon):
    class Stall:
        kind = "test"

        def __init__(self):
            self.n, self.oracle = 0, OracleTeacher(bacon)

        def ask(self, s, e, world=None):
            self.n += 1
            return "nonsense" if self.n <= 4 else self.oracle.ask(s, e, world)

    ep = run_episode(bacon, Stall(), 0)
    assert ep.steps_used == 10 and ep.outcome == 1


def test_unreachable_goal_fails_at_ten(bacon):
    class Idle:
        kind = "test"

        def ask(self, s, e, world=None):
            return "Explain:\nwait\n\nSubtasks:\n(1) wait\n\nCode:\ndef act(robot, env, camera):\n    donothing(env)\n\nTarget States:\n(1) Inventory: None\n(2) Object Information:\n"

    ep = run_episode(bacon, Idle(), 0)
    assert ep.steps_used == 10 and ep.outcome == 0 and ep.step_counter == 10


# --- labelling -------------------------------------------------------------

def test_success_tree_keeps_step_labels():
    t = tree([node("a", "root", 1, order=1), node("b", "root", 0, order=2), node("c", "a", 1, order=3)], 1)
    assert [n.effective for n in t.step_nodes()] == [1, 0, 1]


def test_failed_task_zeroes_everything():
    t = tree([node("a", "root", 1, order=1), node("b", "a", 1, order=2), node("c", "b", 1, order=3)], 0)
    assert [n.step_success for n in t.step_nodes()] == [1, 1, 1]
    assert [n.effective for n in t.step_nodes()] == [0, 0, 0]
    assert [n.effective for n in label_tree(t).step_nodes()] == [0, 0, 0]


# --- preference data -------------------------------------------------------

def test_single_contrast_pair():
    t = tree([node("ok", "root", 1, order=1), node("bad", "root", 0, order=2)], 1)
    ds = build_reward_dataset([t])
    assert len(ds.pairs()) == 1
    e = ds.pairs()[0]
    assert [e.response_i, e.response_j][e.preferred] == "resp-ok"


def test_linear_success_tree_gives_singletons():
    nodes = [node("n1", "root", 1, order=1)] + [node(f"n{i}", f"n{i - 1}", 1, order=i) for i in range(2, 5)]
    ds = build_reward_dataset([tree(nodes, 1)])
    assert len(ds.singletons()) == 4 and not ds.pairs()
    assert all(e.preferred == 1 and e.response_j == "" for e in ds.singletons())


def test_two_parents_with_one_success_two_failures():
    nodes = [node("p1", "root", 1, order=1), node("p2", "p1", 1, order=2),
             node("p1f1", "p1", 0, order=3), node("p1f2", "p1", 0, order=4),
             node("p2s", "p2", 1, order=5), node("p2f1", "p2", 0, order=6), node("p2f2", "p2", 0, order=7)]
    t = tree(nodes, 1)
    ds = build_reward_dataset([t])
    expected = sum(sum(n.effective for n in g) * sum(1 - n.effective for n in g) for g in sibling_groups(t))
    assert len(ds.pairs()) == expected == 4
    assert len(ds.singletons()) == 1  # p1 alone under the root


def test_failed_task_has_no_positive_singletons():
    t = tree([node("a", "root", 1, order=1), node("b", "root", 0, order=2), node("c", "a", 1, order=3)], 0)
    ds = build_reward_dataset([t])
    assert not ds.pairs() and all(e.preferred == 0 for e in ds.singletons())


@pytest.fixture(scope="module")
def noisy(suite):
    return noisy_collection([t for t in suite if t.category == "routine"][:8], [0, 1])


def test_collected_pairs_match_brute_force(noisy):
    ds = build_reward_dataset(noisy.trees)
    assert ds.pairs(), "noisy exploration should produce sibling contrasts"
    expected = set()
    for t in noisy.trees:
        for g in sibling_groups(t):
            wins = [n.response for n in g if n.effective == 1]
            losses = [n.response for n in g if n.effective == 0]
            expected |= {(g[0].env_msg, w, l) for w in wins for l in losses}
            for n in g:
                assert n.instruction == g[0].instruction and n.world_before == g[0].world_before
    got = [(e.env_msg, *((e.response_i, e.response_j) if e.preferred == 0 else (e.response_j, e.response_i)))
           for e in ds.pairs()]
    assert len(got) == len(set(got)) and set(got) == expected


def test_preferred_indexes_effective_winner(noisy):
    winners = set()
    for t in noisy.trees:
        winners |= {(n.instruction, n.response) for n in t.step_nodes() if n.effective == 1}
    for e in build_reward_dataset(noisy.trees).pairs():
        good = [e.response_i, e.response_j][e.preferred]
        bad = [e.response_i, e.response_j][1 - e.preferred]
        assert (e.instruction, good) in winners and good != bad


def test_tree_structure(noisy):
    for ep, t in zip(noisy.episodes, noisy.trees):
        assert t.steps_used <= 10
        for n in t.step_nodes():
            cur, hops = n, 0
            while cur.parent_id is not None:
                cur = t.nodes[cur.parent_id]
                hops += 1
                assert hops <= len(t.nodes)
            assert cur.node_id == t.root_id


def test_jsonl_round_trip(tmp_path, noisy):
    ds = build_reward_dataset(noisy.trees, {"run": "r1"})
    p = tmp_path / "dr.jsonl"
    ds.write_jsonl(p)
    first = json.loads(p.read_text().splitlines()[0])
    assert list(first) == [f.name for f in fields(RewardExample)]
    back = RewardDataset.read_jsonl(p)
    assert back.examples == ds.examples and back.provenance == {"run": "r1"}
