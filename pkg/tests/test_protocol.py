import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA
from octoloop.actions import ActionCall
from octoloop.explore import OracleTeacher, run_episode
from octoloop.protocol import (
    INSTRUCTION,
    EpisodeMemory,
    MalformedResponse,
    TargetStates,
    TeacherResponse,
    build_env_message,
    parse_condition,
    parse_env_message,
    parse_teacher_response,
    prompt_hash,
    render_env_message,
    render_teacher_response,
    system_message,
    task_goal_of,
)
from octoloop.teacher import TeacherConfig, teacher_ask
from octoloop.world import RELATIONS, UNARY_STATES, ObservationConfig, TargetCondition

GOLDEN_ENV = (DATA / "bacon_initial_env.txt").read_text("utf-8")
STEP1 = (DATA / "bacon_step1_response.txt").read_text("utf-8")


def test_golden_environment_message(bacon_world):
    text = render_env_message(bacon_world, EpisodeMemory("cook_bacon"), ObservationConfig(reveal_hidden=True))
    assert text == GOLDEN_ENV


def test_fresh_episode_defaults(bacon_world):
    text = render_env_message(bacon_world, EpisodeMemory("cook_bacon"))
    assert "Original Subtasks: None\n" in text
    assert "Previous Action Code: No code\n" in text
    assert "Execution error: No error\n" in text
    assert text.endswith(INSTRUCTION)
    assert task_goal_of(text) == "cook_bacon"


def test_distances_two_decimals(bacon_world):
    msg = build_env_message(bacon_world, EpisodeMemory("g"))
    text = render_env_message(bacon_world, EpisodeMemory("g"))
    for oid, _, d in msg.observed_objects:
        assert f"({oid}, (" in text and f"), {d:.2f})" in text


def test_env_message_self_consistent(suite):
    memory = EpisodeMemory("goal", ["a", "b"], "def act(robot, env, camera):\n    donothing(env)", "TooFar: x")
    for task in suite:
        w = task.world(0)
        for mem in (EpisodeMemory(task.name), memory):
            msg = build_env_message(w, mem)
            back = parse_env_message(render_env_message(w, mem))
            assert back.observed_relations == msg.observed_relations
            assert [(o, s) for o, s, _ in back.observed_objects] == [(o, s) for o, s, _ in msg.observed_objects]
            assert all(abs(a[2] - b[2]) <= 0.005 for a, b in zip(back.observed_objects, msg.observed_objects))
            assert (back.inventory, back.task_goal, back.original_subtasks) == (msg.inventory, msg.task_goal,
                                                                               msg.original_subtasks)
            assert back.previous_action_code == msg.previous_action_code
            assert back.execution_error == msg.execution_error


def test_failure_text_reaches_next_message(bacon):
    class Flaky:
        kind = "test"

        def __init__(self):
            self.oracle = OracleTeacher(bacon)
            self.n = 0

        def ask(self, system_msg, env_msg, world=None):
            self.n += 1
            if self.n == 2:
                return STEP1.split("Target States:")[0]  # drop a section
            return self.oracle.ask(system_msg, env_msg, world)

    ep = run_episode(bacon, Flaky(), 0)
    failed = ep.steps[1]
    assert not failed.step_success and failed.error_code == "MalformedResponse"
    assert f"Execution error: {failed.error_text}\n" in ep.steps[2].env_msg
    assert ep.outcome == 1


def test_parse_step1_response():
    r = parse_teacher_response(STEP1)
    assert len(r.subtasks) == 6
    assert r.subtasks[0] == "Approach the fridge."
    assert "MoveBot(env, robot, fridge_xyejdx_0, camera)" in r.code
    assert r.target_states.inventory == []
    assert r.target_states.conditions == [TargetCondition.binary("robot", "nextto", "fridge_xyejdx_0", 1)]


def test_missing_target_states():
    with pytest.raises(MalformedResponse) as e:
        parse_teacher_response(STEP1.split("Target States:")[0])
    assert e.value.section == "Target States"


def test_sections_out_of_order():
    explain, rest = STEP1.split("Subtasks:")
    with pytest.raises(MalformedResponse):
        parse_teacher_response("Subtasks:" + rest.split("Code:")[0] + explain + "Code:" + rest.split("Code:")[1])


def test_condition_lines():
    assert parse_condition("(a) bacon_150, cookable, 1") == TargetCondition.unary("bacon_150", "cookable", 1)
    assert parse_condition("(b) robot, nextto, fridge_1, 0") == TargetCondition.binary("robot", "nextto", "fridge_1", 0)
    for bad in ("(a) bacon_150, crispy, 1", "(a) a, hovering, b, 1", "(a) a, cookable, 2", "(a) just words"):
        with pytest.raises(MalformedResponse):
            parse_condition(bad)


ident = st.from_regex(r"[a-z]{1,6}_[0-9]{1,3}", fullmatch=True)
sentence = st.from_regex(r"[A-Z][a-z]{1,8}( [a-z]{1,8}){0,4}\.?", fullmatch=True)
cond = st.one_of(
    st.builds(TargetCondition.unary, ident, st.sampled_from(UNARY_STATES), st.integers(0, 1)),
    st.builds(TargetCondition.binary, st.one_of(ident, st.just("robot")), st.sampled_from(RELATIONS),
              ident, st.integers(0, 1)),
)


@settings(max_examples=60, deadline=None)
@given(sentence, st.lists(sentence, min_size=1, max_size=8), st.lists(ident, max_size=3), st.lists(cond, max_size=30))
def test_response_round_trip(explain, subtasks, inventory, conditions):
    resp = TeacherResponse(explain, subtasks, "def act(robot, env, camera):\n    donothing(env)\n",
                           TargetStates(inventory, conditions))
    back = parse_teacher_response(render_teacher_response(resp))
    assert back == resp


def test_system_message_asset():
    text = system_message()
    assert "def act(robot,env,camera)" in text and "{response_format}" not in text
    assert prompt_hash() == prompt_hash(text) and len(prompt_hash()) == 16


def test_oracle_ask_is_pure(bacon):
    env = render_env_message(bacon.world(0), EpisodeMemory(bacon.name))
    cfg = TeacherConfig(kind="oracle")
    a = teacher_ask(cfg, system_message(), env, bacon.world(0), task=bacon)
    b = teacher_ask(cfg, system_message(), env, bacon.world(0), task=bacon)
    assert a == b
    assert "MoveBot(env, robot, fridge_xyejdx_0, camera)" in parse_teacher_response(a).code
