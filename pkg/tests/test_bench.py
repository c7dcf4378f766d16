import json

import pytest

from octoloop.bench import COLUMNS, EvalReport, TaskOutcome, evaluate_oracle, evaluate_policy, render_report, write_report
from octoloop.learn.policy import PolicyModel
from octoloop.pipeline import suite_vocab


def outcome(task, seen, cat, ok, steps=3, execd=3):
    return TaskOutcome(task, 0, seen, cat, ok, steps, steps, execd)


SYNTH = EvalReport("toy", [
    outcome("a", True, "routine", 1),
    outcome("b", True, "routine", 0, 10, 7),
    outcome("c", True, "reasoning", 1),
    outcome("d", False, "routine", 1),
    outcome("e", False, "reasoning", 0, 10, 10),
])


def test_oracle_completes_routine_seen(suite):
    rep = evaluate_oracle([t for t in suite if t.seen_env and t.category == "routine"])
    assert rep.rate("Seen Env") == rep.rate("Follow") == 1.0
    assert rep.rate("Unseen Env") is None and rep.rate("Reason") is None


def test_untrained_policy_writes_executable_code(suite):
    vocab = suite_vocab(suite)
    rep = evaluate_policy(PolicyModel(vocab, dim=64, hidden=8), suite[:6], label="uniform")
    assert rep.executability == 1.0
    assert rep.executability >= rep.rate("All")


def test_rates_by_hand():
    assert SYNTH.rates == {"Seen Env": 2 / 3, "Unseen Env": 0.5, "Follow": 2 / 3, "Reason": 0.5, "All": 0.6}
    assert SYNTH.executability == pytest.approx(26 / 29)
    assert SYNTH.steps_histogram == {3: 3, 10: 2}


def test_all_column_is_weighted_mean():
    for a, b in (("Seen Env", "Unseen Env"), ("Follow", "Reason")):
        na, nb = len(SYNTH.split(a)), len(SYNTH.split(b))
        assert SYNTH.rate("All") == pytest.approx((na * SYNTH.rate(a) + nb * SYNTH.rate(b)) / (na + nb))


def test_table_rendering():
    text = render_report([SYNTH, EvalReport("empty")])
    lines = text.splitlines()
    assert lines[0].split(" | ")[1:] == [c for c in COLUMNS]
    row = [c.strip() for c in lines[2].split("|")]
    assert row == ["toy", "0.67", "0.50", "0.67", "0.50", "0.60"]
    assert lines[3] == "Executability (toy): 0.90"
    assert len(lines) == 4


def test_empty_report_is_header_only():
    lines = render_report(EvalReport("x")).splitlines()
    assert len(lines) == 2 and set(lines[1]) == {"-"}


def test_missing_split_renders_dash():
    rep = EvalReport("seen-only", [outcome("a", True, "routine", 1)])
    assert render_report(rep).splitlines()[2].split("|")[2].strip() == "-"


def test_report_files(tmp_path, suite):
    rep = evaluate_oracle(suite[:4], [0, 1])
    txt, js = write_report(rep, tmp_path)
    doc = json.loads(js.read_text())[0]
    assert doc["counts"]["All"] == 8 and doc["rates"]["All"] == 1.0
    assert txt.read_text() == render_report(rep)
    again = evaluate_oracle(suite[:4], [0, 1])
    write_report(again, tmp_path / "b")
    assert (tmp_path / "b" / "report.json").read_bytes() == js.read_bytes()
