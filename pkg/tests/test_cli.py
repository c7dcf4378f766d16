import json

import pytest

from octoloop.cli import load_configs, main, _parser
from octoloop.learn.checkpoint import save_policy
from octoloop.learn.policy import PolicyModel
from octoloop.pipeline import suite_vocab


def test_collect_then_replay(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["collect", "--tasks", "bacon,lamp_on", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "episodes: 2  completed: 2" in text
    assert len((out / "sft.jsonl").read_text().splitlines()) > 6
    assert (out / "reward.jsonl").exists()
    assert main(["replay", str(out / "bacon_0.traj.jsonl")]) == 0
    assert capsys.readouterr().out.strip() == "OK: 6 steps verified"


def test_eval_threshold_exit_code(tmp_path, suite, capsys):
    ckpt = tmp_path / "weak.ckpt"
    save_policy(PolicyModel(suite_vocab(suite), dim=64, hidden=8), ckpt)
    code = main(["eval", "--policy", str(ckpt), "--tasks", "bacon,tv_on", "--min-completion", "0.5",
                 "--out", str(tmp_path / "rep")])
    assert code == 1
    assert "FAIL" in capsys.readouterr().out
    assert (tmp_path / "rep" / "report.json").exists()
    assert main(["eval", "--tasks", "bacon,tv_on", "--min-completion", "1.0"]) == 0


@pytest.mark.parametrize("argv", [
    ["collect", "--bogus"],
    ["nosuch"],
    ["eval", "--tasks", "no_such_task"],
    ["collect", "--episodes", "0"],
    ["train-sft", "--data", "/nonexistent"],
    ["collect", "--teacher", "http"],
])
def test_usage_errors_exit_two(argv, capsys):
    assert main(argv) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "beta": 0.4, "temperature": 0.3, "epochs": 7}))
    args = _parser().parse_args(["train-rlef", "--config", str(cfg), "--beta", "0.9"])
    train, teach = load_configs(args)
    assert (train.seed, train.beta, train.epochs, teach.temperature) == (5, 0.9, 7, 0.3)
    assert load_configs(_parser().parse_args(["train-rlef"]))[0].beta == 0.1
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["train-rlef", "--config", str(cfg)]) == 2


def test_simulate_prints_messages(capsys):
    assert main(["simulate", "--tasks", "lamp_on"]) == 0
    out = capsys.readouterr().out
    assert "=== step 1 ===" in out and "Observed Objects:" in out and "completed" in out
