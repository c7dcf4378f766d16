"""Command-line entry point: ``octoloop <command> [flags]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .bench import evaluate, evaluate_oracle, evaluate_policy, render_report, write_report
from .explore import collect_dataset, replay_trajectory, run_episode
from .feedback import RewardDataset, build_reward_dataset
from .learn.checkpoint import CheckpointError, load_policy, load_reward, save_policy, save_reward
from .learn.config import TrainConfig
from .learn.policy import exact_match_rate, sft_train
from .learn.ppo import policy_kl, ppo_train
from .learn.reward import reward_train
from .pipeline import ppo_contexts, read_jsonl, sft_examples, suite_vocab, write_jsonl
from .suite import Task, load_suite, load_task
from .teacher import ReplayTeacher, TeacherConfig, make_teacher

COMMANDS = ("simulate", "collect", "train-sft", "train-reward", "train-rlef", "eval", "replay")
TEACHER_FLAGS = {"teacher": "kind", "teacher_url": "endpoint_url", "model": "model_name"}
TRAIN_FLAGS = {"seed": "seed", "beta": "beta"}


class UsageError(Exception):
    """Bad flags or unusable inputs; maps to exit code 2."""


# ---------------------------------------------------------------------------
# flag handling


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="octoloop", description="Embodied agent data and training pipeline")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--seed", type=int, help="random seed (default 0)")
        sp.add_argument("--config", help="JSON file keyed by TrainConfig/TeacherConfig field names")

    def teacher_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--teacher", choices=("oracle", "http", "replay"))
        sp.add_argument("--teacher-url", help="chat-completions endpoint for --teacher http")
        sp.add_argument("--model", help="model name sent to the endpoint")
        sp.add_argument("--transcript", help="transcript file or directory for --teacher replay")

    sp = sub.add_parser("simulate", help="run one episode and print each environment message")
    common(sp)
    teacher_flags(sp)
    sp.add_argument("--tasks", default="bacon", help="task key, task file, or directory (first task is used)")

    sp = sub.add_parser("collect", help="run teacher-driven episodes and write trajectories and datasets")
    common(sp)
    teacher_flags(sp)
    sp.add_argument("--tasks", help="task directory, task file, or comma-separated built-in keys")
    sp.add_argument("--episodes", type=int, default=1, help="seeds per task, counting up from --seed")
    sp.add_argument("--attempts", type=int, default=1, help="teacher attempts per step (siblings)")
    sp.add_argument("--temperature", type=float, help="teacher temperature")
    sp.add_argument("--out", default="run")

    sp = sub.add_parser("train-sft", help="fit the token policy on collected SFT records")
    common(sp)
    sp.add_argument("--data", default="run", help="collect output directory")
    sp.add_argument("--tasks", help="tasks whose objects the vocabulary must cover (default: built-in suite)")
    sp.add_argument("--out", default="run/sft.ckpt")

    sp = sub.add_parser("train-reward", help="fit the reward model on the collected preference data")
    common(sp)
    sp.add_argument("--data", default="run")
    sp.add_argument("--out", default="run/reward.ckpt")

    sp = sub.add_parser("train-rlef", help="tune a policy with PPO against a reward model")
    common(sp)
    sp.add_argument("--data", default="run")
    sp.add_argument("--policy", default="run/sft.ckpt")
    sp.add_argument("--reward", default="run/reward.ckpt")
    sp.add_argument("--beta", type=float, help="KL coefficient")
    sp.add_argument("--out", default="run/rlef.ckpt")

    sp = sub.add_parser("eval", help="completion rates of a policy (or the oracle) on a task suite")
    common(sp)
    sp.add_argument("--policy", help="policy checkpoint; the oracle is evaluated when omitted")
    sp.add_argument("--tasks")
    sp.add_argument("--episodes", type=int, default=1)
    sp.add_argument("--out", help="directory for report.txt and report.json")
    sp.add_argument("--min-completion", type=float, help="exit 1 if the overall rate falls below this")

    sp = sub.add_parser("replay", help="re-execute a trajectory file and verify its hashes")
    sp.add_argument("trajectory")
    return p


def load_configs(args: argparse.Namespace) -> tuple[TrainConfig, TeacherConfig]:
    """Defaults, overridden by the config file, overridden by flags."""
    train: dict[str, Any] = {}
    teach: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
        teach_keys = {f.name for f in dataclasses.fields(TeacherConfig)}
        for k, v in doc.items():
            if k in train_keys:
                train[k] = v
            elif k in teach_keys:
                teach[k] = v
            else:
                raise UsageError(f"unknown config key {k!r}")
    for flag, field in TRAIN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            train[field] = getattr(args, flag)
    for flag, field in TEACHER_FLAGS.items():
        if getattr(args, flag, None) is not None:
            teach[field] = getattr(args, flag)
    if getattr(args, "temperature", None) is not None:
        teach["temperature"] = args.temperature
    if getattr(args, "transcript", None) is not None:
        teach["transcript"] = args.transcript
    try:
        return TrainConfig(**train), TeacherConfig(**teach)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e


def select_tasks(selector: str | None) -> list[Task]:
    if not selector:
        return load_suite()
    path = Path(selector)
    if path.is_dir():
        tasks = load_suite(path)
    elif path.is_file():
        tasks = [load_task(path)]
    else:
        suite = {t.key: t for t in load_suite()}
        keys = [k.strip() for k in selector.split(",") if k.strip()]
        missing = [k for k in keys if k not in suite]
        if missing:
            raise UsageError(f"no task file or built-in task named {', '.join(missing)}")
        tasks = [suite[k] for k in keys]
    if not tasks:
        raise UsageError(f"no tasks found in {selector}")
    return tasks


def _teacher_factory(cfg: TeacherConfig):
    if cfg.kind == "http" and not cfg.endpoint_url:
        raise UsageError("--teacher http needs --teacher-url")
    if cfg.kind == "replay":
        if not cfg.transcript:
            raise UsageError("--teacher replay needs --transcript")
        src = Path(cfg.transcript)
        if src.is_dir():
            return lambda task, seed: ReplayTeacher.from_file(src / f"{task.key}_{seed}.teacher.jsonl")
    return lambda task, seed: make_teacher(cfg, task, seed)


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, train: TrainConfig, teach: TeacherConfig) -> int:
    task = select_tasks(args.tasks)[0]
    teacher = _teacher_factory(teach)(task, train.seed)

    def show(rec) -> None:
        print(f"=== step {rec.step} ===")
        print(rec.env_msg)
        print("--- response ---")
        print(rec.response.rstrip("\n"))
        print(f"--- result: success={rec.step_success} ({rec.error_text})")

    ep = run_episode(task, teacher, train.seed, on_step=show)
    print(f"task {task.key}: {'completed' if ep.outcome else 'not completed'} in {ep.steps_used} steps")
    return 0


def cmd_collect(args, train: TrainConfig, teach: TeacherConfig) -> int:
    if args.episodes < 1 or args.attempts < 1:
        raise UsageError("--episodes and --attempts must be positive")
    tasks = select_tasks(args.tasks)
    seeds = list(range(train.seed, train.seed + args.episodes))
    out = Path(args.out)
    col = collect_dataset(tasks, teach, seeds, out, args.attempts, teacher_factory=_teacher_factory(teach))
    write_jsonl(out / "sft.jsonl", col.sft)
    ds = build_reward_dataset(col.trees, {"teacher": teach.kind, "seeds": seeds, "attempts_per_step": args.attempts})
    ds.write_jsonl(out / "reward.jsonl")
    done = sum(ep.outcome for ep in col.episodes)
    invalid = sum(not ep.valid for ep in col.episodes)
    print(f"episodes: {len(col.episodes)}  completed: {done}  invalid: {invalid}")
    print(f"sft records: {len(col.sft)}  reward pairs: {len(ds.pairs())}  singletons: {len(ds.singletons())}")
    if col.failures():
        print("step failures: " + ", ".join(f"{k}={v}" for k, v in col.failures().items()))
    print(f"written to {out}")
    return 0


def cmd_train_sft(args, train: TrainConfig, teach: TeacherConfig) -> int:
    records = read_jsonl(_need(Path(args.data) / "sft.jsonl", "SFT records"))
    if not records:
        raise UsageError("no SFT records to train on")
    examples = sft_examples(records, train.dim)
    policy, hist = sft_train(examples, train, suite_vocab(select_tasks(args.tasks)))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_policy(policy, args.out, train_config=train.to_dict())
    print(f"examples: {len(examples)}  epochs run: {len(hist) - 1}  final loss: {hist[-1]:.6f}")
    print(f"exact-script accuracy: {exact_match_rate(policy, examples):.2f}")
    print(f"policy written to {args.out}")
    return 0


def cmd_train_reward(args, train: TrainConfig, teach: TeacherConfig) -> int:
    ds = RewardDataset.read_jsonl(_need(Path(args.data) / "reward.jsonl", "reward dataset"))
    if not ds.examples:
        raise UsageError("reward dataset is empty")
    model, rep = reward_train(ds, train)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_reward(model, args.out, train_config=train.to_dict())
    print(f"pairs: {len(ds.pairs())}  singletons: {len(ds.singletons())}  held out: {rep.n_heldout}")
    print(f"pairwise accuracy: train {rep.train_accuracy:.2f}  held-out {rep.heldout_accuracy:.2f}")
    print(f"reward model written to {args.out}")
    return 0


def cmd_train_rlef(args, train: TrainConfig, teach: TeacherConfig) -> int:
    records = read_jsonl(_need(Path(args.data) / "sft.jsonl", "SFT records"))
    policy = load_policy(_need(Path(args.policy), "policy checkpoint"))
    rm = load_reward(_need(Path(args.reward), "reward checkpoint"))
    contexts = ppo_contexts(records, policy.dim)
    if not contexts:
        raise UsageError("no contexts to tune on")
    tuned, trace = ppo_train(policy, rm, contexts, train)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_policy(tuned, args.out, train_config=train.to_dict())
    print(f"contexts: {len(contexts)}  iterations: {len(trace.mean_reward)}  skipped: {trace.skipped}")
    print(f"mean reward: first {trace.mean_reward[0]:.4f}  last {trace.mean_reward[-1]:.4f}")
    print(f"KL to initial policy: {policy_kl(tuned, policy, contexts):.4f}")
    print(f"policy written to {args.out}")
    return 0


def cmd_eval(args, train: TrainConfig, teach: TeacherConfig) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be positive")
    tasks = select_tasks(args.tasks)
    seeds = list(range(train.seed, train.seed + args.episodes))
    if args.policy:
        policy = load_policy(_need(Path(args.policy), "policy checkpoint"))
        report = evaluate_policy(policy, tasks, seeds, label=Path(args.policy).stem)
    elif teach.kind == "oracle":
        report = evaluate_oracle(tasks, seeds)
    else:
        report = evaluate(tasks, seeds, _teacher_factory(teach), label=teach.kind)
    print(render_report(report), end="")
    if args.out:
        write_report(report, args.out)
    if args.min_completion is not None:
        overall = report.rate("All") or 0.0
        if overall < args.min_completion:
            print(f"FAIL: overall completion {overall:.2f} is below {args.min_completion:.2f}")
            return 1
    return 0


def cmd_replay(args, train: TrainConfig, teach: TeacherConfig) -> int:
    rep = replay_trajectory(_need(Path(args.trajectory), "trajectory"))
    print(rep.render())
    return 0 if rep.ok else 1


HANDLERS = {
    "simulate": cmd_simulate,
    "collect": cmd_collect,
    "train-sft": cmd_train_sft,
    "train-reward": cmd_train_reward,
    "train-rlef": cmd_train_rlef,
    "eval": cmd_eval,
    "replay": cmd_replay,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        train, teach = load_configs(args)
        return HANDLERS[args.command](args, train, teach)
    except (UsageError, CheckpointError) as e:
        print(f"octoloop {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
