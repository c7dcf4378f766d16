"""Token sequences for scripts: [BOS, kind, arg..., SEP, kind, ..., EOS]."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..actions import KINDS, OBJECT_SLOTS, ActionCall, is_literal, unquote
from ..dsl import Script, ground_calls, grounded_script

BOS, EOS, SEP = "BOS", "EOS", "SEP"
SPECIALS = (BOS, EOS, SEP)
DEFAULT_OBJECT_CAP = 256


class UnknownToken(ValueError):
    pass


class TruncatedSequence(UnknownToken):
    pass


@dataclass(frozen=True)
class TokenVocab:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate vocabulary token")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, object_ids: Iterable[str], cap: int = DEFAULT_OBJECT_CAP) -> TokenVocab:
        objs = sorted(set(object_ids) - set(SPECIALS) - set(KINDS))[:cap]
        return cls((*SPECIALS, *KINDS, *objs))

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise UnknownToken(f"{token!r} is not in the vocabulary") from None

    def encode(self, seq: Sequence[str]) -> list[int]:
        return [self.id(t) for t in seq]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def objects(self) -> tuple[str, ...]:
        return self.tokens[len(SPECIALS) + len(KINDS):]

    def is_kind(self, i: int) -> bool:
        return len(SPECIALS) <= i < len(SPECIALS) + len(KINDS)

    def is_object(self, i: int) -> bool:
        return i >= len(SPECIALS) + len(KINDS)


def calls_to_tokens(calls: Iterable[Sequence[str]]) -> list[str]:
    """[[kind, obj...], ...] -> token strings."""
    out = [BOS]
    for i, call in enumerate(calls):
        if i:
            out.append(SEP)
        out.extend(call)
    out.append(EOS)
    return out


def script_to_tokens(script: Script, registry: dict[str, str] | None = None) -> list[str]:
    grounded = []
    for call in ground_calls(script, registry):
        objs = []
        for i in OBJECT_SLOTS[call.kind]:
            a = call.args[i]
            if not is_literal(a):
                raise UnknownToken(f"{a!r} is not bound to an object")
            objs.append(unquote(a))
        grounded.append([call.kind, *objs])
    return calls_to_tokens(grounded)


def tokens_to_calls(seq: Sequence[str]) -> list[ActionCall]:
    if not seq or seq[0] != BOS:
        raise UnknownToken("sequence must start with BOS")
    if seq[-1] != EOS:
        raise TruncatedSequence("sequence does not end with EOS")
    body = list(seq[1:-1])
    if BOS in body or EOS in body:
        raise UnknownToken("BOS/EOS inside the sequence")
    calls = []
    chunk: list[str] = []
    for tok in body + [SEP]:
        if tok != SEP:
            chunk.append(tok)
            continue
        if not chunk:
            raise UnknownToken("empty statement")
        kind, *objs = chunk
        if kind not in KINDS or kind == "registry":
            raise UnknownToken(f"{kind!r} is not an action kind")
        if len(objs) != len(OBJECT_SLOTS[kind]):
            raise UnknownToken(f"{kind} takes {len(OBJECT_SLOTS[kind])} object arguments, got {len(objs)}")
        for o in objs:
            if o in KINDS or o in SPECIALS:
                raise UnknownToken(f"{o!r} is not an object")
        calls.append(ActionCall.grounded(kind, *objs))
        chunk = []
    return calls


def tokens_to_script(seq: Sequence[str]) -> Script:
    return grounded_script(tokens_to_calls(seq))


def templated_response(calls: Sequence[ActionCall]):
    """Four-section response around decoded code; the prose is fixed templates."""
    from ..explore import describe, objects_of
    from ..protocol import TargetStates, TeacherResponse
    from ..world import AGENT, TargetCondition
    from ..actions import UNARY_ACTIONS, state_effect

    acts = [c for c in calls if c.kind != "donothing"] or list(calls)
    conds, held = [], []
    for c in acts:
        objs = objects_of(c)
        if c.kind == "MoveBot":
            conds.append(TargetCondition.binary(AGENT, "nextto", objs[0], 1))
        elif c.kind == "EasyGrasp":
            held.append(objs[0])
        elif c.kind in ("put_ontop", "put_inside"):
            rel = "ontop" if c.kind == "put_ontop" else "inside"
            conds.append(TargetCondition.binary(objs[0], rel, objs[1], 1))
            if objs[0] in held:
                held.remove(objs[0])
        elif c.kind in UNARY_ACTIONS:
            state, value = state_effect(c.kind)
            conds.append(TargetCondition.unary(objs[0], state, value))
    return TeacherResponse(
        explain="Next step proposed by the learned policy.",
        subtasks=[describe(c) for c in acts],
        code=grounded_script(list(calls)).source_text,
        target_states=TargetStates(inventory=held, conditions=conds),
    )


def response_text_for_tokens(seq: Sequence[str]) -> str:
    from ..protocol import render_teacher_response

    return render_teacher_response(templated_response(tokens_to_calls(seq)))
