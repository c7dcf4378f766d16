"""Restricted action-script language: the body of ``def act(robot, env, camera):``.

Only three statement forms are accepted::

    name = registry(env, "object_id")
    MoveBot(env, robot, name, camera)
    # comment

Anything else (loops, conditionals, imports, arithmetic, helper functions)
is rejected with a :class:`ParseError` carrying the offending line.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .actions import (
    ACTION_LIST,
    OBJECT_SLOTS,
    SIGNATURES,
    ActionCall,
    ActionOutcome,
    execute,
    is_literal,
    literal,
    unquote,
)
from .world import WorldState

PARSE_ERROR_KINDS = ("BadHeader", "UnknownFunction", "BadArity", "BadToken", "DisallowedConstruct")
SIMILARITY_THRESHOLD = 0.4
CODE_ERROR_CODES = ("NotRegistered", "AlreadyRegistered")
HEADER = "def act(robot, env, camera):"
INDENT = "    "

_HEADER_RE = re.compile(r"^def\s+act\s*\(\s*robot\s*,\s*env\s*,\s*camera\s*\)\s*:\s*$")
_ASSIGN_RE = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(.+)$")
_CALL_RE = re.compile(r"^([A-Za-z_]\w*)\s*\((.*)\)$")
_IDENT_RE = re.compile(r"^[A-Za-z_]\w*$")
_STRING_RE = re.compile(r"""^("[^"\\]*"|'[^'\\]*')$""")
_KEYWORDS = {
    "for", "while", "if", "elif", "else", "import", "from", "def", "return", "with",
    "try", "except", "finally", "class", "lambda", "pass", "break", "continue",
    "yield", "assert", "del", "global", "nonlocal", "raise", "async", "await",
}


class ParseError(ValueError):
    def __init__(self, line: int, kind: str, message: str):
        super().__init__(f"line {line}: {kind}: {message}")
        self.line = line
        self.kind = kind
        self.message = message


@dataclass(frozen=True)
class Assign:
    var: str
    call: ActionCall
    line: int = 0

    def render(self) -> str:
        return f"{self.var} = {self.call.render()}"


@dataclass(frozen=True)
class Call:
    call: ActionCall
    line: int = 0

    def render(self) -> str:
        return self.call.render()


@dataclass(frozen=True)
class Comment:
    text: str
    line: int = 0

    def render(self) -> str:
        return f"# {self.text}" if self.text else "#"


Stmt = Assign | Call | Comment


@dataclass(frozen=True)
class Script:
    body: tuple[Stmt, ...] = ()
    source_text: str = ""
    # statement index -> name that could not be matched to a world object
    unresolved: tuple[tuple[int, str], ...] = ()

    @property
    def statements(self) -> list[Assign | Call]:
        return [s for s in self.body if not isinstance(s, Comment)]

    @property
    def comments(self) -> list[str]:
        return [s.text for s in self.body if isinstance(s, Comment)]

    def ast(self) -> tuple:
        """Structure without line numbers or source, for fixpoint comparisons."""
        out = []
        for s in self.body:
            if isinstance(s, Assign):
                out.append(("assign", s.var, s.call.kind, s.call.args))
            elif isinstance(s, Call):
                out.append(("call", s.call.kind, s.call.args))
            else:
                out.append(("comment", s.text))
        return tuple(out)


# ---------------------------------------------------------------------------
# parsing


def _strip_inline_comment(code: str) -> str:
    quote = None
    for i, ch in enumerate(code):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return code[:i].rstrip()
    return code


def _split_args(text: str, lineno: int) -> list[str]:
    text = text.strip()
    if not text:
        return []
    args = [a.strip() for a in text.split(",")]
    for a in args:
        if not (_IDENT_RE.match(a) or _STRING_RE.match(a)):
            raise ParseError(lineno, "BadToken", f"argument {a!r} is not a name or string literal")
    return args


def _parse_call(code: str, lineno: int) -> ActionCall:
    m = _CALL_RE.match(code)
    if not m:
        raise ParseError(lineno, "DisallowedConstruct", f"expected a function call, got {code!r}")
    name, inner = m.group(1), m.group(2)
    if name in _KEYWORDS:
        raise ParseError(lineno, "DisallowedConstruct", f"{name!r} is not allowed")
    if "(" in inner or ")" in inner:
        raise ParseError(lineno, "DisallowedConstruct", "nested calls are not allowed")
    if name not in SIGNATURES:
        raise ParseError(lineno, "UnknownFunction", f"{name} is not an available function")
    args = _split_args(inner, lineno)
    expected = len(SIGNATURES[name])
    if len(args) != expected:
        raise ParseError(lineno, "BadArity", f"{name} takes {expected} arguments, got {len(args)}")
    return ActionCall(name, tuple(args))


def _parse_stmt(code: str, lineno: int) -> Stmt:
    first = re.split(r"[\s(:]", code, maxsplit=1)[0]
    if first in _KEYWORDS:
        raise ParseError(lineno, "DisallowedConstruct", f"{first!r} statements are not allowed")
    m = _ASSIGN_RE.match(code)
    if m:
        var, rhs = m.group(1), m.group(2).strip()
        call = _parse_call(rhs, lineno)
        if call.kind != "registry":
            raise ParseError(lineno, "DisallowedConstruct", "only registry results may be assigned")
        if not is_literal(call.args[1]):
            raise ParseError(lineno, "BadToken", "registry expects a string literal object name")
        return Assign(var, call, lineno)
    call = _parse_call(code, lineno)
    if call.kind == "registry":
        raise ParseError(lineno, "DisallowedConstruct", "registry must be assigned to a name")
    return Call(call, lineno)


def parse(source: str) -> Script:
    lines = source.splitlines()
    header_at = None
    header_indent = 0
    body: list[Stmt] = []
    body_indent = None
    for idx, raw in enumerate(lines, start=1):
        text = raw.rstrip()
        stripped = text.strip()
        if not stripped or stripped.startswith("```"):
            continue
        indent = len(text) - len(text.lstrip())
        if header_at is None:
            if stripped.startswith("#"):
                continue
            if _HEADER_RE.match(stripped):
                header_at, header_indent = idx, indent
                continue
            if stripped.startswith(("import ", "from ", "class ")):
                raise ParseError(idx, "DisallowedConstruct", f"{stripped.split()[0]!r} is not allowed")
            raise ParseError(idx, "BadHeader", "expected 'def act(robot, env, camera):'")
        if indent <= header_indent:
            if _HEADER_RE.match(stripped) or stripped.startswith("def "):
                raise ParseError(idx, "DisallowedConstruct", "only a single act function is allowed")
            raise ParseError(idx, "DisallowedConstruct", "code outside the act function")
        if body_indent is None:
            body_indent = indent
        elif indent != body_indent and not stripped.startswith("#"):
            raise ParseError(idx, "DisallowedConstruct", "nested blocks are not allowed")
        if stripped.startswith("#"):
            body.append(Comment(stripped[1:].strip(), idx))
            continue
        code = _strip_inline_comment(stripped)
        if code.endswith(":"):
            raise ParseError(idx, "DisallowedConstruct", "compound statements are not allowed")
        body.append(_parse_stmt(code, idx))
    if header_at is None:
        raise ParseError(max(len(lines), 1), "BadHeader", "missing 'def act(robot, env, camera):'")
    return Script(tuple(body), source)


def render(script: Script) -> str:
    """Canonical text: fixed header, 4-space indent, one statement per line."""
    lines = [HEADER] + [INDENT + s.render() for s in script.body]
    return "\n".join(lines) + "\n"


def canonical(script: Script) -> Script:
    return parse(render(script))


# ---------------------------------------------------------------------------
# name resolution


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    a, b = a.lower(), b.lower()
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def match_object(name: str, world: WorldState) -> tuple[str | None, float]:
    """Best world id for `name`, scored against both the id and its category."""
    if name in world.objects:
        return name, 1.0
    best, best_score = None, -1.0
    for oid in sorted(world.objects):
        score = max(similarity(name, oid), similarity(name, world.objects[oid].category))
        if score > best_score:
            best, best_score = oid, score
    if best is None or best_score < SIMILARITY_THRESHOLD:
        return None, max(best_score, 0.0)
    return best, best_score


def resolve_names(script: Script, world: WorldState) -> Script:
    body: list[Stmt] = []
    unresolved = dict(script.unresolved)
    for i, s in enumerate(script.body):
        if isinstance(s, Comment):
            body.append(s)
            continue
        args = list(s.call.args)
        for k, a in enumerate(args):
            if not is_literal(a):
                continue
            oid, _ = match_object(unquote(a), world)
            if oid is None:
                unresolved.setdefault(i, unquote(a))
            else:
                args[k] = literal(oid)
        call = replace(s.call, args=tuple(args))
        body.append(replace(s, call=call))
    return replace(script, body=tuple(body), unresolved=tuple(sorted(unresolved.items())))


# ---------------------------------------------------------------------------
# execution


@dataclass
class StepResult:
    outcomes: list[ActionOutcome] = field(default_factory=list)
    halted_at: int | None = None
    error_text: str = "No error"
    warnings: list[str] = field(default_factory=list)
    error_code: str | None = None
    # the failure is in the code itself (names, bindings), not the physical world
    code_error: bool = False

    @property
    def ok(self) -> bool:
        return self.halted_at is None


def lint(script: Script) -> list[str]:
    """Warn about action-list calls not followed by donothing."""
    stmts = script.statements
    out = []
    for i, s in enumerate(stmts):
        if isinstance(s, Call) and s.call.kind in ACTION_LIST:
            nxt = stmts[i + 1] if i + 1 < len(stmts) else None
            if not (isinstance(nxt, Call) and nxt.call.kind == "donothing"):
                out.append(f"line {s.line}: {s.call.kind} is not followed by donothing")
    return out


def run(script: Script, world: WorldState) -> StepResult:
    """Execute statements in order, stopping at the first failure."""
    result = StepResult(warnings=lint(script))
    unresolved = dict(script.unresolved)
    exec_index = -1
    for i, s in enumerate(script.body):
        if isinstance(s, Comment):
            continue
        exec_index += 1
        if i in unresolved:
            result.halted_at = exec_index
            result.error_code = "UnknownObject"
            result.code_error = True
            result.error_text = (
                f"UnknownObject: no object in the scene matches {unresolved[i]!r} "
                f"(line {s.line}: {s.render()})"
            )
            return result
        if isinstance(s, Assign):
            outcome = execute(world, s.call, bind_as=s.var)
        else:
            outcome = execute(world, s.call)
        result.outcomes.append(outcome)
        if not outcome.success:
            result.halted_at = exec_index
            result.error_code = outcome.error.code
            result.code_error = outcome.error.code in CODE_ERROR_CODES
            result.error_text = f"{outcome.error} (line {s.line}: {s.render()})"
            return result
    return result


# ---------------------------------------------------------------------------
# building scripts from grounded calls


def var_name(oid: str) -> str:
    name = re.sub(r"\W", "_", oid)
    return name if _IDENT_RE.match(name) and not name[0].isdigit() else "obj_" + name


def grounded_script(calls: list[ActionCall], comment: str | None = None) -> Script:
    """Self-contained script: registry preludes in first-use order, then the calls."""
    lines = [HEADER]
    if comment:
        lines.append(INDENT + "# " + comment)
    bound: set[str] = set()
    for call in calls:
        args = []
        for a in call.args:
            if not is_literal(a):
                args.append(a)
                continue
            oid = unquote(a)
            var = var_name(oid)
            if var not in bound:
                bound.add(var)
                lines.append(f"{INDENT}{var} = registry(env, {literal(oid)})")
            args.append(var)
        lines.append(INDENT + ActionCall(call.kind, tuple(args)).render())
    return parse("\n".join(lines) + "\n")


def ground_calls(script: Script, registry: dict[str, str] | None = None) -> list[ActionCall]:
    """Non-registry statements with variables replaced by quoted object ids.

    Names bound inside the script take precedence over `registry` (bindings
    made by earlier steps). Unbound names are left as they are.
    """
    names = dict(registry or {})
    out = []
    for s in script.statements:
        if isinstance(s, Assign):
            names[s.var] = unquote(s.call.args[1])
            continue
        args = tuple(
            literal(names[a]) if a in names and i in OBJECT_SLOTS[s.call.kind] else a
            for i, a in enumerate(s.call.args)
        )
        out.append(ActionCall(s.call.kind, args))
    return out
