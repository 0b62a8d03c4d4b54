"""Line-oriented knowledge-base text format (.kb).

Statements end with a period, one per line; '#' starts a comment. Examples:

    class Shop.
    individual s1.
    function-like hasId.
    spatial hasPosition.
    connects-roles(Shop, Corridor).
    is-a(Shop, Location).
    hasPosition(table1, 1.0, 0.5, 0.0).
    hasShape(table1, "box").

Bare names must be declared as classes or individuals; quoted tokens and
numbers are literals. The writer emits a sorted canonical form and omits the
built-in hierarchy, which the reader re-merges.
"""

from __future__ import annotations

import re
from pathlib import Path

from ..kb import BUILTIN_CLASSES, BUILTIN_IS_A, CONNECTS, IS_A, INSTANCE_OF, Atom, KnowledgeBase
from ._text import Diagnostics

_NAME = r"[A-Za-z_][A-Za-z0-9_-]*"
_NAME_RE = re.compile(rf"^{_NAME}$")
_DECL_RE = re.compile(rf"^(class|individual|function-like|spatial)\s+({_NAME})\s*\.$")
_CALL_RE = re.compile(rf"^({_NAME})\s*\((.*)\)\s*\.$")
_NUMBER_RE = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")

_BUILTIN_ATOMS = frozenset(Atom(IS_A, pair) for pair in BUILTIN_IS_A)


def _split_args(body: str, diag: Diagnostics, line: int) -> list[str]:
    """Comma-split that respects double-quoted strings."""
    args, current, in_string, escaped = [], [], False, False
    for ch in body:
        if in_string:
            current.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
            current.append(ch)
        elif ch == ",":
            args.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    if in_string:
        diag.fail(line, "unterminated string literal")
    last = "".join(current).strip()
    if last or args:
        args.append(last)
    return args


def _parse_arg(token: str, diag: Diagnostics, line: int) -> tuple[str, object]:
    """Returns (kind, value) with kind one of 'string', 'number', 'name'."""
    if token.startswith('"'):
        if len(token) < 2 or not token.endswith('"'):
            diag.fail(line, f"bad string literal {token!r}")
        return "string", token[1:-1].replace('\\"', '"').replace("\\\\", "\\")
    if _NUMBER_RE.match(token):
        return "number", float(token)
    if _NAME_RE.match(token):
        return "name", token
    diag.fail(line, f"bad argument {token!r}")


def _strip_comment(raw: str) -> str:
    out, in_string, escaped = [], False, False
    for ch in raw:
        if in_string:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == "#":
            break
        else:
            if ch == '"':
                in_string = True
            out.append(ch)
    return "".join(out).strip()


def read_kb(path) -> KnowledgeBase:
    path = Path(path)
    return parse_kb(path.read_text(), source=str(path))


def parse_kb(text: str, source: str = "<kb>") -> KnowledgeBase:
    diag = Diagnostics(source)
    classes: set[str] = set()
    individuals: set[str] = set()
    function_like: set[str] = set()
    spatial: set[str] = set()
    connects_roles: tuple[str, str] | None = None
    raw_atoms: list[tuple[int, str, list]] = []
    for i, raw in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(raw)
        if not stripped:
            continue
        if not stripped.endswith("."):
            diag.add(i, "statement must end with '.'")
            continue
        decl = _DECL_RE.match(stripped)
        if decl:
            keyword, name = decl.groups()
            {
                "class": classes,
                "individual": individuals,
                "function-like": function_like,
                "spatial": spatial,
            }[keyword].add(name)
            continue
        call = _CALL_RE.match(stripped)
        if not call:
            diag.add(i, f"cannot parse statement {stripped!r}")
            continue
        predicate, body = call.groups()
        args = [_parse_arg(tok, diag, i) for tok in _split_args(body, diag, i)]
        if not args:
            diag.add(i, f"{predicate!r} needs at least one argument")
            continue
        if predicate == "connects-roles":
            if len(args) != 2 or not all(kind == "name" for kind, _ in args):
                diag.add(i, "connects-roles takes two class names")
            else:
                connects_roles = (args[0][1], args[1][1])
            continue
        raw_atoms.append((i, predicate, args))
    diag.raise_if_any()

    all_classes = classes | BUILTIN_CLASSES
    arity: dict[str, int] = {IS_A: 2, INSTANCE_OF: 2, CONNECTS: 3}
    atoms: set[Atom] = set()
    for line, predicate, args in raw_atoms:
        expected = arity.setdefault(predicate, len(args))
        if expected != len(args):
            diag.add(line, f"{predicate!r} used with arity {len(args)}, earlier {expected}")
            continue
        kinds = [kind for kind, _ in args]
        values = [value for _, value in args]
        if predicate == IS_A:
            for kind, name in args:
                if kind != "name" or name not in all_classes:
                    diag.add(line, f"is-a argument {name!r} is not a declared class")
        elif predicate == INSTANCE_OF:
            if kinds[0] != "name" or values[0] not in individuals:
                diag.add(line, f"instance-of subject {values[0]!r} is not a declared individual")
            if len(values) > 1 and (kinds[1] != "name" or values[1] not in all_classes):
                diag.add(line, f"instance-of class {values[1]!r} is not declared")
        else:
            for kind, name in args:
                if kind == "name" and name not in all_classes and name not in individuals:
                    diag.add(line, f"undeclared name {name!r}")
        atoms.add(Atom(predicate, tuple(values)))
    diag.raise_if_any()
    return KnowledgeBase(
        classes=classes,
        individuals=individuals,
        atoms=atoms,
        function_like=function_like,
        spatial_predicates=spatial,
        connects_roles=connects_roles,
    )


def _format_arg(value, kb: KnowledgeBase) -> str:
    if isinstance(value, float):
        return repr(value)
    if value in kb.classes or value in kb.individuals:
        return value
    escaped = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def write_kb(path, kb: KnowledgeBase) -> None:
    Path(path).write_text(format_kb(kb))


def format_kb(kb: KnowledgeBase) -> str:
    lines: list[str] = []
    for name in sorted(kb.classes - BUILTIN_CLASSES):
        lines.append(f"class {name}.")
    for name in sorted(kb.individuals):
        lines.append(f"individual {name}.")
    for name in sorted(kb.function_like):
        lines.append(f"function-like {name}.")
    for name in sorted(kb.spatial_predicates):
        lines.append(f"spatial {name}.")
    if kb.connects_roles is not None:
        lines.append(f"connects-roles({kb.connects_roles[0]}, {kb.connects_roles[1]}).")
    emitted = sorted(
        (a for a in kb.atoms if a not in _BUILTIN_ATOMS),
        key=lambda a: (a.predicate, tuple(map(str, a.args))),
    )
    for a in emitted:
        args = ", ".join(_format_arg(v, kb) for v in a.args)
        lines.append(f"{a.predicate}({args}).")
    return "\n".join(lines) + "\n"
