"""Minimal knowledge base with is-a / instance-of semantics.

The only inference rules are subclass transitivity, subclass reflexivity,
and instance propagation along subclass edges; every other predicate is
inert ground data. Each knowledge base implicitly contains the built-in
top-level class hierarchy, and user classes must attach beneath it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from .errors import SemmapError, ValidationFailure

IS_A = "is-a"
INSTANCE_OF = "instance-of"
CONNECTS = "connects"

# Built-in top-level hierarchy present in every knowledge base.
BUILTIN_CLASSES = frozenset(
    ["Thing", "Physical_Thing", "Abstract_Thing", "Location", "Connecting_Architecture"]
)
BUILTIN_IS_A = (
    ("Physical_Thing", "Thing"),
    ("Abstract_Thing", "Thing"),
    ("Location", "Thing"),
    ("Connecting_Architecture", "Physical_Thing"),
)


class ArityError(ValidationFailure):
    """An atom's argument count conflicts with its predicate signature."""


class TaxonomyCycleError(SemmapError):
    """Distinct classes form an is-a cycle."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("is-a cycle among classes: " + " -> ".join(self.cycle))


@dataclass(frozen=True)
class Violation:
    """One structured breach of a validity rule. Warnings do not fail checks."""

    code: str
    subject: str
    message: str
    severity: str = "error"  # "error" | "warning"

    def as_dict(self) -> dict:
        return {
            "code": self.code,
            "subject": self.subject,
            "message": self.message,
            "severity": self.severity,
        }


@dataclass(frozen=True)
class Atom:
    """Ground atom: predicate applied to class/individual names or literals."""

    predicate: str
    args: tuple

    def __post_init__(self):
        args = tuple(
            float(a) if isinstance(a, (int, float)) and not isinstance(a, bool) else a
            for a in self.args
        )
        if not args:
            raise ValidationFailure(f"atom {self.predicate!r} has no arguments")
        object.__setattr__(self, "args", args)

    def __repr__(self):
        return f"{self.predicate}({', '.join(map(str, self.args))})"


def atom(predicate: str, *args) -> Atom:
    return Atom(predicate, tuple(args))


@dataclass(frozen=True)
class KnowledgeBase:
    """Immutable set of declarations and ground atoms.

    The built-in hierarchy is merged in on construction, so an empty
    KnowledgeBase() already contains the top-level classes and their
    subclass edges.
    """

    classes: frozenset[str] = frozenset()
    individuals: frozenset[str] = frozenset()
    atoms: frozenset[Atom] = frozenset()
    function_like: frozenset[str] = frozenset()
    spatial_predicates: frozenset[str] = frozenset()
    connects_roles: tuple[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", frozenset(self.classes) | BUILTIN_CLASSES)
        object.__setattr__(self, "individuals", frozenset(self.individuals))
        atoms = frozenset(self.atoms) | {Atom(IS_A, pair) for pair in BUILTIN_IS_A}
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "function_like", frozenset(self.function_like))
        object.__setattr__(self, "spatial_predicates", frozenset(self.spatial_predicates))

    def with_atoms(self, extra_atoms) -> KnowledgeBase:
        return KnowledgeBase(
            classes=self.classes,
            individuals=self.individuals,
            atoms=self.atoms | frozenset(extra_atoms),
            function_like=self.function_like,
            spatial_predicates=self.spatial_predicates,
            connects_roles=self.connects_roles,
        )

    def without_atoms(self, removed) -> KnowledgeBase:
        return KnowledgeBase(
            classes=self.classes,
            individuals=self.individuals,
            atoms=self.atoms - frozenset(removed),
            function_like=self.function_like,
            spatial_predicates=self.spatial_predicates,
            connects_roles=self.connects_roles,
        )

    def with_individuals(self, extra) -> KnowledgeBase:
        return KnowledgeBase(
            classes=self.classes,
            individuals=self.individuals | frozenset(extra),
            atoms=self.atoms,
            function_like=self.function_like,
            spatial_predicates=self.spatial_predicates,
            connects_roles=self.connects_roles,
        )

    def predicate_arity(self) -> dict[str, int]:
        arity: dict[str, int] = {IS_A: 2, INSTANCE_OF: 2}
        for a in sorted(self.atoms, key=repr):
            arity.setdefault(a.predicate, len(a.args))
        return arity

    def spatial_atoms(self) -> frozenset[Atom]:
        """P_s: the atoms over predicates declared spatial."""
        return frozenset(a for a in self.atoms if a.predicate in self.spatial_predicates)


def _isa_edges(kb: KnowledgeBase) -> set[tuple[str, str]]:
    return {
        (a.args[0], a.args[1])
        for a in kb.atoms
        if a.predicate == IS_A
        and a.args[0] in kb.classes
        and a.args[1] in kb.classes
    }


def _find_cycle(edges: set[tuple[str, str]]) -> list[str] | None:
    """Any cycle through distinct classes, or None. Iterative DFS."""
    adjacency: dict[str, list[str]] = {}
    for child, parent in edges:
        if child != parent:
            adjacency.setdefault(child, []).append(parent)
    visited: set[str] = set()
    for start in sorted(adjacency):
        if start in visited:
            continue
        stack = [(start, iter(adjacency.get(start, ())))]
        path = [start]
        on_path = {start}
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if nxt in on_path:
                    return path[path.index(nxt):] + [nxt]
                if nxt not in visited:
                    stack.append((nxt, iter(adjacency.get(nxt, ()))))
                    path.append(nxt)
                    on_path.add(nxt)
                    advanced = True
                    break
            if not advanced:
                visited.add(node)
                on_path.discard(node)
                path.pop()
                stack.pop()
    return None


@lru_cache(maxsize=256)
def _ancestors(kb: KnowledgeBase) -> dict[str, frozenset[str]]:
    """Strict superclass sets per class; raises on distinct-class cycles."""
    edges = _isa_edges(kb)
    cycle = _find_cycle(edges)
    if cycle is not None:
        raise TaxonomyCycleError(cycle)
    parents: dict[str, set[str]] = {}
    for child, parent in edges:
        if child != parent:
            parents.setdefault(child, set()).add(parent)
    result: dict[str, frozenset[str]] = {}

    def visit(c: str) -> frozenset[str]:
        if c in result:
            return result[c]
        anc: set[str] = set()
        for p in parents.get(c, ()):
            anc.add(p)
            anc |= visit(p)
        result[c] = frozenset(anc)
        return result[c]

    for c in kb.classes:
        visit(c)
    return result


@lru_cache(maxsize=256)
def closure(kb: KnowledgeBase) -> frozenset[Atom]:
    """Least fixpoint of the atoms under subclass/instance propagation."""
    ancestors = _ancestors(kb)
    derived: set[Atom] = set(kb.atoms)
    for c in kb.classes:
        derived.add(Atom(IS_A, (c, c)))
        for anc in ancestors.get(c, ()):
            derived.add(Atom(IS_A, (c, anc)))
    for a in kb.atoms:
        if a.predicate == INSTANCE_OF and len(a.args) == 2:
            x, cls = a.args
            if cls in kb.classes:
                for anc in ancestors.get(cls, ()):
                    derived.add(Atom(INSTANCE_OF, (x, anc)))
    return frozenset(derived)


def entails(kb: KnowledgeBase, query: Atom) -> bool:
    arity = kb.predicate_arity().get(query.predicate)
    if arity is not None and arity != len(query.args):
        raise ArityError(
            f"predicate {query.predicate!r} has arity {arity}, got {len(query.args)}"
        )
    return query in closure(kb)


def core(kb: KnowledgeBase) -> frozenset[Atom]:
    """Irredundant generating subset of the closure.

    An atom is kept when the closure minus that atom no longer derives it.
    Reflexive is-a atoms are always dropped (they regenerate from the class
    declarations and would otherwise inflate diff counts).
    """
    cl = closure(kb)
    isa = {(a.args[0], a.args[1]) for a in cl if a.predicate == IS_A}
    isa_strict = {(b, a) for b, a in isa if b != a}
    inst = {(a.args[0], a.args[1]) for a in cl if a.predicate == INSTANCE_OF}
    kept: set[Atom] = set()
    for a in cl:
        if a.predicate == IS_A:
            b, top = a.args
            if b == top:
                continue
            redundant = any(
                (b, mid) in isa_strict and (mid, top) in isa_strict
                for mid in {m for bb, m in isa_strict if bb == b}
                if mid != top
            )
            if not redundant:
                kept.add(a)
        elif a.predicate == INSTANCE_OF:
            x, cls = a.args
            redundant = any(
                (mid, cls) in isa_strict for xx, mid in inst if xx == x and mid != cls
            )
            if not redundant:
                kept.add(a)
        else:
            kept.add(a)
    return frozenset(kept)


def check_function_like(kb: KnowledgeBase) -> list[Violation]:
    """One violation per (predicate, first argument) with multiple atoms."""
    groups: dict[tuple[str, object], set[Atom]] = {}
    for a in kb.atoms:
        if a.predicate in kb.function_like:
            groups.setdefault((a.predicate, a.args[0]), set()).add(a)
    violations = []
    for (pred, first), atoms in sorted(groups.items(), key=lambda kv: repr(kv[0])):
        if len(atoms) >= 2:
            violations.append(
                Violation(
                    code="function-like-cardinality",
                    subject=f"{pred}({first})",
                    message=f"function-like predicate {pred!r} has "
                    f"{len(atoms)} atoms for {first!r}",
                )
            )
    return violations


def validate_kb(kb: KnowledgeBase) -> list[Violation]:
    """Structural checks: declarations, typing, hierarchy attachment, roles."""
    violations: list[Violation] = []
    arity: dict[str, int] = {IS_A: 2, INSTANCE_OF: 2}
    for a in sorted(kb.atoms, key=repr):
        seen = arity.setdefault(a.predicate, len(a.args))
        if seen != len(a.args):
            violations.append(
                Violation(
                    code="arity-conflict",
                    subject=a.predicate,
                    message=f"{a!r} has arity {len(a.args)}, expected {seen}",
                )
            )
        if a.predicate == IS_A:
            for arg in a.args:
                if arg not in kb.classes:
                    violations.append(
                        Violation(
                            code="is-a-typing",
                            subject=str(arg),
                            message=f"{a!r}: is-a must relate declared classes",
                        )
                    )
        elif a.predicate == INSTANCE_OF:
            x, cls = (a.args + (None, None))[:2]
            if x not in kb.individuals:
                violations.append(
                    Violation(
                        code="instance-of-typing",
                        subject=str(x),
                        message=f"{a!r}: first argument must be a declared individual",
                    )
                )
            if cls not in kb.classes:
                violations.append(
                    Violation(
                        code="instance-of-typing",
                        subject=str(cls),
                        message=f"{a!r}: second argument must be a declared class",
                    )
                )
        # custom-predicate args may be string literals, which in memory are
        # indistinguishable from names; undeclared names in custom atoms are
        # caught by the file reader, where quoting disambiguates.
    try:
        ancestors = _ancestors(kb)
    except TaxonomyCycleError as err:
        violations.append(
            Violation(
                code="taxonomy-cycle",
                subject=" -> ".join(err.cycle),
                message=str(err),
            )
        )
        return violations
    for c in sorted(kb.classes - BUILTIN_CLASSES):
        if "Thing" not in ancestors.get(c, frozenset()):
            violations.append(
                Violation(
                    code="unattached-class",
                    subject=c,
                    message=f"class {c!r} does not attach under the built-in hierarchy",
                )
            )
    if kb.connects_roles is not None:
        role_a, role_b = kb.connects_roles
        for a in sorted(kb.atoms, key=repr):
            if a.predicate != CONNECTS or len(a.args) != 3:
                continue
            _, first, second = a.args
            if Atom(INSTANCE_OF, (first, role_a)) not in closure(kb):
                violations.append(
                    Violation(
                        code="connects-role",
                        subject=str(first),
                        message=f"{a!r}: {first!r} is not an instance of {role_a!r}",
                    )
                )
            if Atom(INSTANCE_OF, (second, role_b)) not in closure(kb):
                violations.append(
                    Violation(
                        code="connects-role",
                        subject=str(second),
                        message=f"{a!r}: {second!r} is not an instance of {role_b!r}",
                    )
                )
    violations.extend(check_function_like(kb))
    return violations
