from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semmap.kb import (
    BUILTIN_CLASSES,
    ArityError,
    Atom,
    KnowledgeBase,
    TaxonomyCycleError,
    atom,
    check_function_like,
    closure,
    core,
    entails,
    validate_kb,
)

from oracles import naive_core, naive_kb_closure


def mall_kb() -> KnowledgeBase:
    return KnowledgeBase(
        classes={"Person", "Shop", "Corridor", "Advertisement"},
        individuals={"s1", "ad1", "p1"},
        atoms={
            atom("is-a", "Person", "Physical_Thing"),
            atom("is-a", "Shop", "Location"),
            atom("is-a", "Corridor", "Location"),
            atom("is-a", "Advertisement", "Abstract_Thing"),
            atom("instance-of", "s1", "Shop"),
            atom("instance-of", "ad1", "Advertisement"),
            atom("instance-of", "p1", "Person"),
            atom("hasAdvertisement", "s1", "ad1"),
        },
    )


def random_kb(rng: np.random.Generator, n_classes=8, n_individuals=5, n_atoms=15) -> KnowledgeBase:
    """Random acyclic taxonomy plus instance and custom atoms."""
    classes = [f"C{i}" for i in range(rng.integers(1, n_classes + 1))]
    individuals = [f"x{i}" for i in range(rng.integers(0, n_individuals + 1))]
    attach_targets = sorted(BUILTIN_CLASSES)
    atoms = set()
    for i, c in enumerate(classes):
        # attach under an earlier class or a built-in: guarantees a DAG
        above = classes[:i] + attach_targets
        atoms.add(atom("is-a", c, above[rng.integers(0, len(above))]))
    budget = int(rng.integers(0, n_atoms + 1))
    for _ in range(budget):
        kind = rng.integers(0, 3)
        if kind == 0 and len(classes) >= 2:
            j = int(rng.integers(1, len(classes)))
            i = int(rng.integers(0, j))
            atoms.add(atom("is-a", classes[j], classes[i]))
        elif kind == 1 and individuals and classes:
            atoms.add(
                atom(
                    "instance-of",
                    individuals[rng.integers(0, len(individuals))],
                    classes[rng.integers(0, len(classes))],
                )
            )
        elif individuals:
            a = individuals[rng.integers(0, len(individuals))]
            b = individuals[rng.integers(0, len(individuals))]
            atoms.add(atom("near", a, b))
    return KnowledgeBase(classes=set(classes), individuals=set(individuals), atoms=atoms)


class TestClosure:
    def test_shop_instance_propagates_to_location(self):
        kb = mall_kb()
        assert atom("instance-of", "s1", "Location") in closure(kb)
        assert atom("instance-of", "s1", "Thing") in closure(kb)

    def test_reflexivity_for_declared_class(self):
        kb = KnowledgeBase(classes={"A"}, atoms={atom("is-a", "A", "Thing")})
        assert atom("is-a", "A", "A") in closure(kb)
        assert atom("is-a", "Thing", "Thing") in closure(kb)

    def test_matches_naive_fixpoint_on_random_kbs(self, rng):
        for _ in range(40):
            kb = random_kb(rng)
            assert closure(kb) == naive_kb_closure(kb)

    def test_distinct_class_cycle_rejected(self):
        kb = KnowledgeBase(
            classes={"A", "B"},
            atoms={
                atom("is-a", "A", "B"),
                atom("is-a", "B", "A"),
                atom("is-a", "A", "Thing"),
            },
        )
        with pytest.raises(TaxonomyCycleError) as err:
            closure(kb)
        assert set(err.value.cycle) >= {"A", "B"}

    def test_custom_predicates_inert(self):
        kb = mall_kb()
        derived = {a for a in closure(kb) if a.predicate == "hasAdvertisement"}
        assert derived == {atom("hasAdvertisement", "s1", "ad1")}


class TestEntails:
    def test_subclass_instance(self):
        kb = KnowledgeBase(
            classes={"A", "B"},
            individuals={"a"},
            atoms={
                atom("is-a", "B", "A"),
                atom("is-a", "A", "Thing"),
                atom("instance-of", "a", "B"),
            },
        )
        assert entails(kb, atom("instance-of", "a", "A"))

    def test_asserted_atoms_entailed(self):
        kb = mall_kb()
        for a in kb.atoms:
            assert entails(kb, a)

    def test_subsumption_not_symmetric(self):
        kb = KnowledgeBase(
            classes={"A", "B"},
            atoms={atom("is-a", "B", "A"), atom("is-a", "A", "Thing")},
        )
        assert entails(kb, atom("is-a", "B", "A"))
        assert not entails(kb, atom("is-a", "A", "B"))
        assert atom("is-a", "A", "B") not in naive_kb_closure(kb)

    def test_arity_mismatch_raises(self):
        kb = mall_kb()
        with pytest.raises(ArityError):
            entails(kb, atom("hasAdvertisement", "s1"))
        with pytest.raises(ArityError):
            entails(kb, atom("is-a", "Shop", "Location", "extra"))


class TestCore:
    def test_transitive_edge_dropped(self):
        kb = KnowledgeBase(
            classes={"A", "B", "C"},
            atoms={
                atom("is-a", "A", "Thing"),
                atom("is-a", "C", "B"),
                atom("is-a", "B", "A"),
                atom("is-a", "C", "A"),
            },
        )
        c = core(kb)
        assert atom("is-a", "C", "B") in c
        assert atom("is-a", "B", "A") in c
        assert atom("is-a", "C", "A") not in c
        assert c == naive_core(kb)

    def test_custom_atom_kept_verbatim(self):
        kb = mall_kb()
        assert atom("hasAdvertisement", "s1", "ad1") in core(kb)

    def test_derived_instance_dropped(self):
        kb = KnowledgeBase(
            classes={"A", "B"},
            individuals={"x"},
            atoms={
                atom("is-a", "A", "Thing"),
                atom("is-a", "B", "A"),
                atom("instance-of", "x", "B"),
                atom("instance-of", "x", "A"),
            },
        )
        c = core(kb)
        assert atom("instance-of", "x", "B") in c
        assert atom("instance-of", "x", "A") not in c
        assert c == naive_core(kb)

    def test_no_reflexive_atoms(self, rng):
        for _ in range(10):
            kb = random_kb(rng)
            for a in core(kb):
                assert not (a.predicate == "is-a" and a.args[0] == a.args[1])

    def test_matches_remove_and_recheck_oracle(self, rng):
        for _ in range(25):
            kb = random_kb(rng)
            assert core(kb) == naive_core(kb)

    def test_core_generates_closure(self, rng):
        for _ in range(25):
            kb = random_kb(rng, n_classes=10)
            regenerated = KnowledgeBase(
                classes=kb.classes, individuals=kb.individuals, atoms=core(kb)
            )
            assert closure(regenerated) == closure(kb)


class TestFunctionLike:
    def test_two_values_flagged(self):
        kb = KnowledgeBase(
            individuals={"p1"},
            atoms={atom("hasId", "p1", 7), atom("hasId", "p1", 9)},
            function_like={"hasId"},
        )
        violations = check_function_like(kb)
        assert len(violations) == 1
        assert violations[0].code == "function-like-cardinality"
        assert "hasId" in violations[0].subject and "p1" in violations[0].subject

    def test_single_value_clean(self):
        kb = KnowledgeBase(
            individuals={"p1"},
            atoms={atom("hasId", "p1", 7)},
            function_like={"hasId"},
        )
        assert check_function_like(kb) == []

    def test_counted_per_individual(self):
        kb = KnowledgeBase(
            individuals={"p1", "p2"},
            atoms={atom("hasId", "p1", 7), atom("hasId", "p2", 7)},
            function_like={"hasId"},
        )
        assert check_function_like(kb) == []
        # direct count confirms one atom per first argument
        per_first = {}
        for a in kb.atoms:
            if a.predicate == "hasId":
                per_first.setdefault(a.args[0], []).append(a)
        assert all(len(v) == 1 for v in per_first.values())


class TestValidate:
    def test_mall_kb_clean(self):
        assert validate_kb(mall_kb()) == []

    def test_unattached_class_flagged(self):
        kb = KnowledgeBase(classes={"Floating"})
        codes = [v.code for v in validate_kb(kb)]
        assert "unattached-class" in codes

    def test_connects_roles_checked(self):
        base = dict(
            classes={"Shop", "Corridor"},
            individuals={"door1", "s1", "c1"},
            connects_roles=("Shop", "Corridor"),
        )
        good = KnowledgeBase(
            atoms={
                atom("is-a", "Shop", "Location"),
                atom("is-a", "Corridor", "Location"),
                atom("instance-of", "s1", "Shop"),
                atom("instance-of", "c1", "Corridor"),
                atom("connects", "door1", "s1", "c1"),
            },
            **base,
        )
        assert [v for v in validate_kb(good) if v.code == "connects-role"] == []
        bad = KnowledgeBase(
            atoms={
                atom("is-a", "Shop", "Location"),
                atom("is-a", "Corridor", "Location"),
                atom("instance-of", "s1", "Shop"),
                atom("instance-of", "c1", "Corridor"),
                atom("connects", "door1", "c1", "s1"),
            },
            **base,
        )
        assert len([v for v in validate_kb(bad) if v.code == "connects-role"]) == 2


# hypothesis strategies over small taxonomies
_class_names = st.sampled_from(["A", "B", "C", "D"])
_individual_names = st.sampled_from(["x", "y"])


@st.composite
def small_kbs(draw):
    pairs = draw(
        st.lists(st.tuples(_class_names, _class_names), max_size=6)
    )
    # orient edges alphabetically to avoid distinct-class cycles
    isa = {atom("is-a", max(a, b), min(a, b)) for a, b in pairs if a != b}
    instances = draw(st.lists(st.tuples(_individual_names, _class_names), max_size=4))
    atoms = isa | {atom("instance-of", x, c) for x, c in instances}
    atoms |= {atom("is-a", c, "Thing") for c in ["A", "B", "C", "D"]}
    return KnowledgeBase(
        classes={"A", "B", "C", "D"},
        individuals={"x", "y"},
        atoms=atoms,
    )


@settings(max_examples=60, deadline=None)
@given(small_kbs(), small_kbs())
def test_closure_monotone(kb1, kb2):
    merged = kb1.with_atoms(kb2.atoms)
    assert closure(kb1) <= closure(merged)


@settings(max_examples=60, deadline=None)
@given(small_kbs())
def test_closure_idempotent(kb):
    once = closure(kb)
    again = closure(
        KnowledgeBase(classes=kb.classes, individuals=kb.individuals, atoms=once)
    )
    assert once == again


@settings(max_examples=60, deadline=None)
@given(small_kbs())
def test_core_is_generating_set(kb):
    regenerated = KnowledgeBase(
        classes=kb.classes, individuals=kb.individuals, atoms=core(kb)
    )
    assert closure(regenerated) == closure(kb)


def test_entails_matches_oracle_exhaustively():
    """All KBs over 3 classes / 2 individuals with one is-a + one instance-of."""
    classes = ["A", "B", "C"]
    individuals = ["x", "y"]
    attach = [atom("is-a", c, "Thing") for c in classes]
    for b, a in itertools.permutations(classes, 2):
        for x, c in itertools.product(individuals, classes):
            kb = KnowledgeBase(
                classes=set(classes),
                individuals=set(individuals),
                atoms=set(attach) | {atom("is-a", b, a), atom("instance-of", x, c)},
            )
            reference = naive_kb_closure(kb)
            queries = [atom("is-a", p, q) for p, q in itertools.product(classes, repeat=2)]
            queries += [
                atom("instance-of", i, q) for i, q in itertools.product(individuals, classes)
            ]
            for query in queries:
                assert entails(kb, query) == (query in reference)
