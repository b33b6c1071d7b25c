# -*- coding: utf-8 -*-
from fractions import Fraction

import pytest

from graph_core import AttrRef, Attribute, BinOp, Const, Equation, Node, ParseGraph, Ref, UnknownVar
from pipeline import translation_examples, unresolved_rel_spans
from relate import (
    FRef,
    Left,
    Predicate,
    RelationError,
    Sum,
    TranslatorModel,
    abstract_pattern,
    compile_predicate,
    ensure_predicate_refs,
    equation_skeleton,
    implicit_constraints,
    instantiate_skeleton,
    mine_relations,
    train_translator,
    translate_relation,
)

TIMES = "Xiaogang's weight is 28.4 kg, Xiaoqiang's weight is 1.4 times that of Xiaogang, Xiaoqiang's weight = how many kilograms?"
TIMES_OTHER = "Xiaohong's weight is 30 kg, Xiaoli's weight is 1.5 times that of Xiaohong, Xiaoli's weight = how many kilograms?"
FOLD = "Xiaogang's weight is 28.4 kg, Xiaoqiang's weight is 1.4-fold that of Xiaogang, Xiaoqiang's weight = how many kilograms?"


def two_agents():
    nodes = (
        Node("w0", "World", None, None, "world"),
        Node("a1", "Agent", None, "w0", "tom"),
        Node("a2", "Agent", None, "w0", "amy"),
        Node("d1", "Event", None, "a1"),
        Node("d2", "Event", None, "a2"),
    )
    attrs = (Attribute("Total@a1", "Total", "a1"), Attribute("Total@a2", "Total", "a2", Fraction(30)))
    return ParseGraph(nodes, attrs, (), AttrRef("Total", "a1"))


def test_compile_comparatives():
    pg = two_agents()
    f1, f2 = FRef("Total", "a1"), FRef("Total", "a2")
    more = compile_predicate(Predicate("MoreThan", f1, f2, Fraction(5)), pg)
    assert more.rhs == BinOp("+", Ref(AttrRef("Total", "a2")), Const(Fraction(5)))
    less = compile_predicate(Predicate("LessThan", f1, f2, Fraction(5)), pg)
    assert less.rhs == BinOp("-", Ref(AttrRef("Total", "a2")), Const(Fraction(5)))
    times = compile_predicate(Predicate("TimesOf", f1, f2, Fraction(7, 5)), pg)
    assert times.lhs == Ref(AttrRef("Total", "a1"))
    assert times.rhs == BinOp("*", Const(Fraction(7, 5)), Ref(AttrRef("Total", "a2")))
    assert times.provenance == "Mined"
    assert times.label == "TimesOf(Total(a1), Total(a2), 1.4)"


def test_compile_equal_forms():
    pg = two_agents()
    eq = compile_predicate(Predicate("Equal", FRef("Total", "a1"), FRef("Total", "a2")), pg)
    assert eq.rhs == Ref(AttrRef("Total", "a2"))
    eq = compile_predicate(Predicate("Equal", FRef("Total", "a1"), None, "unknown"), pg)
    assert eq.rhs == UnknownVar()


def test_compile_sum_and_left():
    pg = two_agents().ensure_attribute(AttrRef("Total", "w0"))
    s = compile_predicate(Predicate("Equal", Sum((FRef("Total", "a1"), FRef("Total", "a2"))), None, Fraction(50)), pg)
    assert s.lhs == BinOp("+", Ref(AttrRef("Total", "a1")), Ref(AttrRef("Total", "a2")))
    left = Left(FRef("Total", "w0"), (FRef("Total", "a1"), FRef("Total", "a2")))
    eq = compile_predicate(Predicate("Equal", left, None, Fraction(35)), pg)
    assert eq.lhs == BinOp(
        "-", BinOp("-", Ref(AttrRef("Total", "w0")), Ref(AttrRef("Total", "a1"))), Ref(AttrRef("Total", "a2"))
    )


@pytest.mark.parametrize(
    "build",
    [
        lambda: Predicate("MoreThan", FRef("Total", "a1"), FRef("Total", "a2")),
        lambda: Predicate("Equal", FRef("Total", "a1"), FRef("Total", "a2"), Fraction(1)),
        lambda: Predicate("Equal", FRef("Total", "a1")),
        lambda: Predicate("Bigger", FRef("Total", "a1"), FRef("Total", "a2"), Fraction(1)),
        lambda: Predicate("Equal", FRef("Total", "a1"), None, "x"),
        lambda: FRef("Speed", "a1"),
        lambda: Sum(()),
        lambda: Sum((FRef("Total", "a1"), FRef("Rate", "a2"))),
    ],
)
def test_malformed_predicates(build):
    with pytest.raises(RelationError):
        build()


def test_unresolvable_references():
    pg = two_agents()
    p = Predicate("Equal", FRef("Rate", "a1"), FRef("Total", "a2"))
    with pytest.raises(RelationError, match="unresolvable FuncRef"):
        compile_predicate(p, pg)
    fixed = ensure_predicate_refs(pg, p)
    assert not fixed.attribute(AttrRef("Rate", "a1")).known
    with pytest.raises(RelationError):
        ensure_predicate_refs(pg, Predicate("Equal", FRef("Total", "a9"), None, Fraction(1)))


def test_implicit_constraints_are_idempotent():
    nodes = (
        Node("w0", "World", None, None, "world"),
        Node("a1", "Agent", None, "w0", "tom"),
        Node("e1", "Event", None, "a1"),
        Node("e2", "Event", None, "a1"),
    )
    attrs = (
        Attribute("Rate@e1", "Rate", "e1", Fraction(120)),
        Attribute("Amount@e1", "Amount", "e1", Fraction(14)),
        Attribute("Rate@e2", "Rate", "e2", Fraction(60)),
        Attribute("Amount@e2", "Amount", "e2", Fraction(5)),
        Attribute("Total@w0", "Total", "w0"),
    )
    pg = ParseGraph(nodes, attrs, (), AttrRef("Total", "w0"))
    pg, new = implicit_constraints(pg)
    labels = sorted(eq.label for eq in new)
    assert labels == ["Total = Rate × Amount", "Total = Rate × Amount", "World.Total = Σ Event.Total"]
    assert all(eq.provenance == "Implicit" for eq in new)
    assert pg.attribute(AttrRef("Total", "e1")) is not None
    again, more = implicit_constraints(pg.with_equations(new))
    assert more == []
    assert len(again.attributes) == len(pg.attributes)


def test_world_sum_skipped_when_relation_constrains_scope():
    pg = two_agents().ensure_attribute(AttrRef("Total", "w0")).with_goal(AttrRef("Total", "w0"))
    eq = compile_predicate(Predicate("Equal", FRef("Total", "w0"), None, Fraction(10)), pg)
    _, new = implicit_constraints(pg.with_equations([eq]))
    assert not any(e.label.startswith("World") for e in new)


def test_times_relation_is_mined(rule_pipeline):
    tokens, spans, pg = rule_pipeline.rule_parse(TIMES)
    mined = [eq for eq in pg.equations if eq.provenance == "Mined"]
    assert len(mined) == 1
    assert mined[0].label.startswith("TimesOf(")
    assert Const(Fraction(7, 5)) == mined[0].rhs.left
    assert unresolved_rel_spans(pg, spans) == []


def test_cue_word_is_left_to_translator(rule_pipeline, lexicon):
    tokens, spans, pg = rule_pipeline.rule_parse(FOLD)
    rels = spans.of("Rel")
    assert rels
    mined, unmatched = mine_relations(tokens, rels, pg, lexicon)
    assert mined == []
    assert unmatched == rels
    assert unresolved_rel_spans(pg, spans) == rels


def test_pattern_abstraction(rule_pipeline, lexicon):
    tokens, spans, _ = rule_pipeline.rule_parse(TIMES)
    assert abstract_pattern(spans.of("Rel")[0], tokens, lexicon) == "<N> times that of"


def test_skeleton_roundtrip():
    eq_lhs = Ref(AttrRef("Total", "a2"))
    eq_rhs = BinOp("*", Const(Fraction(7, 5)), Ref(AttrRef("Total", "a1")))
    eq = Equation(eq_lhs, eq_rhs)
    roles = {"S": "a2", "O": "a1", "W": "w0"}
    skeleton = equation_skeleton(eq, roles, [Fraction(7, 5)])
    assert skeleton == "= ref:Total:@S * num:0 ref:Total:@O"
    lhs, rhs = instantiate_skeleton(skeleton, {"S": "b", "O": "c"}, [Fraction(2)])
    assert lhs == Ref(AttrRef("Total", "b"))
    assert rhs == BinOp("*", Const(Fraction(2)), Ref(AttrRef("Total", "c")))
    assert instantiate_skeleton(skeleton, {"S": "b"}, [Fraction(2)]) is None
    with pytest.raises(RelationError):
        instantiate_skeleton(skeleton, {"S": "b", "O": "c"}, [])
    assert equation_skeleton(eq, {"S": "a2"}, [Fraction(7, 5)]) is None


def test_lookup_picks_most_frequent_skeleton():
    model = TranslatorModel({"<N> times": {"b": 1, "a": 3}, "tie": {"y": 2, "x": 2}}, 1)
    assert model.lookup("<N> times") == ("a", 0.75)
    assert model.lookup("tie") == ("x", 0.5)
    assert model.lookup("missing") is None
    assert model.skeletons() == ["a", "x", "y", "b"]


def test_translator_generalizes_to_new_numbers(rule_pipeline, lexicon):
    tokens, _, pg = rule_pipeline.rule_parse(TIMES)
    model = train_translator(TranslatorModel(), translation_examples(pg, tokens), lexicon)
    assert model.version == 1
    assert "<N> times that of" in model.store

    tokens2, spans2, pg2 = rule_pipeline.rule_parse(TIMES_OTHER)
    hit = translate_relation(spans2.of("Rel")[0], tokens2, pg2, model, lexicon)
    assert hit is not None
    eq, prob = hit
    mined = next(e for e in pg2.equations if e.provenance == "Mined")
    assert prob == 1.0
    assert eq.provenance == "Translated"
    assert (eq.lhs, eq.rhs) == (mined.lhs, mined.rhs)


def test_translator_is_deterministic(rule_pipeline, lexicon):
    tokens, _, pg = rule_pipeline.rule_parse(TIMES)
    examples = translation_examples(pg, tokens)
    a = train_translator(TranslatorModel(), examples, lexicon)
    b = train_translator(TranslatorModel(), examples, lexicon)
    assert a.store == b.store


def test_translator_rejects_empty_training_set():
    with pytest.raises(RelationError):
        train_translator(TranslatorModel(), [])
