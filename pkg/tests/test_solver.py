# -*- coding: utf-8 -*-
from fractions import Fraction

import numpy as np
import pytest

from graph_core import GOAL_UNKNOWN, AttrRef, Attribute, BinOp, Const, Equation, Node, ParseGraph, Ref, UnknownVar
from solver import (
    Contradiction,
    DivisionByZero,
    Inconsistent,
    NonlinearResidual,
    SolverError,
    Underdetermined,
    answer,
    answers_match,
    build_system,
    propagate,
    replay_trace,
    solve_linear,
)


def R(kind, node):
    return Ref(AttrRef(kind, node))


def C(value):
    return Const(Fraction(value))


def graph(attrs, equations=(), goal=None, n_events=1):
    """w0 -> a1 -> e1..en；attrs 为 (种类, 节点, 值或 None)"""
    nodes = [Node("w0", "World", None, None, "world"), Node("a1", "Agent", None, "w0", "tom")]
    nodes += [Node("e{}".format(i), "Event", None, "a1") for i in range(1, n_events + 1)]
    attributes = tuple(
        Attribute("{}@{}".format(k, n), k, n, None if v is None else Fraction(v)) for k, n, v in attrs
    )
    return ParseGraph(tuple(nodes), attributes, tuple(equations), goal)


def test_unit_price_product():
    pg = graph([("Rate", "e1", "3.65"), ("Amount", "e1", 13), ("Total", "e1", None)], goal=AttrRef("Total", "e1"))
    sol = answer(pg)
    assert sol.value == Fraction(4745, 100)
    assert sol.display() == "47.45"
    text = sol.trace.render_text()
    assert "Total(e1) = Rate(e1) × Amount(e1)" in text
    assert sol.trace.to_json()[0]["value"] == "47.45"
    assert any(eq.provenance == "Implicit" for eq in sol.graph.equations)


def test_journey_sum_over_events():
    pg = graph(
        [
            ("Rate", "e1", 120),
            ("Amount", "e1", 14),
            ("Rate", "e2", 60),
            ("Amount", "e2", 5),
            ("Total", "w0", None),
        ],
        goal=AttrRef("Total", "w0"),
        n_events=2,
    )
    assert answer(pg).value == 1980


def test_unknown_variable_goal():
    eq = Equation(UnknownVar(), BinOp("*", C("1.4"), R("Total", "a1")))
    pg = graph([("Total", "a1", "28.4")], [eq], GOAL_UNKNOWN)
    sol = answer(pg)
    assert sol.value == Fraction("39.76")
    assert sol.bindings["x"] == Fraction("39.76")


def test_fraction_of_scope():
    # 30% 与 45% 两周共 150 米
    eqs = [
        Equation(R("Total", "e1"), BinOp("*", C("0.3"), R("Total", "w0"))),
        Equation(R("Total", "e2"), BinOp("*", C("0.45"), R("Total", "w0"))),
        Equation(BinOp("+", R("Total", "e1"), R("Total", "e2")), C(150)),
    ]
    pg = graph([("Total", "e1", None), ("Total", "e2", None), ("Total", "w0", None)], eqs, AttrRef("Total", "w0"), 2)
    sol = answer(pg)
    assert sol.value == 200
    assert any(step.kind == "eliminate" for step in sol.trace.steps)


def test_contradiction():
    pg = graph([("Rate", "e1", 2), ("Amount", "e1", 3), ("Total", "e1", 7)], goal=AttrRef("Total", "e1"))
    with pytest.raises(Contradiction):
        answer(pg)


def test_division_by_zero():
    eq = Equation(R("Total", "a1"), BinOp("/", C(5), BinOp("-", R("Rate", "a1"), C(2))))
    pg = graph([("Total", "a1", None), ("Rate", "a1", 2)], [eq], AttrRef("Total", "a1"))
    with pytest.raises(DivisionByZero):
        answer(pg)


def test_nonlinear_residual():
    eq = Equation(BinOp("*", R("Total", "a1"), R("Rate", "a1")), C(6))
    pg = graph([("Total", "a1", None), ("Rate", "a1", None)], [eq], AttrRef("Total", "a1"))
    with pytest.raises(NonlinearResidual, match="nonlinear residual"):
        answer(pg)


def test_underdetermined():
    eq = Equation(BinOp("+", R("Total", "a1"), R("Rate", "a1")), C(6))
    pg = graph([("Total", "a1", None), ("Rate", "a1", None)], [eq], AttrRef("Total", "a1"))
    with pytest.raises(Underdetermined, match="underdetermined"):
        answer(pg)


def test_inconsistent():
    eqs = [
        Equation(BinOp("+", R("Total", "a1"), R("Rate", "a1")), C(1)),
        Equation(BinOp("+", R("Total", "a1"), R("Rate", "a1")), C(2)),
    ]
    pg = graph([("Total", "a1", None), ("Rate", "a1", None)], eqs, AttrRef("Total", "a1"))
    with pytest.raises(Inconsistent):
        answer(pg)


def test_free_residual_after_goal_is_known():
    eqs = [
        Equation(R("Total", "a1"), C(5)),
        Equation(BinOp("+", R("Rate", "a1"), R("Amount", "a1")), C(3)),
    ]
    pg = graph([("Total", "a1", None), ("Rate", "a1", None), ("Amount", "a1", None)], eqs, AttrRef("Total", "a1"))
    assert answer(pg).value == 5


def test_missing_goal():
    with pytest.raises(SolverError):
        answer(graph([("Total", "e1", 3)]))


def test_non_positive_answer_is_flagged():
    eq = Equation(R("Total", "a1"), BinOp("-", C(3), C(5)))
    sol = answer(graph([("Total", "a1", None)], [eq], AttrRef("Total", "a1")))
    assert sol.value == -2
    assert sol.trace.warnings


def test_answers_match():
    assert answers_match(Fraction(4745, 100), Fraction("47.45"))
    assert not answers_match(Fraction("47.46"), Fraction("47.45"))
    # 金标可以写成有限小数时必须精确相等
    assert not answers_match(Fraction(10, 3), Fraction("3.3333"))
    assert not answers_match(Fraction("3.33334"), Fraction("3.3333"))
    # 金标本身是循环小数时按相对误差比较
    assert answers_match(Fraction("3.3333"), Fraction(10, 3))
    assert answers_match(Fraction(10, 3) + Fraction(1, 10**6), Fraction(10, 3))
    assert not answers_match(Fraction("3.4"), Fraction(10, 3))


def _random_system(rng, n):
    """随机可逆整数系数方程组，解为随机有理数"""
    while True:
        a = rng.integers(-6, 7, size=(n, n))
        if np.linalg.matrix_rank(a) == n:
            break
    x = [Fraction(int(rng.integers(-50, 51)), int(rng.integers(1, 9))) for _ in range(n)]
    refs = [R("Total", "e{}".format(j + 1)) for j in range(n)]
    eqs = []
    for i in range(n):
        terms = [BinOp("*", C(int(a[i, j])), refs[j]) for j in range(n) if a[i, j] != 0]
        lhs = terms[0]
        for t in terms[1:]:
            lhs = BinOp("+", lhs, t)
        b = sum((int(a[i, j]) * x[j] for j in range(n)), Fraction(0))
        eqs.append(Equation(lhs, Const(b)))
    goal = int(rng.integers(0, n))
    attrs = [("Total", "e{}".format(j + 1), None) for j in range(n)]
    return graph(attrs, eqs, AttrRef("Total", "e{}".format(goal + 1)), n), x[goal]


def test_random_linear_systems_match_exact_solution():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(1, 5))
        pg, expected = _random_system(rng, n)
        sol = answer(pg)
        assert sol.value == expected
        replayed = replay_trace(build_system(sol.graph), sol.trace)
        assert replayed[pg.goal] == expected


def test_propagate_then_eliminate():
    eqs = [
        Equation(R("Total", "a1"), BinOp("*", R("Rate", "a1"), C(4))),
        Equation(BinOp("+", R("Rate", "a1"), R("Amount", "a1")), C(10)),
        Equation(BinOp("-", R("Rate", "a1"), R("Amount", "a1")), C(2)),
    ]
    sys_ = build_system(graph([("Total", "a1", None), ("Rate", "a1", None), ("Amount", "a1", None)]), eqs)
    bindings, residual, trace = propagate(sys_)
    assert residual == (0, 1, 2)
    assert not trace.steps
    values, steps = solve_linear([eqs[1], eqs[2]], bindings, (1, 2))
    assert values[AttrRef("Rate", "a1")] == 6 and values[AttrRef("Amount", "a1")] == 4
    assert [s.kind for s in steps] == ["eliminate", "eliminate"]
    sys2 = build_system(graph([("Total", "a1", None), ("Rate", "a1", 6)]), eqs[:1])
    bindings, residual, trace = propagate(sys2)
    assert bindings[AttrRef("Total", "a1")] == 24
    assert residual == () and trace.steps[0].kind == "propagate"
