# -*- coding: utf-8 -*-
from fractions import Fraction

import pytest

import corpus
from config import load_config
from graph_core import AttrRef, GraphError, validate_graph
from pipeline import (
    PARSE_FAILURE,
    SOLVED,
    SOLVER_FAILURE,
    Options,
    Pipeline,
    execute,
    spans_from_graph,
    translation_examples,
)
from solver import answers_match


def test_example_answers(rule_pipeline, samples, unit_price):
    for record in samples + unit_price:
        outcome = rule_pipeline.solve(record.text, record.id)
        assert outcome.status == SOLVED, (record.id, outcome.error)
        assert outcome.value == record.answer, record.id


@pytest.mark.parametrize("rid,value", [("sample-task", "200"), ("sample-motion", "1980"), ("sample-relation", "39.76"), ("sample-price", "8100")])
def test_example_answer_strings(rule_pipeline, samples, rid, value):
    record = next(r for r in samples if r.id == rid)
    assert rule_pipeline.solve(record.text).solution.display() == value


def test_unit_price_graph_shape(rule_pipeline, unit_price, res):
    _, _, pg = rule_pipeline.rule_parse(unit_price[0].text, unit_price[0].id)
    assert validate_graph(pg, res.grammar).valid
    assert isinstance(pg.goal, AttrRef) and pg.goal.function == "Total"
    rate = next(a for a in pg.attributes if a.kind == "Rate")
    amount = next(a for a in pg.attributes if a.kind == "Amount")
    assert rate.value == Fraction("3.65") and (rate.num_unit, rate.den_unit) == ("dollar", "kilogram")
    assert amount.value == 13 and amount.owner == rate.owner
    assert "Total = Rate × Amount" in [eq.label for eq in pg.equations if eq.provenance == "Implicit"]


def test_rule_and_candidate_paths_agree(rule_pipeline, samples):
    for record in samples:
        assert rule_pipeline.rule_solve(record.text).value == rule_pipeline.solve(record.text).value


def test_execute_returns_none_when_unsolvable(rule_pipeline):
    text = "Xiaogang's weight is 28.4 kg, Xiaoqiang's weight is 1.4-fold that of Xiaogang, Xiaoqiang's weight = how many kilograms?"
    _, _, pg = rule_pipeline.rule_parse(text)
    assert execute(pg) is None
    assert rule_pipeline.solve(text).status == SOLVER_FAILURE


def test_text_without_question_is_parse_failure(rule_pipeline):
    outcome = rule_pipeline.solve("The car traveled 60 kilometers per hour for 3 hours.")
    assert outcome.status == PARSE_FAILURE
    assert outcome.value is None
    with pytest.raises(GraphError):
        rule_pipeline.parse("It rained.")


def test_disabling_the_miner_drops_relations(res, samples):
    record = next(r for r in samples if r.id == "sample-relation")
    pipe = Pipeline(res, opts=Options(use_miner=False))
    _, _, pg = pipe.rule_parse(record.text)
    assert not any(eq.provenance == "Mined" for eq in pg.equations)
    assert pipe.solve(record.text).status != SOLVED


def test_options_follow_config():
    cfg = load_config(disable_miner=True, beam=3)
    opts = Options.from_config(cfg)
    assert not opts.use_miner and opts.use_translator and opts.beam == 3


def test_pseudo_gold_spans_and_examples(rule_pipeline, samples, lexicon):
    record = next(r for r in samples if r.id == "sample-relation")
    tokens, spans, pg = rule_pipeline.rule_parse(record.text)
    derived = spans_from_graph(pg, tokens, lexicon)
    assert not derived.nesting_violations()
    assert derived.of("Rel") == spans.of("Rel")
    assert len(derived.of("Agent")) >= 2
    examples = translation_examples(pg, tokens)
    assert [ex.equation.provenance for ex in examples] == ["Mined"]


def test_untrained_models_use_rule_distributions(rule_pipeline):
    assert not rule_pipeline.learned
    tokens, cands = rule_pipeline.candidates("Each kilogram of pears cost 3.65 dollars. How many dollars does mom have to pay for 13 kilograms of pears?")
    assert cands.best() is not None
    assert cands.best().score == pytest.approx(0.0)
    assert len(tokens) == 22


def _solves(pipeline, record):
    outcome = pipeline.solve(record.text, record.id)
    return outcome.status == SOLVED and answers_match(outcome.value, record.answer)


@pytest.mark.slow
@pytest.mark.parametrize("family", sorted(corpus.SAMPLERS))
def test_event_count_does_not_change_solvability(rule_pipeline, family):
    lo, hi = corpus.load_templates()[family].events
    pivot = 2 if hi >= 2 else lo
    checked = 0
    for seed in range(10):
        params = {"n_events": pivot, "cue_rate": 0.0}
        if not _solves(rule_pipeline, corpus.generate(family, count=1, seed=seed, params=params)[0]):
            continue
        checked += 1
        for n in range(lo, hi + 1):
            record = corpus.generate(family, count=1, seed=seed, params=dict(params, n_events=n))[0]
            assert _solves(rule_pipeline, record), (family, n, record.text)
    assert checked >= 1
