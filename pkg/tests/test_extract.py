# -*- coding: utf-8 -*-
from fractions import Fraction

import numpy as np
import pytest

import extract
from extract import (
    ATTR_LABELS,
    NODE_LABELS,
    EntitySpanSet,
    ExtractError,
    LabelerModel,
    detect_goal,
    extract_units,
    gold_labels,
    parse_lexicon,
    predict,
    rule_tag,
    sentence_features,
    tokenize,
    train,
)
from graph_core import Span

PEARS = (
    "Each kilogram of pears cost 3.65 dollars. "
    "How many dollars does mom have to pay for 13 kilograms of pears?"
)
TRAIN = (
    "Mingming's family went to travel, they took a 14-hour train ride, and then a 5-hour car ride "
    "before reaching their destination. It is known that the speed of the train is 120 kilometers/hour "
    "and the speed of the car is 60 kilometers/hour. How long is this journey?"
)


def index_of(tokens, text, start=0):
    for t in tokens[start:]:
        if t.text == text:
            return t.index
    raise AssertionError(text)


def label_at(spans, i):
    return [label for s, label in spans.spans if s.start <= i < s.end]


def test_tokenize_numbers_and_units(lexicon):
    tokens = tokenize("A 14-hour ride at 120 kilometers/hour covered 30% of it.", lexicon)
    texts = [t.text for t in tokens]
    assert texts[:4] == ["A", "14", "-", "hour"]
    assert "/" in texts
    assert tokens[index_of(tokens, "14")].normalized_number == Fraction(14)
    assert tokens[index_of(tokens, "30%")].normalized_number == Fraction(3, 10)
    assert tokens[index_of(tokens, "kilometers")].unit == "kilometer"


def test_tokenize_possessive_and_proper_names(lexicon):
    tokens = tokenize("Xiaogang's weight is 28.4 kg.", lexicon)
    assert [t.text for t in tokens[:2]] == ["Xiaogang", "'s"]
    assert tokens[0].proper
    assert tokens[index_of(tokens, "28.4")].normalized_number == Fraction(142, 5)


def test_tokenize_sentences_and_clauses(lexicon):
    tokens = tokenize("He ran, she walked. They rested.", lexicon)
    assert tokens[-1].sentence == 1
    assert tokens[index_of(tokens, "she")].clause == 1
    assert tokens[index_of(tokens, "They")].clause == 2


def test_rule_tag_unit_price_problem(lexicon):
    tokens = tokenize(PEARS, lexicon)
    spans = rule_tag(tokens, lexicon)
    assert label_at(spans, index_of(tokens, "3.65")) == ["Rate"]
    assert label_at(spans, index_of(tokens, "13")) == ["Amount"]
    assert not spans.nesting_violations()


def test_buy_starts_an_event(lexicon):
    text = "Each kilogram of pears cost 3.65 dollars. How many dollars does mom have to buy 13 kilograms of pears?"
    tokens = tokenize(text, lexicon)
    buy = index_of(tokens, "buy")
    assert tokens[buy].tag == "VERB"
    assert label_at(rule_tag(tokens, lexicon), buy) == ["Event"]


def test_units_of_rate_and_amount(lexicon):
    tokens = tokenize(PEARS, lexicon)
    rate = index_of(tokens, "3.65")
    amount = index_of(tokens, "13")
    assert extract_units(tokens, Span(rate, rate + 1), lexicon) == ("dollar", "kilogram")
    assert extract_units(tokens, Span(amount, amount + 1), lexicon) == (None, "kilogram")


def test_units_of_speed(lexicon):
    tokens = tokenize(TRAIN, lexicon)
    speed = index_of(tokens, "120")
    assert extract_units(tokens, Span(speed, speed + 1), lexicon) == ("kilometer", "hour")
    spans = rule_tag(tokens, lexicon)
    assert label_at(spans, speed) == ["Rate"]
    assert label_at(spans, index_of(tokens, "14")) == ["Amount"]


def test_goal_is_total_question(lexicon):
    tokens = tokenize(PEARS, lexicon)
    goal = detect_goal(tokens, rule_tag(tokens, lexicon), lexicon)
    assert goal.kind == "attribute"
    assert goal.attr_kind == "Total"
    assert goal.span.text[:2] == ("How", "many")


def test_times_relation_span(lexicon):
    text = "Xiaogang's weight is 28.4 kg, Xiaoqiang's weight is 1.4 times that of Xiaogang, Xiaoqiang's weight = how many kilograms?"
    tokens = tokenize(text, lexicon)
    spans = rule_tag(tokens, lexicon)
    rels = spans.of("Rel")
    assert any("times" in r.text for r in rels)
    assert detect_goal(tokens, spans, lexicon).kind == "attribute"


def test_no_question_raises(lexicon):
    tokens = tokenize("The car ran 60 kilometers.", lexicon)
    with pytest.raises(ExtractError, match="no goal detected"):
        detect_goal(tokens, rule_tag(tokens, lexicon), lexicon)


def test_rule_tag_is_deterministic(lexicon):
    tokens = tokenize(TRAIN, lexicon)
    assert rule_tag(tokens, lexicon) == rule_tag(tokens, lexicon)


def test_nesting_violations():
    ok = EntitySpanSet(((Span(0, 5), "Rel"), (Span(1, 2), "Amount")))
    assert ok.nesting_violations() == []
    partial = EntitySpanSet(((Span(0, 3), "Rel"), (Span(2, 5), "Amount")))
    assert partial.nesting_violations()
    clash = EntitySpanSet(((Span(0, 2), "Agent"), (Span(1, 3), "Event")))
    assert clash.nesting_violations()


@pytest.mark.parametrize(
    "line",
    ["hour unit:hour", "two words\tNOUN", "thing\tCOLOR", "meter hours\tunit:meter"],
)
def test_parse_lexicon_errors(line):
    with pytest.raises(ExtractError):
        parse_lexicon([line])


def test_parse_lexicon_multiple_classes():
    lex = parse_lexicon(["each\tDET", "each\tkw:per", "kilograms\tunit:kilogram", "# note", "how many\tINTERROG"])
    assert lex.tags["each"] == "DET"
    assert "per" in lex.word_classes("each")
    assert lex.units["kilograms"] == "kilogram"
    assert lex.max_phrase == 2


def test_predict_requires_trained_model(lexicon):
    with pytest.raises(ExtractError, match="model uninitialized"):
        predict(LabelerModel(), tokenize(PEARS, lexicon), lexicon)


def test_train_rejects_empty_examples(lexicon):
    with pytest.raises(ExtractError):
        train(LabelerModel(), [], lexicon=lexicon)


def _examples(lexicon):
    out = []
    for text in (PEARS, TRAIN):
        tokens = tokenize(text, lexicon)
        out.append((tokens, rule_tag(tokens, lexicon)))
    return out


def test_labeler_learns_rule_labels(lexicon):
    examples = _examples(lexicon)
    model = train(LabelerModel(), examples, seed=3, lexicon=lexicon)
    assert model.trained and model.version == 1
    for tokens, spans in examples:
        pred = predict(model, tokens, lexicon)
        node, attr = gold_labels(len(tokens), spans)
        assert np.mean(np.argmax(pred.node_dist.probs, axis=1) == np.array(node)) >= 0.95
        assert np.mean(np.argmax(pred.attr_dist.probs, axis=1) == np.array(attr)) >= 0.95
        assert np.allclose(pred.node_dist.probs.sum(axis=1), 1.0)
        assert pred.node_dist.labels == NODE_LABELS
        assert pred.attr_dist.labels == ATTR_LABELS


def test_features_do_not_see_rule_labels(lexicon, monkeypatch):
    examples = _examples(lexicon)
    model = train(LabelerModel(), examples, seed=3, lexicon=lexicon)
    tokens = examples[0][0]
    before = sentence_features(tokens, lexicon)
    assert not any(f.startswith(("rn", "ra=")) for row in before for f in row)

    def fail(*args, **kwargs):
        raise AssertionError("rule_tag called while featurizing")

    monkeypatch.setattr(extract, "rule_tag", fail)
    assert sentence_features(tokens, lexicon) == before
    pred = predict(model, tokens, lexicon)
    assert pred.node_dist.probs.shape[0] == len(tokens)


def test_labeler_training_is_seeded(lexicon):
    examples = _examples(lexicon)
    a = train(LabelerModel(), examples, seed=5, lexicon=lexicon)
    b = train(LabelerModel(), examples, seed=5, lexicon=lexicon)
    assert a.feature_index == b.feature_index
    assert np.array_equal(a.node_weights, b.node_weights)
    assert np.array_equal(a.attr_weights, b.attr_weights)


def test_warm_start_increments_version(lexicon):
    examples = _examples(lexicon)
    first = train(LabelerModel(), examples[:1], seed=0, lexicon=lexicon)
    second = train(first, examples, seed=1, lexicon=lexicon)
    assert second.version == 2
    assert set(first.feature_index) <= set(second.feature_index)
    assert second.node_weights.shape[0] == len(second.feature_index)
