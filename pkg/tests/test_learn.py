# -*- coding: utf-8 -*-
from fractions import Fraction

import pytest

import corpus
from corpus import ProblemRecord, SplitSpec
from learn import (
    REPORT_COLUMNS,
    FailureBuffer,
    FailureEntry,
    LearnError,
    SuccessBuffer,
    SuccessEntry,
    TrainState,
    bootstrap,
    iterate,
    run,
)
from pipeline import Options, execute
from solver import answers_match


@pytest.fixture(scope="module")
def chain_corpus():
    """单步关系链，约一半用提示词改写（规则挖掘不认识）"""
    return corpus.generate("relation.chain", count=16, seed=4, params={"n_events": 1, "cue_rate": 0.5})


@pytest.fixture(scope="module")
def mixed_corpus(samples, unit_price, chain_corpus):
    return list(samples) + list(unit_price) + list(chain_corpus)


def test_bootstrap_partitions_dataset(res, mixed_corpus):
    success, failure = bootstrap(mixed_corpus, res)
    ids = {r.id for r in mixed_corpus}
    assert success.ids() | failure.ids() == ids
    assert success.ids().isdisjoint(failure.ids())
    assert {"sample-task", "sample-motion", "sample-relation", "sample-price", "unit-price-pears"} <= success.ids()
    assert all(e.origin == "rule" and e.iteration == 0 for e in success.entries)


def test_bootstrap_graphs_reproduce_gold(res, mixed_corpus):
    records = {r.id: r for r in mixed_corpus}
    success, _ = bootstrap(mixed_corpus, res)
    for e in success.entries:
        assert answers_match(execute(e.graph), records[e.problem_id].answer)


def test_cue_problems_fail_at_bootstrap(res, chain_corpus):
    success, failure = bootstrap(chain_corpus, res)
    cued = {r.id for r in chain_corpus if r.meta["cues"]}
    plain = {r.id for r in chain_corpus if not r.meta["cues"]}
    assert cued <= failure.ids()
    assert plain & success.ids()


def test_duplicate_ids_are_rejected(res, samples):
    with pytest.raises(LearnError):
        bootstrap(list(samples) + [samples[0]], res)
    buf = SuccessBuffer((SuccessEntry("a", None),))
    with pytest.raises(LearnError):
        buf.add([SuccessEntry("a", None)])


def test_failure_buffer_removal():
    buf = FailureBuffer((FailureEntry("a", Fraction(1)), FailureEntry("b", Fraction(2))))
    assert buf.without({"a"}).ids() == {"b"}
    assert len(buf) == 2


def test_iterate_needs_successes(res, samples):
    records = {r.id: r for r in samples}
    with pytest.raises(LearnError):
        iterate(TrainState(), SuccessBuffer(), FailureBuffer(), records, res)


def test_iterate_keeps_buffers_consistent(res, mixed_corpus):
    records = {r.id: r for r in mixed_corpus}
    success, failure = bootstrap(mixed_corpus, res)
    before_success = success.ids()
    state, success2, failure2 = iterate(TrainState(), success, failure, records, res, seed=0)
    assert before_success <= success2.ids()
    assert success2.ids() | failure2.ids() == set(records)
    assert success2.ids().isdisjoint(failure2.ids())
    assert len(success2) >= len(success) and len(failure2) <= len(failure)
    m = state.metrics[-1]
    assert m.iteration == state.iteration == 1
    assert m.migrated == len(success2) - len(success)
    assert m.labeler_version == 1 and state.labeler.trained
    assert m.translator_version == 1 and m.patterns >= 1
    for e in success2.entries[len(success):]:
        assert e.iteration == 1 and e.origin in ("learned", "explored")
        assert answers_match(execute(e.graph), records[e.problem_id].answer)


def test_ablation_keeps_labeler_untrained(res, mixed_corpus):
    records = {r.id: r for r in mixed_corpus}
    success, failure = bootstrap(mixed_corpus, res)
    opts = Options(use_labeler=False)
    state, _, _ = iterate(TrainState(), success, failure, records, res, opts)
    assert not state.labeler.trained
    assert state.translator.version == 1


def test_run_zero_iterations_is_bootstrap_only(res, samples):
    result = run(samples, res, max_iters=0)
    assert list(result.report.columns) == REPORT_COLUMNS
    assert len(result.report) == 1
    assert result.report.loc[0, "successes"] == len(result.success)
    assert result.state.iteration == 0


def test_run_rejects_negative_iterations(res, samples):
    with pytest.raises(LearnError):
        run(samples, res, max_iters=-1)


def test_run_is_deterministic(res, mixed_corpus):
    a = run(mixed_corpus, res, max_iters=2, seed=1)
    b = run(mixed_corpus, res, max_iters=2, seed=1)
    assert a.report.equals(b.report)
    assert [e.problem_id for e in a.success.entries] == [e.problem_id for e in b.success.entries]


def test_run_reports_test_accuracy(res, samples, unit_price):
    result = run(samples, res, max_iters=1, test=unit_price)
    assert result.report["test_accuracy"].notna().all()
    assert result.report.loc[0, "test_accuracy"] == 1.0


@pytest.mark.slow
def test_cue_relations_are_learned_by_exploration(res, chain_corpus):
    result = run(chain_corpus, res, max_iters=3, seed=0)
    assert result.report["explored"].sum() >= 1
    first = result.report.loc[0, "successes"]
    assert result.report["successes"].iloc[-1] > first
    assert list(result.report["successes"]) == sorted(result.report["successes"])


@pytest.mark.slow
def test_parallel_retries_match_serial(res, mixed_corpus):
    serial = run(mixed_corpus, res, max_iters=1, seed=2, jobs=1)
    parallel = run(mixed_corpus, res, max_iters=1, seed=2, jobs=4)
    assert serial.report.equals(parallel.report)


def test_run_resumes_from_buffers(res, samples, unit_price):
    first = run(samples, res, max_iters=1, seed=0)
    checkpoint = (first.state.models, first.success, first.failure)
    resumed = run(list(samples) + list(unit_price), res, max_iters=0, resume=checkpoint)
    assert resumed.success.ids() == first.success.ids() | {r.id for r in unit_price}
    assert [e.problem_id for e in resumed.success.entries[: len(first.success)]] == [
        e.problem_id for e in first.success.entries
    ]
    row = resumed.report.loc[0]
    assert row["labeler_version"] == first.state.labeler.version
    assert row["successes"] == len(samples) + len(unit_price)
    with pytest.raises(LearnError):
        run(unit_price, res, max_iters=0, resume=checkpoint)


@pytest.fixture(scope="module")
def iid_run(res):
    """2000 道生成题，IID 八二开，跑满 5 轮"""
    records = corpus.generate(count=2000, seed=0)
    train_set, test = corpus.split(records, SplitSpec("iid", ratio=0.8, seed=0))
    return train_set, run(train_set, res, max_iters=5, seed=0, test=test, jobs=4)


@pytest.mark.slow
def test_buffers_stay_consistent_on_generated_corpus(iid_run):
    train_set, result = iid_run
    records = {r.id: r for r in train_set}
    report = result.report
    assert len(report) <= 6 and result.state.iteration <= 5
    assert list(report["successes"]) == sorted(report["successes"])
    assert ((report["successes"] + report["failures"]) == len(train_set)).all()
    assert result.success.ids() | result.failure.ids() == set(records)
    assert result.success.ids().isdisjoint(result.failure.ids())
    for e in result.success.entries:
        assert answers_match(execute(e.graph), records[e.problem_id].answer), e.problem_id
    assert report["test_accuracy"].iloc[-1] >= report["test_accuracy"].iloc[0]


@pytest.mark.slow
def test_iid_accuracy_floor(iid_run):
    _, result = iid_run
    assert result.report["test_accuracy"].iloc[-1] >= 0.9


@pytest.mark.slow
def test_ood_accuracy_tracks_iid(res, iid_run):
    records = corpus.generate(count=2000, seed=0)
    train_set, test = corpus.split(records, SplitSpec("ood", fraction=0.2))
    ood = run(train_set, res, max_iters=5, seed=0, test=test, jobs=4)
    iid = iid_run[1].report["test_accuracy"].iloc[-1]
    assert ood.report["test_accuracy"].iloc[-1] >= 0.7 * iid
