# -*- coding: utf-8 -*-
"""
迭代自训练：
1. 自举：规则解析器逐题求解，答案对的题连同解析图进成功缓冲区，其余进失败缓冲区；
2. 每轮：从成功缓冲区的伪标注图导出样本，重训标注器与模板翻译器；
   用学到的解析器重做失败题，有候选图算出正确答案就迁入成功缓冲区；
3. 一轮没有迁移即收敛，或达到最大轮数。
全程只用题目答案做监督，没有人工标注的解析图。
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from corpus import ProblemRecord, evaluate
from extract import LabelerModel, Token, tokenize, train
from graph_core import Equation, ParseGraph, SmartError, Span
from link import Candidate
from pipeline import (
    Models,
    Options,
    Pipeline,
    Resources,
    execute,
    finish_graph,
    spans_from_graph,
    translation_examples,
    unresolved_rel_spans,
)
from relate import (
    RelationError,
    TranslatorModel,
    abstract_pattern,
    bind_roles,
    instantiate_skeleton,
    span_numbers,
    train_translator,
)
from solver import answers_match

logger = logging.getLogger(__name__)

EXPLORE_MAX_SPANS = 3  # 每个候选最多同时猜几个未解释的关系 span
EXPLORE_BUDGET = 200  # 每个候选最多试多少种骨架组合


class LearnError(SmartError):
    """学习循环错误：成功缓冲区为空、题号重复"""


# ========== 缓冲区 ==========

@dataclass(frozen=True)
class SuccessEntry:
    problem_id: str
    graph: ParseGraph
    origin: str = "rule"  # rule / learned / explored
    iteration: int = 0


@dataclass(frozen=True)
class FailureEntry:
    problem_id: str
    answer: Fraction
    reason: str = ""


@dataclass(frozen=True)
class SuccessBuffer:
    entries: Tuple[SuccessEntry, ...] = ()

    def ids(self) -> set:
        return {e.problem_id for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, new: Sequence[SuccessEntry]) -> "SuccessBuffer":
        """只追加；题号重复视为错误"""
        seen = self.ids()
        for e in new:
            if e.problem_id in seen:
                raise LearnError("成功缓冲区中已有题目 {}".format(e.problem_id))
            seen.add(e.problem_id)
        return SuccessBuffer(self.entries + tuple(new))


@dataclass(frozen=True)
class FailureBuffer:
    entries: Tuple[FailureEntry, ...] = ()

    def ids(self) -> set:
        return {e.problem_id for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def without(self, ids: set) -> "FailureBuffer":
        return FailureBuffer(tuple(e for e in self.entries if e.problem_id not in ids))


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    successes: int
    failures: int
    migrated: int = 0
    explored: int = 0
    labeler_version: int = 0
    translator_version: int = 0
    patterns: int = 0
    test_accuracy: Optional[float] = None


@dataclass(frozen=True, eq=False)
class TrainState:
    labeler: LabelerModel = field(default_factory=LabelerModel)
    translator: TranslatorModel = field(default_factory=TranslatorModel)
    iteration: int = 0
    metrics: Tuple[IterationMetrics, ...] = ()
    converged: bool = False

    @property
    def models(self) -> Models:
        return Models(self.labeler, self.translator)


def _index(dataset: Sequence[ProblemRecord]) -> Dict[str, ProblemRecord]:
    records: Dict[str, ProblemRecord] = {}
    for r in dataset:
        if r.id in records:
            raise LearnError("题号重复: {}".format(r.id))
        records[r.id] = r
    return records


# ========== 自举 ==========

def bootstrap(dataset: Sequence[ProblemRecord], res: Resources, opts: Options = Options()) -> Tuple[SuccessBuffer, FailureBuffer]:
    """规则解析器逐题求解；execute(pg) 等于标准答案的进成功缓冲区"""
    _index(dataset)
    parser = Pipeline(res, Models(), opts)
    success: List[SuccessEntry] = []
    failure: List[FailureEntry] = []
    total = len(dataset)
    for i, rec in enumerate(dataset):
        outcome = parser.rule_solve(rec.text, rec.id)
        if outcome.status == "solved" and answers_match(outcome.value, rec.answer):
            success.append(SuccessEntry(rec.id, outcome.graph, "rule", 0))
        else:
            reason = "wrong-answer" if outcome.status == "solved" else outcome.status
            logger.debug("%s 自举失败 (%s): %s", rec.id, reason, outcome.error)
            failure.append(FailureEntry(rec.id, rec.answer, reason))
        if (i + 1) % 500 == 0:
            logger.info("自举进度: %d/%d", i + 1, total)
    logger.info("自举完成: 成功 %d, 失败 %d", len(success), len(failure))
    return SuccessBuffer(tuple(success)), FailureBuffer(tuple(failure))


# ========== 训练样本 ==========

def derive_examples(success: SuccessBuffer, records: Mapping[str, ProblemRecord], res: Resources):
    """
    从成功缓冲区导出标注器样本 (tokens, spans) 与翻译器样本。
    每张图先重新执行一遍，答案对不上的不参与训练（并告警）。
    """
    labeler_examples: List[Tuple[List[Token], object]] = []
    trans_examples = []
    for entry in success.entries:
        rec = records[entry.problem_id]
        value = execute(entry.graph)
        if value is None or not answers_match(value, rec.answer):
            logger.warning("%s 的伪标注图重新执行后答案不符，跳过", rec.id)
            continue
        tokens = tokenize(rec.text, res.lexicon)
        labeler_examples.append((tokens, spans_from_graph(entry.graph, tokens, res.lexicon)))
        trans_examples.extend(translation_examples(entry.graph, tokens))
    return labeler_examples, trans_examples


# ========== 失败题重试 ==========

def _strip_implicit(pg: ParseGraph) -> ParseGraph:
    return replace(pg, equations=tuple(eq for eq in pg.equations if eq.provenance != "Implicit"))


def _span_options(span: Span, tokens: Sequence[Token], pg: ParseGraph, translator: TranslatorModel, res: Resources) -> List[Equation]:
    roles = bind_roles(span, tokens, pg)
    numbers = span_numbers(tokens, span)
    label = abstract_pattern(span, tokens, res.lexicon)
    options = []
    for skeleton in translator.skeletons():
        try:
            sides = instantiate_skeleton(skeleton, roles, numbers)
        except RelationError:
            continue
        if sides is None:
            continue
        try:
            options.append(Equation(sides[0], sides[1], provenance="Translated", prob=1.0, span=span, label=label))
        except SmartError:
            continue
    return options


def explore(
    cand: Candidate,
    tokens: Sequence[Token],
    record: ProblemRecord,
    translator: TranslatorModel,
    res: Resources,
    max_spans: int = EXPLORE_MAX_SPANS,
    budget: int = EXPLORE_BUDGET,
) -> Optional[ParseGraph]:
    """
    对候选图中没有方程的关系 span，依次尝试已知骨架的组合（每个 span 也可以不解释），
    只有执行结果等于标准答案的组合才被接受。
    """
    spans = unresolved_rel_spans(cand.graph, cand.spans)[:max_spans]
    if not spans or not translator.store:
        return None
    base = _strip_implicit(cand.graph)
    per_span = [[None] + _span_options(s, tokens, base, translator, res) for s in spans]
    tried = 0
    for combo in itertools.product(*per_span):
        eqs = [eq for eq in combo if eq is not None]
        if not eqs:
            continue
        tried += 1
        if tried > budget:
            break
        pg = base
        for ref in (r for eq in eqs for r in eq.refs()):
            pg = pg.ensure_attribute(ref)
        try:
            pg = finish_graph(pg.with_equations(eqs), res)
        except SmartError:
            continue
        value = execute(pg)
        if value is not None and answers_match(value, record.answer):
            return pg
    return None


def retry_problem(parser: Pipeline, record: ProblemRecord) -> Optional[Tuple[ParseGraph, str]]:
    """按分数顺序找第一个执行出标准答案的候选；都不行再做骨架探索"""
    try:
        tokens, cands = parser.candidates(record.text, record.id)
    except SmartError as e:
        logger.debug("%s 候选生成失败: %s", record.id, e)
        return None
    for cand in cands.candidates:
        value = execute(cand.graph)
        if value is not None and answers_match(value, record.answer):
            return cand.graph, "learned"
    if parser.opts.use_translator:
        for cand in cands.candidates:
            pg = explore(cand, tokens, record, parser.models.translator, parser.res)
            if pg is not None:
                return pg, "explored"
    return None


# ========== 一轮迭代 ==========

def iterate(
    state: TrainState,
    success: SuccessBuffer,
    failure: FailureBuffer,
    records: Mapping[str, ProblemRecord],
    res: Resources,
    opts: Options = Options(),
    seed: int = 0,
    jobs: int = 1,
) -> Tuple[TrainState, SuccessBuffer, FailureBuffer]:
    if not success:
        raise LearnError("成功缓冲区为空，无法训练")
    labeler_examples, trans_examples = derive_examples(success, records, res)
    if not labeler_examples:
        raise LearnError("成功缓冲区中没有可用的训练样本")

    labeler = state.labeler
    if opts.use_labeler:
        labeler = train(state.labeler, labeler_examples, seed=seed + state.iteration, lexicon=res.lexicon)
    translator = state.translator
    if opts.use_translator and trans_examples:
        translator = train_translator(state.translator, trans_examples, res.lexicon)

    iteration = state.iteration + 1
    parser = Pipeline(res, Models(labeler, translator), opts)
    pending = [records[e.problem_id] for e in failure.entries]
    if jobs > 1 and len(pending) > 1:
        # 模型快照不可变，各题重试互不影响；结果按原顺序合并
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(lambda r: retry_problem(parser, r), pending))
    else:
        results = []
        for i, rec in enumerate(pending):
            results.append(retry_problem(parser, rec))
            if (i + 1) % 500 == 0:
                logger.info("第 %d 轮重试进度: %d/%d", iteration, i + 1, len(pending))

    migrated: List[SuccessEntry] = []
    for rec, hit in zip(pending, results):
        if hit is not None:
            migrated.append(SuccessEntry(rec.id, hit[0], hit[1], iteration))
    moved = {e.problem_id for e in migrated}
    success = success.add(migrated)
    failure = failure.without(moved)

    metrics = IterationMetrics(
        iteration=iteration,
        successes=len(success),
        failures=len(failure),
        migrated=len(migrated),
        explored=sum(1 for e in migrated if e.origin == "explored"),
        labeler_version=labeler.version,
        translator_version=translator.version,
        patterns=len(translator.store),
    )
    logger.info(
        "第 %d 轮: 迁移 %d 题（探索 %d），成功 %d，失败 %d",
        iteration, metrics.migrated, metrics.explored, metrics.successes, metrics.failures,
    )
    new_state = TrainState(labeler, translator, iteration, state.metrics + (metrics,), converged=not migrated)
    return new_state, success, failure


# ========== 完整训练 ==========

@dataclass(frozen=True, eq=False)
class RunResult:
    state: TrainState
    success: SuccessBuffer
    failure: FailureBuffer
    report: pd.DataFrame


REPORT_COLUMNS = [f for f in IterationMetrics.__dataclass_fields__]


def _accuracy(res: Resources, models: Models, opts: Options, test: Optional[Sequence[ProblemRecord]], jobs: int) -> Optional[float]:
    if not test:
        return None
    return evaluate(Pipeline(res, models, opts), test, jobs).overall


def _resume(
    dataset: Sequence[ProblemRecord],
    res: Resources,
    opts: Options,
    checkpoint: Tuple[Models, SuccessBuffer, FailureBuffer],
) -> Tuple[TrainState, SuccessBuffer, FailureBuffer]:
    """从检查点接着训练：缓冲区里没有的题先自举再并入，轮次接着成功缓冲区里最大的那一轮"""
    records = _index(dataset)
    models, success, failure = checkpoint
    known = success.ids() | failure.ids()
    alien = sorted(known - set(records))
    if alien:
        raise LearnError("检查点里的题目不在题库中: {}".format(", ".join(alien[:5])))
    fresh = [r for r in dataset if r.id not in known]
    if fresh:
        logger.info("检查点之外的新题 %d 道，先自举", len(fresh))
        more_success, more_failure = bootstrap(fresh, res, opts)
        success = success.add(more_success.entries)
        failure = FailureBuffer(failure.entries + more_failure.entries)
    iteration = max((e.iteration for e in success.entries), default=0)
    return TrainState(models.labeler, models.translator, iteration), success, failure


def run(
    dataset: Sequence[ProblemRecord],
    res: Resources,
    opts: Options = Options(),
    max_iters: int = 5,
    seed: int = 0,
    test: Optional[Sequence[ProblemRecord]] = None,
    jobs: int = 1,
    resume: Optional[Tuple[Models, SuccessBuffer, FailureBuffer]] = None,
) -> RunResult:
    """
    自举后迭代，直到一轮没有迁移或达到 max_iters（0 表示只自举）。
    给了 resume（模型与两个缓冲区）时跳过自举，从检查点再迭代至多 max_iters 轮。
    报告每轮一行：缓冲区大小、迁移数、模型版本、测试集准确率。
    """
    if max_iters < 0:
        raise LearnError("max_iters 不能为负数")
    records = _index(dataset)
    if resume is None:
        success, failure = bootstrap(dataset, res, opts)
        state = TrainState()
    else:
        state, success, failure = _resume(dataset, res, opts, resume)
    first = IterationMetrics(
        state.iteration, len(success), len(failure),
        labeler_version=state.labeler.version,
        translator_version=state.translator.version,
        patterns=len(state.translator.store),
        test_accuracy=_accuracy(res, state.models, opts, test, jobs),
    )
    state = replace(state, metrics=(first,))
    for _ in range(max_iters):
        if not success:
            logger.warning("自举后成功缓冲区为空，停止迭代")
            break
        state, success, failure = iterate(state, success, failure, records, res, opts, seed, jobs)
        acc = _accuracy(res, state.models, opts, test, jobs)
        last = replace(state.metrics[-1], test_accuracy=acc)
        state = replace(state, metrics=state.metrics[:-1] + (last,))
        if state.converged:
            logger.info("第 %d 轮没有新增成功题，收敛", state.iteration)
            break
    report = pd.DataFrame([asdict(m) for m in state.metrics], columns=REPORT_COLUMNS)
    return RunResult(state, success, failure, report)
