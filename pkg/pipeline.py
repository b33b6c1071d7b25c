# -*- coding: utf-8 -*-
"""
解析-求解流水线：
- 规则解析器: tokenize -> rule_tag -> 链接 -> 关系挖掘 + 隐含约束
- 学习解析器: 标注器概率 -> 候选枚举 (beam) -> 关系挖掘/模板翻译 -> 求解
测试时按分数顺序取第一个能求解的候选。
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Mapping, Optional, Sequence, Tuple

from config import Config
from extract import (
    ATTR_LABELS,
    NODE_LABELS,
    EntitySpanSet,
    LabelerModel,
    Lexicon,
    Token,
    detect_goal,
    find_phrases,
    load_lexicon,
    make_span,
    predict,
    rule_tag,
    tokenize,
)
from graph_core import (
    GrammarSpec,
    GraphError,
    ParseGraph,
    SmartError,
    Span,
    load_grammar,
    one_hot_distribution,
    validate_graph,
)
from link import (
    AttachmentResult,
    CandidateSet,
    ProximityModel,
    agent_mentions,
    assemble_graph,
    attach_attributes,
    build_drafts,
    build_nodes,
    enumerate_candidates,
    load_proximity,
)
from relate import (
    RelationError,
    TranslationExample,
    TranslatorModel,
    compile_predicate,
    ensure_predicate_refs,
    implicit_constraints,
    mine_relations,
    translate_relation,
)
from solver import Solution, SolverError, answer

logger = logging.getLogger(__name__)

SOLVED = "solved"
PARSE_FAILURE = "parse-failure"
SOLVER_FAILURE = "solver-failure"


@dataclass(frozen=True)
class Resources:
    lexicon: Lexicon
    proximity: ProximityModel
    grammar: GrammarSpec


def load_resources(cfg: Config) -> Resources:
    return Resources(
        lexicon=load_lexicon(cfg.lexicon_path),
        proximity=load_proximity(cfg.proximity_path),
        grammar=load_grammar(cfg.grammar_path),
    )


@dataclass(frozen=True)
class Options:
    """消融开关与 beam 宽度"""
    use_miner: bool = True
    use_translator: bool = True
    use_labeler: bool = True
    beam: int = 5

    @classmethod
    def from_config(cls, cfg: Config) -> "Options":
        return cls(
            use_miner=not cfg.disable_miner,
            use_translator=not cfg.disable_translator,
            use_labeler=not cfg.disable_labeler,
            beam=cfg.beam,
        )


@dataclass(frozen=True)
class Models:
    labeler: LabelerModel = field(default_factory=LabelerModel)
    translator: TranslatorModel = field(default_factory=TranslatorModel)


# ========== 解析图构造 ==========

def add_relations(
    pg: ParseGraph,
    tokens: Sequence[Token],
    rel_spans: Sequence[Span],
    res: Resources,
    translator: Optional[TranslatorModel],
    opts: Options,
) -> Tuple[ParseGraph, List[Span]]:
    """挖掘 + 翻译，返回 (加上关系方程的图, 仍未解释的 Rel span)"""
    if opts.use_miner:
        mined, unmatched = mine_relations(tokens, rel_spans, pg, res.lexicon)
    else:
        mined, unmatched = [], list(rel_spans)
    for m in mined:
        pg = ensure_predicate_refs(pg, m.predicate)
        pg = pg.with_equations([compile_predicate(m.predicate, pg, "Mined", m.span)])
    remaining = []
    for span in unmatched:
        hit = None
        if opts.use_translator and translator is not None and translator.store:
            try:
                hit = translate_relation(span, tokens, pg, translator, res.lexicon)
            except RelationError as e:
                logger.debug("翻译失败: %s", e)
        if hit is None:
            remaining.append(span)
            continue
        eq, _ = hit
        for ref in eq.refs():
            pg = pg.ensure_attribute(ref)
        pg = pg.with_equations([eq])
    return pg, remaining


def finish_graph(pg: ParseGraph, res: Resources) -> ParseGraph:
    """加隐含约束并做文法检查，不合法时抛 GraphError"""
    pg, implicit = implicit_constraints(pg)
    pg = pg.with_equations(implicit)
    report = validate_graph(pg, res.grammar)
    if not report.valid:
        raise GraphError("解析图不合法: " + "; ".join(v.message for v in report.violations))
    return pg


def build_graph(
    tokens: Sequence[Token],
    spans: EntitySpanSet,
    res: Resources,
    source: str = "",
    translator: Optional[TranslatorModel] = None,
    opts: Options = Options(),
    forced: Optional[Mapping[int, str]] = None,
) -> Tuple[ParseGraph, AttachmentResult]:
    goal = detect_goal(tokens, spans, res.lexicon)
    nodes = build_nodes(tokens, spans)
    drafts = build_drafts(tokens, spans, res.lexicon)
    attach = attach_attributes(nodes, drafts, tokens, spans, res.proximity, goal, forced)
    pg = assemble_graph(nodes, drafts, attach, goal, source)
    pg, _ = add_relations(pg, tokens, spans.of("Rel"), res, translator, opts)
    return finish_graph(pg, res), attach


def unresolved_rel_spans(pg: ParseGraph, spans: EntitySpanSet) -> List[Span]:
    """没有任何方程来自它的 Rel span"""
    used = {(eq.span.start, eq.span.end) for eq in pg.equations if eq.span is not None}
    return [s for s in spans.of("Rel") if (s.start, s.end) not in used]


# ========== 求解结果 ==========

@dataclass(frozen=True)
class Outcome:
    status: str
    value: Optional[Fraction] = None
    solution: Optional[Solution] = None
    graph: Optional[ParseGraph] = None
    error: str = ""


def execute(pg: ParseGraph) -> Optional[Fraction]:
    """execute(pg)：能求出则返回答案，否则 None"""
    try:
        return answer(pg).value
    except SmartError as e:
        logger.debug("求解失败 %s: %s", pg.source, e)
        return None


class Pipeline:
    """
    对外的求解入口。models 为空或标注器未训练时走规则解析器，
    否则走学习解析器（候选枚举，取第一个能求解的候选）。
    """

    def __init__(self, res: Resources, models: Optional[Models] = None, opts: Options = Options()):
        self.res = res
        self.models = models or Models()
        self.opts = opts

    @property
    def learned(self) -> bool:
        return self.opts.use_labeler and self.models.labeler.trained

    def rule_parse(self, text: str, source: str = "") -> Tuple[List[Token], EntitySpanSet, ParseGraph]:
        tokens = tokenize(text, self.res.lexicon)
        spans = rule_tag(tokens, self.res.lexicon)
        pg, _ = build_graph(tokens, spans, self.res, source, self.models.translator, self.opts)
        return tokens, spans, pg

    def candidates(self, text: str, source: str = "", k: Optional[int] = None) -> Tuple[List[Token], CandidateSet]:
        k = k or self.opts.beam
        tokens = tokenize(text, self.res.lexicon)
        rule_spans = rule_tag(tokens, self.res.lexicon)
        if self.learned:
            pred = predict(self.models.labeler, tokens, self.res.lexicon)
            node_dist, attr_dist = pred.node_dist, pred.attr_dist
            extra = [rule_spans]
        else:
            node_dist = one_hot_distribution(NODE_LABELS, len(tokens), rule_spans.nodes())
            attr_dist = one_hot_distribution(ATTR_LABELS, len(tokens), rule_spans.attributes())
            extra = []

        def build(spans: EntitySpanSet, forced: Mapping[int, str]):
            return build_graph(tokens, spans, self.res, source, self.models.translator, self.opts, forced)

        cands = enumerate_candidates(tokens, node_dist, attr_dist, k, build, self.res.proximity, extra)
        return tokens, cands

    def parse(self, text: str, source: str = "") -> ParseGraph:
        _, cands = self.candidates(text, source)
        if not cands.candidates:
            raise GraphError("没有合法的候选解析图")
        return cands.candidates[0].graph

    def solve(self, text: str, source: str = "") -> Outcome:
        try:
            _, cands = self.candidates(text, source)
        except SmartError as e:
            return Outcome(PARSE_FAILURE, error=str(e))
        if not cands.candidates:
            return Outcome(PARSE_FAILURE, error="没有合法的候选解析图")
        last_error = ""
        for cand in cands.candidates:
            try:
                sol = answer(cand.graph)
            except SolverError as e:
                last_error = str(e)
                continue
            return Outcome(SOLVED, sol.value, sol, sol.graph)
        return Outcome(SOLVER_FAILURE, graph=cands.candidates[0].graph, error=last_error)

    def rule_solve(self, text: str, source: str = "") -> Outcome:
        """只用规则解析器（自举阶段）"""
        try:
            _, _, pg = self.rule_parse(text, source)
        except SmartError as e:
            return Outcome(PARSE_FAILURE, error=str(e))
        try:
            sol = answer(pg)
        except SolverError as e:
            return Outcome(SOLVER_FAILURE, graph=pg, error=str(e))
        return Outcome(SOLVED, sol.value, sol, pg)


# ========== 从伪标注图导出训练样本 ==========

def spans_from_graph(pg: ParseGraph, tokens: Sequence[Token], lexicon: Optional[Lexicon] = None) -> EntitySpanSet:
    """
    解析图 -> 标注器训练用的实体 span：
    Agent 的每次提及、World 的 span 与其他范围短语、Event 触发词、属性、关系方程的 span。
    """
    lex = lexicon or load_lexicon()
    out: List[Tuple[Span, str]] = []
    rels = []
    for eq in pg.equations:
        if eq.provenance != "Implicit" and eq.span is not None and not any(eq.span.overlaps(r) for r in rels):
            rels.append(eq.span)
    out.extend((r, "Rel") for r in rels)

    def free(span: Span) -> bool:
        return not any(span.overlaps(s) for s, _ in out)

    for a in pg.attributes:
        if a.span is not None and not any(r.contains(a.span) for r in rels) and free(a.span):
            out.append((a.span, a.kind))
    world = pg.world()
    if world is not None and world.span is not None:
        for m in find_phrases(tokens, lex):
            span = make_span(tokens, m.start, m.end)
            if "scope" in m.classes and free(span):
                out.append((span, "World"))
        if free(world.span):
            out.append((world.span, "World"))
    for n in pg.nodes_of("Agent"):
        for p in agent_mentions(tokens, n):
            span = make_span(tokens, p, p + len(n.name.split()))
            if free(span):
                out.append((span, "Agent"))
    for n in pg.nodes_of("Event"):
        if n.span is not None and free(n.span):
            out.append((n.span, "Event"))
    return EntitySpanSet(tuple(sorted(out, key=lambda x: (x[0].start, x[0].end))))


def translation_examples(pg: ParseGraph, tokens: Sequence[Token]) -> List[TranslationExample]:
    return [
        TranslationExample(eq.span, tuple(tokens), pg, eq)
        for eq in pg.equations
        if eq.provenance != "Implicit" and eq.span is not None
    ]
