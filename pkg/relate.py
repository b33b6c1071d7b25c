# -*- coding: utf-8 -*-
"""
关系模块：Rel span -> 一阶逻辑谓词 -> 方程。

谓词: Equal / MoreThan / LessThan / TimesOf，函数: Rate / Amount / Total / Sum / Left。
规则挖掘解释不了的 Rel span 交给模板翻译器（从伪标注图学到的 模式 -> 方程骨架 计数表）。
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from extract import (
    Lexicon,
    Token,
    clause_bounds,
    find_phrases,
    is_agent_word,
    load_lexicon,
)
from graph_core import (
    ATTR_KINDS,
    GOAL_UNKNOWN,
    AttrRef,
    BinOp,
    Const,
    Equation,
    Expr,
    ParseGraph,
    Ref,
    SerializationError,
    SmartError,
    Span,
    UnknownVar,
    equation_to_prefix,
    format_rational,
    parse_prefix_equation,
)
from link import agent_mentions, event_regions, quantified_events

logger = logging.getLogger(__name__)


class RelationError(SmartError):
    """无法解析的函数引用、占位符个数不符、比较级缺少数量"""


PREDICATE_KINDS = ("Equal", "MoreThan", "LessThan", "TimesOf")


# ========== 函数与谓词 ==========

@dataclass(frozen=True)
class FRef:
    function: str
    node: str

    def __post_init__(self):
        if self.function not in ATTR_KINDS:
            raise RelationError("未知属性函数 {}".format(self.function))

    def __str__(self) -> str:
        return "{}({})".format(self.function, self.node)


@dataclass(frozen=True)
class Sum:
    args: Tuple[FRef, ...]

    def __post_init__(self):
        if not self.args:
            raise RelationError("Sum 至少需要一个参数")
        if len({a.function for a in self.args}) != 1:
            raise RelationError("Sum 的参数必须是同一种属性")

    def __str__(self) -> str:
        return "Sum({})".format(", ".join(str(a) for a in self.args))


@dataclass(frozen=True)
class Left:
    """范围量减去已被事件覆盖的量"""
    scope: FRef
    covered: Tuple[FRef, ...]

    def __str__(self) -> str:
        return "Left({}; {})".format(self.scope, ", ".join(str(a) for a in self.covered))


FuncRef = Union[FRef, Sum, Left]
Quantity = Union[Fraction, str]  # str 只能是 GOAL_UNKNOWN


@dataclass(frozen=True)
class Predicate:
    kind: str
    f1: FuncRef
    f2: Optional[FuncRef] = None
    n: Optional[Quantity] = None

    def __post_init__(self):
        if self.kind not in PREDICATE_KINDS:
            raise RelationError("未知谓词 {}".format(self.kind))
        if isinstance(self.n, str) and self.n != GOAL_UNKNOWN:
            raise RelationError("非法数量 {}".format(self.n))
        if self.kind == "Equal":
            if (self.f2 is None) == (self.n is None):
                raise RelationError("Equal 需要第二个函数或一个数值（二选一）")
        else:
            if self.f2 is None:
                raise RelationError("{} 缺少第二个函数".format(self.kind))
            if self.n is None:
                raise RelationError("{} 缺少数量 n（比较级没有给出差值/倍数）".format(self.kind))

    def __str__(self) -> str:
        args = [str(self.f1)]
        if self.f2 is not None:
            args.append(str(self.f2))
        if self.n is not None:
            args.append(self.n if isinstance(self.n, str) else format_rational(self.n))
        return "{}({})".format(self.kind, ", ".join(args))


def func_refs(f: Optional[FuncRef]) -> List[AttrRef]:
    if f is None:
        return []
    if isinstance(f, FRef):
        return [AttrRef(f.function, f.node)]
    if isinstance(f, Sum):
        return [AttrRef(a.function, a.node) for a in f.args]
    return [AttrRef(f.scope.function, f.scope.node)] + [AttrRef(a.function, a.node) for a in f.covered]


def predicate_refs(p: Predicate) -> List[AttrRef]:
    return func_refs(p.f1) + func_refs(p.f2)


def func_expr(f: FuncRef) -> Expr:
    if isinstance(f, FRef):
        return Ref(AttrRef(f.function, f.node))
    if isinstance(f, Sum):
        expr = func_expr(f.args[0])
        for a in f.args[1:]:
            expr = BinOp("+", expr, func_expr(a))
        return expr
    expr = func_expr(f.scope)
    for a in f.covered:
        expr = BinOp("-", expr, func_expr(a))
    return expr


def _quantity_expr(n: Quantity) -> Expr:
    return UnknownVar() if n == GOAL_UNKNOWN else Const(n)


def ensure_predicate_refs(pg: ParseGraph, p: Predicate) -> ParseGraph:
    """谓词用到但图里没有的属性补成 Unknown（链接阶段的决定）"""
    for ref in predicate_refs(p):
        if pg.node(ref.node) is None:
            raise RelationError("unresolvable FuncRef {}: 节点不存在".format(ref))
        pg = pg.ensure_attribute(ref)
    return pg


def compile_predicate(p: Predicate, pg: ParseGraph, provenance: str = "Mined", span: Optional[Span] = None) -> Equation:
    """
    Equal(F1, F2) -> F1 = F2；Equal(F1, n) -> F1 = n
    MoreThan -> F1 = F2 + n；LessThan -> F1 = F2 - n；TimesOf -> F1 = n × F2
    """
    for ref in predicate_refs(p):
        if pg.attribute(ref) is None:
            raise RelationError("unresolvable FuncRef {}".format(ref))
    lhs = func_expr(p.f1)
    if p.kind == "Equal":
        rhs = func_expr(p.f2) if p.f2 is not None else _quantity_expr(p.n)
    elif p.kind == "MoreThan":
        rhs = BinOp("+", func_expr(p.f2), _quantity_expr(p.n))
    elif p.kind == "LessThan":
        rhs = BinOp("-", func_expr(p.f2), _quantity_expr(p.n))
    else:
        rhs = BinOp("*", _quantity_expr(p.n), func_expr(p.f2))
    return Equation(lhs, rhs, provenance=provenance, prob=1.0, span=span, label=str(p))


# ========== 角色绑定 ==========

def bind_roles(span: Span, tokens: Sequence[Token], pg: ParseGraph) -> Dict[str, str]:
    """
    S: 同一子句内 span 前最近提到的 Agent（没有则取 span 后、宾语之外的 Agent）
    O: span 之后同一子句内第一个提到的 Agent
    E: 区域包含 span 的 Event
    W: World
    """
    roles: Dict[str, str] = {}
    world = pg.world()
    if world is not None:
        roles["W"] = world.id
    for eid, (rs, re_) in event_regions(tokens, pg.nodes).items():
        if rs <= span.start < re_:
            roles["E"] = eid
    cs, ce = clause_bounds(tokens, span.start)
    mentions = sorted(
        (p, a.id) for a in pg.nodes_of("Agent") for p in agent_mentions(tokens, a) if cs <= p < ce
    )
    after = [(p, aid) for p, aid in mentions if p >= span.end]
    before = [(p, aid) for p, aid in mentions if p < span.start]
    if after:
        roles["O"] = after[0][1]
    if before:
        roles["S"] = before[-1][1]
    else:
        rest = [aid for _, aid in after[1:] if aid != roles.get("O")]
        if rest:
            roles["S"] = rest[0]
    return roles


def _relation_function(pg: ParseGraph, subject: str, obj: str) -> str:
    for node in (obj, subject):
        known = [a.kind for a in pg.attributes_of(node) if a.known]
        if known:
            return known[0]
    return "Total"


# ========== 规则挖掘 ==========

@dataclass(frozen=True)
class MinedRelation:
    predicate: Predicate
    span: Span


def span_numbers(tokens: Sequence[Token], span: Span) -> List[Fraction]:
    return [t.normalized_number for t in tokens[span.start:span.end] if t.tag == "NUM"]


def mine_relations(
    tokens: Sequence[Token],
    rel_spans: Sequence[Span],
    pg: ParseGraph,
    lexicon: Optional[Lexicon] = None,
) -> Tuple[List[MinedRelation], List[Span]]:
    """
    关键词匹配。返回 (挖到的谓词, 未匹配的 span)；未匹配的交给 translate_relation。
    span 内的数字作为谓词常数 n，不进入属性集合。
    """
    lex = lexicon or load_lexicon()
    phrases = find_phrases(tokens, lex)
    events = quantified_events(pg.nodes)
    world = pg.world()
    mined: List[MinedRelation] = []
    unmatched: List[Span] = []
    for span in rel_spans:
        classes = set()
        for m in phrases:
            if span.start <= m.start and m.end <= span.end:
                classes |= m.classes
        numbers = span_numbers(tokens, span)
        n: Optional[Quantity] = numbers[0] if numbers else None
        if n is None and "interrog" in classes:
            n = GOAL_UNKNOWN
        roles = bind_roles(span, tokens, pg)
        found: List[Predicate] = []

        kind = None
        if "times" in classes:
            kind = "TimesOf"
        elif "more" in classes:
            kind = "MoreThan"
        elif "less" in classes:
            kind = "LessThan"
        if kind is not None or "equal" in classes:
            if "S" in roles and "O" in roles:
                fn = _relation_function(pg, roles["S"], roles["O"])
                f1, f2 = FRef(fn, roles["S"]), FRef(fn, roles["O"])
                if kind is None:
                    found.append(Predicate("Equal", f1, f2))
                elif n is None:
                    logger.info("比较级缺少数量，拒绝: %s", " ".join(span.text))
                else:
                    found.append(Predicate(kind, f1, f2, n))
        elif "left" in classes and events and n is not None and world is not None:
            covered = tuple(FRef("Total", e.id) for e in events)
            found.append(Predicate("Equal", Left(FRef("Total", world.id), covered), None, n))
        elif "sum" in classes and events and n is not None:
            found.append(Predicate("Equal", Sum(tuple(FRef("Total", e.id) for e in events)), None, n))
        elif "bundle" in classes and "E" in roles:
            found.extend(_bundle_predicates(tokens, span, pg, roles["E"], events))
        elif not classes and n is not None and "E" in roles and world is not None:
            first = tokens[span.start]
            if first.tag == "NUM" and ("%" in first.text or "/" in first.text) and tokens[span.end - 1].lemma == "of":
                found.append(Predicate("TimesOf", FRef("Total", roles["E"]), FRef("Total", world.id), n))

        if found:
            mined.extend(MinedRelation(p, span) for p in found)
        elif "bundle" in classes and "E" in roles:
            logger.debug("打包关系没有需要共享数量的事件: %s", " ".join(span.text))
        else:
            unmatched.append(span)
    return mined, unmatched


def _bundle_predicates(tokens, span: Span, pg: ParseGraph, bundle_event: str, events) -> List[Predicate]:
    # "45 sets of desks and chairs"：单价按 desk / chair 计的事件共享这一套的数量
    items = {t.unit for t in tokens[span.start:span.end] if t.unit}
    found = []
    for e in events:
        if e.id == bundle_event:
            continue
        rate = pg.attribute(AttrRef("Rate", e.id))
        if rate is None or rate.den_unit not in items:
            continue
        if pg.attribute(AttrRef("Amount", e.id)) is not None:
            continue
        found.append(Predicate("Equal", FRef("Amount", e.id), FRef("Amount", bundle_event)))
    return found


# ========== 隐含约束 ==========

def implicit_constraints(pg: ParseGraph) -> Tuple[ParseGraph, List[Equation]]:
    """
    1. 事件有 rate/amount/total 中至少两个时：Total = Rate × Amount（缺的补 Unknown）；
    2. 目标是 World 的总量、没有挖到的关系约束 World 总量、且每个有属性的事件都有总量时：
       World.Total = Σ Event.Total。
    只返回图中还没有的方程，因此重复调用不会再增加方程。
    """
    existing = {equation_to_prefix(eq) for eq in pg.equations}
    new: List[Equation] = []
    for e in pg.nodes_of("Event"):
        have = {a.kind for a in pg.attributes_of(e.id)}
        if len(have & set(ATTR_KINDS)) < 2:
            continue
        for kind in ATTR_KINDS:
            pg = pg.ensure_attribute(AttrRef(kind, e.id))
        eq = Equation(
            Ref(AttrRef("Total", e.id)),
            BinOp("*", Ref(AttrRef("Rate", e.id)), Ref(AttrRef("Amount", e.id))),
            provenance="Implicit",
            label="Total = Rate × Amount",
        )
        if equation_to_prefix(eq) not in existing:
            new.append(eq)
            existing.add(equation_to_prefix(eq))

    world = pg.world()
    if world is not None and pg.goal == AttrRef("Total", world.id):
        scope = AttrRef("Total", world.id)
        constrained = any(scope in eq.refs() for eq in pg.equations if eq.provenance != "Implicit")
        events = [e for e in pg.nodes_of("Event") if pg.attributes_of(e.id)]
        if not constrained and events and all(pg.attribute(AttrRef("Total", e.id)) for e in events):
            total = func_expr(Sum(tuple(FRef("Total", e.id) for e in events)))
            eq = Equation(Ref(scope), total, provenance="Implicit", label="World.Total = Σ Event.Total")
            if equation_to_prefix(eq) not in existing:
                new.append(eq)
    return pg, new


# ========== 模板翻译器 ==========

def abstract_pattern(span: Span, tokens: Sequence[Token], lexicon: Optional[Lexicon] = None) -> str:
    """数字 -> <N>，单位 -> <U>，人名/主语名词 -> <V>，疑问短语 -> <Q>"""
    lex = lexicon or load_lexicon()
    interrog = [m for m in find_phrases(tokens, lex) if "interrog" in m.classes]
    parts: List[str] = []
    for i in range(span.start, span.end):
        t = tokens[i]
        q = [m for m in interrog if m.start <= i < m.end]
        if q:
            if i == q[0].start:
                parts.append("<Q>")
        elif t.tag == "NUM":
            parts.append("<N>")
        elif t.unit:
            parts.append("<U>")
        elif t.proper or is_agent_word(t, lex):
            parts.append("<V>")
        else:
            parts.append(t.lemma)
    return " ".join(parts)


_ROLE_ORDER = ("S", "O", "E", "W")


def equation_skeleton(eq: Equation, roles: Mapping[str, str], numbers: Sequence[Fraction]) -> Optional[str]:
    """把方程里的节点换成角色、把 span 中出现过的数字换成 num:i；有节点找不到角色时返回 None"""
    inverse: Dict[str, str] = {}
    for role in _ROLE_ORDER:
        if role in roles and roles[role] not in inverse:
            inverse[roles[role]] = role
    out = []
    for tok in equation_to_prefix(eq).split():
        if tok.startswith("ref:"):
            _, function, node = tok.split(":")
            if node not in inverse:
                return None
            out.append("ref:{}:@{}".format(function, inverse[node]))
        elif tok.startswith("const:"):
            value = Fraction(tok[len("const:"):])
            out.append("num:{}".format(list(numbers).index(value)) if value in numbers else tok)
        else:
            out.append(tok)
    return " ".join(out)


def skeleton_arity(skeleton: str) -> int:
    idx = [int(tok[4:]) for tok in skeleton.split() if tok.startswith("num:")]
    return max(idx) + 1 if idx else 0


def skeleton_roles(skeleton: str) -> set:
    return {tok.split(":@")[1] for tok in skeleton.split() if tok.startswith("ref:") and ":@" in tok}


def instantiate_skeleton(
    skeleton: str, roles: Mapping[str, str], numbers: Sequence[Fraction]
) -> Optional[Tuple[Expr, Expr]]:
    """角色缺失 -> None；骨架要的数字比 span 里多 -> RelationError"""
    if skeleton_arity(skeleton) > len(numbers):
        raise RelationError("占位符个数不符: 骨架需要 {} 个数字，span 只有 {} 个".format(skeleton_arity(skeleton), len(numbers)))
    out = []
    for tok in skeleton.split():
        if tok.startswith("ref:") and ":@" in tok:
            head, role = tok.split(":@")
            if role not in roles:
                return None
            out.append("{}:{}".format(head, roles[role]))
        elif tok.startswith("num:"):
            value = numbers[int(tok[4:])]
            out.append("const:{}/{}".format(value.numerator, value.denominator))
        else:
            out.append(tok)
    try:
        return parse_prefix_equation(" ".join(out), "skeleton")
    except SerializationError as e:
        raise RelationError("骨架无法解析: {}".format(e))


@dataclass(frozen=True)
class TranslatorModel:
    """模式 -> {骨架: 次数}；概率 = 次数 / 该模式总次数"""
    store: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    version: int = 0

    def lookup(self, pattern: str) -> Optional[Tuple[str, float]]:
        counts = self.store.get(pattern)
        if not counts:
            return None
        total = sum(counts.values())
        skeleton, count = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        return skeleton, count / total

    def skeletons(self) -> List[str]:
        """所有已知骨架，按总次数降序（探索时按这个顺序尝试）"""
        totals: Counter = Counter()
        for counts in self.store.values():
            totals.update(counts)
        return [s for s, _ in sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))]


@dataclass(frozen=True)
class TranslationExample:
    span: Span
    tokens: Tuple[Token, ...]
    graph: ParseGraph
    equation: Equation


def train_translator(
    model: TranslatorModel, examples: Sequence[TranslationExample], lexicon: Optional[Lexicon] = None
) -> TranslatorModel:
    """从样本重新统计模板表（不累加旧表），相同样本得到相同的表"""
    if not examples:
        raise RelationError("翻译器训练样本为空")
    store: Dict[str, Counter] = {}
    skipped = 0
    for ex in examples:
        roles = bind_roles(ex.span, ex.tokens, ex.graph)
        skeleton = equation_skeleton(ex.equation, roles, span_numbers(ex.tokens, ex.span))
        if skeleton is None:
            skipped += 1
            continue
        pattern = abstract_pattern(ex.span, ex.tokens, lexicon)
        store.setdefault(pattern, Counter())[skeleton] += 1
    if skipped:
        logger.debug("翻译器跳过 %d 个无法抽象的样本", skipped)
    frozen = {p: dict(sorted(c.items())) for p, c in sorted(store.items())}
    return TranslatorModel(frozen, model.version + 1)


def translate_relation(
    span: Span,
    tokens: Sequence[Token],
    pg: ParseGraph,
    model: TranslatorModel,
    lexicon: Optional[Lexicon] = None,
) -> Optional[Tuple[Equation, float]]:
    """模式未见过或角色绑定不上时返回 None"""
    pattern = abstract_pattern(span, tokens, lexicon)
    hit = model.lookup(pattern)
    if hit is None:
        return None
    skeleton, prob = hit
    sides = instantiate_skeleton(skeleton, bind_roles(span, tokens, pg), span_numbers(tokens, span))
    if sides is None:
        return None
    eq = Equation(sides[0], sides[1], provenance="Translated", prob=prob, span=span, label=pattern)
    return eq, prob
