# -*- coding: utf-8 -*-
"""
属性文法与解析图（情境模型）。
解析图结构：World -> Agents -> Events，节点上挂 rate / amount / total 三类属性，
属性之间的关系以方程表示。包括文法合法性检查、分解概率打分与 JSON 序列化。
"""
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np


class SmartError(Exception):
    """本项目所有异常的基类"""


class GraphError(SmartError):
    """解析图结构错误（空图、span 越界等）"""


class SerializationError(SmartError):
    """JSON 反序列化失败，path 指出出错字段"""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__("{}: {}".format(path, message) if path else message)


NODE_KINDS = ("World", "Agent", "Event")
ATTR_KINDS = ("Rate", "Amount", "Total")
PROVENANCES = ("Mined", "Translated", "Implicit")
OPS = ("+", "-", "*", "/", "^")


# ========== 有理数 ==========

def to_rational(text: Union[str, int, Fraction]) -> Fraction:
    """
    文本数字 -> 精确有理数。支持 "3.65"、"30%"、"2/5"、整数。
    3.65 -> 73/20（Fraction 自动约分）。
    """
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    s = str(text).strip()
    if s.endswith("%"):
        return Fraction(s[:-1]) / 100
    return Fraction(s)


def is_terminating(q: Fraction) -> bool:
    """分母只含 2、5 因子时可写成有限小数"""
    d = q.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    return d == 1


def format_rational(q: Fraction) -> str:
    """有限小数按小数显示（47.45），否则显示分数（10/3）"""
    if q.denominator == 1:
        return str(q.numerator)
    if not is_terminating(q):
        return "{}/{}".format(q.numerator, q.denominator)
    sign = "-" if q < 0 else ""
    q = abs(q)
    digits = 0
    scaled = q
    while scaled.denominator != 1:
        scaled *= 10
        digits += 1
    whole = str(scaled.numerator).rjust(digits + 1, "0")
    return "{}{}.{}".format(sign, whole[:-digits], whole[-digits:])


# ========== 解析图数据结构 ==========

@dataclass(frozen=True)
class Span:
    start: int
    end: int
    text: Tuple[str, ...] = ()

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise GraphError("非法 span [{}, {})".format(self.start, self.end))

    def contains(self, other: "Span") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def shifted(self, offset: int) -> "Span":
        return Span(self.start + offset, self.end + offset, self.text)

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    span: Optional[Span] = None
    parent: Optional[str] = None
    name: str = ""


@dataclass(frozen=True)
class Attribute:
    """value 为 None 表示未知量（Unknown）"""
    id: str
    kind: str
    owner: str
    value: Optional[Fraction] = None
    num_unit: Optional[str] = None
    den_unit: Optional[str] = None
    span: Optional[Span] = None

    @property
    def known(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class AttrRef:
    function: str
    node: str

    def __str__(self) -> str:
        return "{}({})".format(self.function, self.node)


def attr_id(function: str, node: str) -> str:
    return "{}@{}".format(function, node)


# 表达式树
@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Ref:
    ref: AttrRef


@dataclass(frozen=True)
class UnknownVar:
    name: str = "x"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in OPS:
            raise GraphError("未知运算符: {}".format(self.op))
        if self.op == "^" and not isinstance(self.right, Const):
            raise GraphError("乘方的指数必须是常数")


Expr = Union[Const, Ref, UnknownVar, BinOp]


def expr_refs(expr: Expr) -> List[AttrRef]:
    if isinstance(expr, Ref):
        return [expr.ref]
    if isinstance(expr, BinOp):
        return expr_refs(expr.left) + expr_refs(expr.right)
    return []


def expr_has_unknown_var(expr: Expr) -> bool:
    if isinstance(expr, UnknownVar):
        return True
    if isinstance(expr, BinOp):
        return expr_has_unknown_var(expr.left) or expr_has_unknown_var(expr.right)
    return False


def expr_ops(expr: Expr) -> List[str]:
    if isinstance(expr, BinOp):
        return [expr.op] + expr_ops(expr.left) + expr_ops(expr.right)
    return []


@dataclass(frozen=True)
class Equation:
    lhs: Expr
    rhs: Expr
    provenance: str = "Mined"
    prob: float = 1.0
    span: Optional[Span] = None
    label: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise GraphError("未知方程来源: {}".format(self.provenance))
        if not (self.refs() or expr_has_unknown_var(self.lhs) or expr_has_unknown_var(self.rhs)):
            raise GraphError("方程两边都没有属性引用或未知量")

    def refs(self) -> List[AttrRef]:
        return expr_refs(self.lhs) + expr_refs(self.rhs)

    def has_unknown_var(self) -> bool:
        return expr_has_unknown_var(self.lhs) or expr_has_unknown_var(self.rhs)


GOAL_UNKNOWN = "unknown"
Goal = Union[AttrRef, str]


@dataclass(frozen=True)
class ParseGraph:
    nodes: Tuple[Node, ...]
    attributes: Tuple[Attribute, ...] = ()
    equations: Tuple[Equation, ...] = ()
    goal: Optional[Goal] = None
    source: str = ""

    # ---- 查询 ----
    def node(self, node_id: str) -> Optional[Node]:
        for n in self.nodes:
            if n.id == node_id:
                return n
        return None

    def world(self) -> Optional[Node]:
        for n in self.nodes:
            if n.kind == "World":
                return n
        return None

    def children(self, node_id: str) -> List[Node]:
        return [n for n in self.nodes if n.parent == node_id]

    def nodes_of(self, kind: str) -> List[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def attribute(self, ref: AttrRef) -> Optional[Attribute]:
        for a in self.attributes:
            if a.owner == ref.node and a.kind == ref.function:
                return a
        return None

    def attributes_of(self, node_id: str) -> List[Attribute]:
        return [a for a in self.attributes if a.owner == node_id]

    # ---- 函数式更新（图本身不可变） ----
    def with_attribute(self, attr: Attribute) -> "ParseGraph":
        others = tuple(a for a in self.attributes if not (a.owner == attr.owner and a.kind == attr.kind))
        return replace(self, attributes=others + (attr,))

    def ensure_attribute(self, ref: AttrRef) -> "ParseGraph":
        """引用的属性不存在时补一个 Unknown 属性"""
        if self.attribute(ref) is not None:
            return self
        return replace(
            self,
            attributes=self.attributes + (Attribute(attr_id(ref.function, ref.node), ref.function, ref.node),),
        )

    def without_attribute(self, ref: AttrRef) -> "ParseGraph":
        return replace(
            self,
            attributes=tuple(a for a in self.attributes if not (a.owner == ref.node and a.kind == ref.function)),
        )

    def with_equations(self, equations: Iterable[Equation]) -> "ParseGraph":
        return replace(self, equations=self.equations + tuple(equations))

    def with_goal(self, goal: Goal) -> "ParseGraph":
        return replace(self, goal=goal)


# ========== 属性文法 ==========

@dataclass(frozen=True)
class GrammarSpec:
    """G = (S, V, A, E, R)，从 grammar.json 读取，测试可以改写"""
    start: str
    nonterminals: Tuple[str, ...]
    attributes: Tuple[str, ...]
    relation_ops: Tuple[str, ...]
    productions: Tuple[Tuple[str, Tuple[str, ...]], ...]

    def rules_for(self, symbol: str) -> List[Tuple[str, ...]]:
        return [rhs for lhs, rhs in self.productions if lhs == symbol]

    def child_kinds(self, symbol: str, _seen: Optional[frozenset] = None) -> set:
        """symbol 的产生式展开后可以直接出现的节点类型（World/Agent/Event）"""
        seen = (_seen or frozenset()) | {symbol}
        kinds = set()
        for rhs in self.rules_for(symbol):
            for sym in rhs:
                if sym in NODE_KINDS:
                    kinds.add(sym)
                elif sym not in seen:
                    kinds |= self.child_kinds(sym, seen)
        return kinds

    def requires_children(self, symbol: str) -> bool:
        rules = self.rules_for(symbol)
        return bool(rules) and all(len(rhs) > 0 for rhs in rules)


def grammar_from_dict(data: Mapping[str, Any]) -> GrammarSpec:
    productions = []
    for lhs, alternatives in data["productions"].items():
        for rhs in alternatives:
            productions.append((lhs, tuple(rhs.split()) if isinstance(rhs, str) else tuple(rhs)))
    return GrammarSpec(
        start=data["start"],
        nonterminals=tuple(data["nonterminals"]),
        attributes=tuple(data["attributes"]),
        relation_ops=tuple(data["relation_ops"]),
        productions=tuple(productions),
    )


def load_grammar(path) -> GrammarSpec:
    with open(path, "r", encoding="utf-8") as f:
        return grammar_from_dict(json.load(f))


@dataclass(frozen=True)
class Violation:
    kind: str  # hierarchy / attribute-kind / duplicate-attribute / unresolved-ref / operator / goal / structure
    message: str


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    violations: Tuple[Violation, ...] = ()

    def kinds(self) -> set:
        return {v.kind for v in self.violations}


def validate_graph(pg: ParseGraph, g: GrammarSpec) -> ValidityReport:
    """
    检查解析图能否由文法 G 推导：
    1. 节点层级由产生式允许（S -> World -> Agents -> Agent -> Events -> Event）；
    2. 属性种类属于 A，且每个节点每种属性最多一个；
    3. 方程只引用存在的属性、只用 E 中的运算符；
    4. 恰好一个目标。
    违规逐条记录在 violations 中，不抛异常。
    """
    reasons: List[Violation] = []
    by_id = {n.id: n for n in pg.nodes}
    if len(by_id) != len(pg.nodes):
        reasons.append(Violation("structure", "节点 id 重复"))

    top_kinds = g.child_kinds(g.start)
    roots = [n for n in pg.nodes if n.parent is None]
    worlds = [n for n in pg.nodes if n.kind == "World"]
    if len(worlds) != 1:
        reasons.append(Violation("hierarchy", "World 节点数量为 {}，应为 1".format(len(worlds))))
    for n in roots:
        if n.kind not in top_kinds:
            reasons.append(Violation("hierarchy", "{} 不能作为根节点".format(n.kind)))
    for n in pg.nodes:
        if n.kind not in g.nonterminals:
            reasons.append(Violation("hierarchy", "未知节点类型 {}".format(n.kind)))
            continue
        if n.parent is None:
            continue
        parent = by_id.get(n.parent)
        if parent is None:
            reasons.append(Violation("hierarchy", "{} 的父节点 {} 不存在".format(n.id, n.parent)))
            continue
        if n.kind not in g.child_kinds(parent.kind):
            reasons.append(Violation("hierarchy", "{} under {}".format(n.kind, parent.kind)))
    for n in pg.nodes:
        if n.kind in g.nonterminals and g.requires_children(n.kind):
            if not any(c.parent == n.id for c in pg.nodes):
                reasons.append(Violation("hierarchy", "{} {} 缺少子节点".format(n.kind, n.id)))
    # 环检测
    for n in pg.nodes:
        seen, cur = set(), n
        while cur is not None and cur.parent is not None:
            if cur.id in seen:
                reasons.append(Violation("hierarchy", "父子关系成环: {}".format(n.id)))
                break
            seen.add(cur.id)
            cur = by_id.get(cur.parent)

    allowed = {a.lower() for a in g.attributes}
    seen_slots = set()
    for a in pg.attributes:
        if a.kind.lower() not in allowed:
            reasons.append(Violation("attribute-kind", "属性种类 {} 不在 A 中".format(a.kind)))
        if a.owner not in by_id:
            reasons.append(Violation("unresolved-ref", "属性 {} 的所属节点 {} 不存在".format(a.id, a.owner)))
        slot = (a.owner, a.kind)
        if slot in seen_slots:
            reasons.append(Violation("duplicate-attribute", "节点 {} 有多个 {}".format(a.owner, a.kind)))
        seen_slots.add(slot)

    ops = set(g.relation_ops)
    for i, eq in enumerate(pg.equations):
        for ref in eq.refs():
            if pg.attribute(ref) is None:
                reasons.append(Violation("unresolved-ref", "方程 {} 引用了不存在的 {}".format(i, ref)))
        for op in expr_ops(eq.lhs) + expr_ops(eq.rhs):
            if op not in ops:
                reasons.append(Violation("operator", "方程 {} 使用了未定义运算符 {}".format(i, op)))

    if pg.goal is None:
        reasons.append(Violation("goal", "没有目标"))
    elif isinstance(pg.goal, AttrRef):
        if pg.attribute(pg.goal) is None:
            reasons.append(Violation("goal", "目标 {} 不存在".format(pg.goal)))
        if any(eq.has_unknown_var() for eq in pg.equations):
            reasons.append(Violation("goal", "同时存在属性目标和方程内未知量"))
    else:
        if not any(eq.has_unknown_var() for eq in pg.equations):
            reasons.append(Violation("goal", "方程中没有未知量"))

    return ValidityReport(valid=not reasons, violations=tuple(reasons))


# ========== 分解概率打分 ==========

@dataclass(frozen=True, eq=False)
class LabelDistribution:
    """每个词在某个标注头上的标签概率，probs 形状 (n_tokens, n_labels)"""
    labels: Tuple[str, ...]
    probs: np.ndarray

    def prob(self, index: int, label: str) -> float:
        return float(self.probs[index, self.labels.index(label)])

    def __len__(self) -> int:
        return int(self.probs.shape[0])


def one_hot_distribution(labels: Sequence[str], n_tokens: int, spans: Iterable[Tuple[Span, str]]) -> LabelDistribution:
    """由确定的 span 构造 0/1 分布（规则解析器没有概率时使用）"""
    probs = np.zeros((n_tokens, len(labels)))
    probs[:, labels.index("O")] = 1.0
    for span, label in spans:
        if label not in labels:
            continue
        for i in range(span.start, span.end):
            probs[i, :] = 0.0
            probs[i, labels.index(label)] = 1.0
    return LabelDistribution(tuple(labels), probs)


def _span_log_mean(span: Span, label: str, dist: LabelDistribution) -> float:
    if span.end > len(dist):
        raise GraphError("span [{}, {}) 超出 {} 个词".format(span.start, span.end, len(dist)))
    p = float(np.mean([dist.prob(i, label) for i in range(span.start, span.end)]))
    return math.log(p) if p > 0 else -math.inf


def _mean_span_log(items: List[Tuple[Span, str]], dist: Optional[LabelDistribution]) -> float:
    # 每个 span 内按词取平均，跨 span 取几何平均
    if not items or dist is None:
        return 0.0
    return float(np.mean([_span_log_mean(span, label, dist) for span, label in items]))


@dataclass(frozen=True)
class ScoreBreakdown:
    log_v: float
    log_a: float
    log_e: float
    e_unclipped: float

    @property
    def total(self) -> float:
        return self.log_v + self.log_a + self.log_e


def score_components(
    pg: ParseGraph,
    node_label_dists: Optional[LabelDistribution],
    attr_label_dists: Optional[LabelDistribution],
    rel_probs: Optional[Sequence[float]] = None,
) -> ScoreBreakdown:
    if not pg.nodes:
        raise GraphError("空解析图无法打分")
    node_items = [(n.span, n.kind) for n in pg.nodes if n.span is not None]
    attr_items = [(a.span, a.kind) for a in pg.attributes if a.span is not None]
    log_v = _mean_span_log(node_items, node_label_dists)
    log_a = _mean_span_log(attr_items, attr_label_dists)
    if rel_probs is None:
        # Implicit 方程没有文本 span，不参与关系概率
        rel_probs = [eq.prob for eq in pg.equations if eq.provenance != "Implicit"]
    if len(rel_probs) == 0:
        return ScoreBreakdown(log_v, log_a, 0.0, 1.0)
    unclipped = float(sum(rel_probs))
    clipped = min(unclipped, 1.0)
    log_e = math.log(clipped) if clipped > 0 else -math.inf
    return ScoreBreakdown(log_v, log_a, log_e, unclipped)


def score_graph(
    pg: ParseGraph,
    node_label_dists: Optional[LabelDistribution],
    attr_label_dists: Optional[LabelDistribution],
    rel_probs: Optional[Sequence[float]] = None,
) -> float:
    """log p(pg|x) = log p(V|x) + log p(A|x) + log p(E|x)"""
    return score_components(pg, node_label_dists, attr_label_dists, rel_probs).total


# ========== 表达式前缀串 ==========

def expr_to_prefix(expr: Expr) -> List[str]:
    if isinstance(expr, Const):
        return ["const:{}/{}".format(expr.value.numerator, expr.value.denominator)]
    if isinstance(expr, Ref):
        return ["ref:{}:{}".format(expr.ref.function, expr.ref.node)]
    if isinstance(expr, UnknownVar):
        return ["unknown"]
    return [expr.op] + expr_to_prefix(expr.left) + expr_to_prefix(expr.right)


def equation_to_prefix(eq: Equation) -> str:
    return " ".join(["="] + expr_to_prefix(eq.lhs) + expr_to_prefix(eq.rhs))


def _parse_prefix_expr(tokens: List[str], pos: int, path: str) -> Tuple[Expr, int]:
    if pos >= len(tokens):
        raise SerializationError("前缀表达式提前结束", path)
    tok = tokens[pos]
    if tok in OPS:
        left, pos = _parse_prefix_expr(tokens, pos + 1, path)
        right, pos = _parse_prefix_expr(tokens, pos, path)
        try:
            return BinOp(tok, left, right), pos
        except GraphError as e:
            raise SerializationError(str(e), path)
    if tok == "unknown":
        return UnknownVar(), pos + 1
    if tok.startswith("const:"):
        try:
            return Const(Fraction(tok[len("const:"):])), pos + 1
        except (ValueError, ZeroDivisionError):
            raise SerializationError("非法常数 {}".format(tok), path)
    if tok.startswith("ref:"):
        parts = tok.split(":")
        if len(parts) != 3 or parts[1] not in ATTR_KINDS:
            raise SerializationError("非法属性引用 {}".format(tok), path)
        return Ref(AttrRef(parts[1], parts[2])), pos + 1
    raise SerializationError("未知记号 {}".format(tok), path)


def parse_prefix_equation(text: str, path: str = "equation") -> Tuple[Expr, Expr]:
    tokens = text.split()
    if not tokens or tokens[0] != "=":
        raise SerializationError("方程必须以 = 开头", path)
    lhs, pos = _parse_prefix_expr(tokens, 1, path)
    rhs, pos = _parse_prefix_expr(tokens, pos, path)
    if pos != len(tokens):
        raise SerializationError("方程末尾有多余记号", path)
    return lhs, rhs


def render_expr(expr: Expr) -> str:
    """中缀显示，用于推导轨迹"""
    if isinstance(expr, Const):
        return format_rational(expr.value)
    if isinstance(expr, Ref):
        return str(expr.ref)
    if isinstance(expr, UnknownVar):
        return expr.name
    symbol = {"*": "×", "/": "÷"}.get(expr.op, expr.op)
    return "({} {} {})".format(render_expr(expr.left), symbol, render_expr(expr.right))


def render_equation(eq: Equation) -> str:
    lhs, rhs = render_expr(eq.lhs), render_expr(eq.rhs)
    if lhs.startswith("(") and lhs.endswith(")") and isinstance(eq.lhs, BinOp):
        lhs = lhs[1:-1]
    if isinstance(eq.rhs, BinOp):
        rhs = rhs[1:-1]
    return "{} = {}".format(lhs, rhs)


# ========== JSON 序列化 ==========

def _span_to_json(span: Optional[Span]):
    if span is None:
        return None
    return {"start": span.start, "end": span.end, "text": list(span.text)}


def _value_to_json(value: Optional[Fraction]):
    if value is None:
        return "unknown"
    return "{}/{}".format(value.numerator, value.denominator)


def goal_to_json(goal: Optional[Goal]):
    if goal is None:
        return None
    if isinstance(goal, AttrRef):
        return "ref:{}:{}".format(goal.function, goal.node)
    return GOAL_UNKNOWN


def graph_to_dict(pg: ParseGraph) -> Dict[str, Any]:
    return {
        "nodes": [
            {"id": n.id, "kind": n.kind, "span": _span_to_json(n.span), "parent": n.parent, "name": n.name}
            for n in pg.nodes
        ],
        "attributes": [
            {
                "id": a.id,
                "kind": a.kind,
                "owner": a.owner,
                "value": _value_to_json(a.value),
                "num_unit": a.num_unit,
                "den_unit": a.den_unit,
                "span": _span_to_json(a.span),
            }
            for a in pg.attributes
        ],
        "equations": [
            {
                "expr": equation_to_prefix(eq),
                "provenance": eq.provenance,
                "prob": eq.prob,
                "span": _span_to_json(eq.span),
                "label": eq.label,
            }
            for eq in pg.equations
        ],
        "goal": goal_to_json(pg.goal),
        "source": pg.source,
    }


def serialize_graph(pg: ParseGraph) -> str:
    """键排序、无多余空白，输出逐字节稳定"""
    return json.dumps(graph_to_dict(pg), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _require(obj: Mapping, key: str, path: str, types) -> Any:
    if not isinstance(obj, Mapping) or key not in obj:
        raise SerializationError("缺少字段", "{}.{}".format(path, key) if path else key)
    value = obj[key]
    if not isinstance(value, types):
        raise SerializationError("类型错误", "{}.{}".format(path, key) if path else key)
    return value


def _span_from_json(data, path: str) -> Optional[Span]:
    if data is None:
        return None
    try:
        return Span(
            _require(data, "start", path, int),
            _require(data, "end", path, int),
            tuple(_require(data, "text", path, list)),
        )
    except GraphError as e:
        raise SerializationError(str(e), path)


def _value_from_json(data, path: str) -> Optional[Fraction]:
    if data == "unknown":
        return None
    if not isinstance(data, str):
        raise SerializationError("属性值必须是字符串", path)
    try:
        return Fraction(data)
    except (ValueError, ZeroDivisionError):
        raise SerializationError("非法属性值 {}".format(data), path)


def goal_from_json(data, path: str = "goal") -> Optional[Goal]:
    if data is None:
        return None
    if data == GOAL_UNKNOWN:
        return GOAL_UNKNOWN
    if isinstance(data, str) and data.startswith("ref:"):
        parts = data.split(":")
        if len(parts) == 3 and parts[1] in ATTR_KINDS:
            return AttrRef(parts[1], parts[2])
    raise SerializationError("非法目标 {}".format(data), path)


def graph_from_dict(data: Mapping[str, Any]) -> ParseGraph:
    if not isinstance(data, Mapping):
        raise SerializationError("顶层必须是对象")
    nodes = []
    for i, item in enumerate(_require(data, "nodes", "", list)):
        path = "nodes[{}]".format(i)
        kind = _require(item, "kind", path, str)
        if kind not in NODE_KINDS:
            raise SerializationError("未知节点类型 {}".format(kind), path + ".kind")
        parent = item.get("parent")
        if parent is not None and not isinstance(parent, str):
            raise SerializationError("类型错误", path + ".parent")
        nodes.append(
            Node(
                id=_require(item, "id", path, str),
                kind=kind,
                span=_span_from_json(item.get("span"), path + ".span"),
                parent=parent,
                name=item.get("name", "") or "",
            )
        )
    attributes = []
    for i, item in enumerate(_require(data, "attributes", "", list)):
        path = "attributes[{}]".format(i)
        kind = _require(item, "kind", path, str)
        attributes.append(
            Attribute(
                id=_require(item, "id", path, str),
                kind=kind,
                owner=_require(item, "owner", path, str),
                value=_value_from_json(item.get("value"), path + ".value"),
                num_unit=item.get("num_unit"),
                den_unit=item.get("den_unit"),
                span=_span_from_json(item.get("span"), path + ".span"),
            )
        )
    equations = []
    for i, item in enumerate(_require(data, "equations", "", list)):
        path = "equations[{}]".format(i)
        lhs, rhs = parse_prefix_equation(_require(item, "expr", path, str), path + ".expr")
        prov = item.get("provenance", "Mined")
        try:
            equations.append(
                Equation(
                    lhs,
                    rhs,
                    provenance=prov,
                    prob=float(item.get("prob", 1.0)),
                    span=_span_from_json(item.get("span"), path + ".span"),
                    label=item.get("label", "") or "",
                )
            )
        except GraphError as e:
            raise SerializationError(str(e), path)
    source = data.get("source", "")
    if not isinstance(source, str):
        raise SerializationError("类型错误", "source")
    return ParseGraph(
        nodes=tuple(nodes),
        attributes=tuple(attributes),
        equations=tuple(equations),
        goal=goal_from_json(data.get("goal")),
        source=source,
    )


def deserialize_graph(text: str) -> ParseGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SerializationError("JSON 格式错误: {}".format(e))
    return graph_from_dict(data)
