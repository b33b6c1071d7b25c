# -*- coding: utf-8 -*-
"""
链接模块：把抽取出的实体组装成解析图。

- 节点：World（可无 span）-> Agent（按名字去重）-> Event（挂到前面最近的 Agent）
- 属性挂接：代价 = 词距 + 子句距离 - 兼容度奖励，冲突时输家换到下一个节点
- 候选枚举：对接近阈值的标注和接近的挂接做扰动，按 score_graph 减挂接代价排序
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import config
from config import ConfigError
from extract import (
    EntitySpanSet,
    GoalMark,
    Lexicon,
    Token,
    clause_bounds,
    decode_spans,
    extract_units,
    load_lexicon,
    sentence_bounds,
)
from graph_core import (
    GOAL_UNKNOWN,
    AttrRef,
    Attribute,
    LabelDistribution,
    Node,
    ParseGraph,
    SmartError,
    Span,
    attr_id,
    score_graph,
    serialize_graph,
)

logger = logging.getLogger(__name__)

WORLD_ID = "w0"
SEGMENT_BREAKS = ("and", "that", "then")


class LinkError(SmartError):
    """组装失败（空情境、目标属性缺失）"""


@dataclass(frozen=True)
class ProximityModel:
    w_token_dist: float = 0.1
    w_dep_dist: float = 0.5
    w_type_bonus: float = 25.0
    beam_margin: float = 0.15

    def __post_init__(self):
        for name in ("w_token_dist", "w_dep_dist", "w_type_bonus", "beam_margin"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("{} 必须是有限数".format(name))
        if self.w_token_dist <= 0:
            raise ConfigError("w_token_dist 必须 > 0")


def load_proximity(path=None) -> ProximityModel:
    values = config.read_key_values(path or config.PROXIMITY_PATH)
    known = {}
    for key, value in values.items():
        if key not in ProximityModel.__dataclass_fields__:
            logger.warning("proximity 配置中未知的键: %s", key)
            continue
        try:
            known[key] = float(value)
        except ValueError:
            raise ConfigError("proximity 配置 {}={} 不是数字".format(key, value))
    return ProximityModel(**known)


# ========== 节点 ==========

def _agent_name(span: Span) -> str:
    return " ".join(span.text).lower()


def build_nodes(tokens: Sequence[Token], spans: EntitySpanSet) -> List[Node]:
    """
    World 总是存在；同名 Agent 只建一个节点；
    Event 挂到前面最近提到的 Agent 下，没有则挂到第一个 Agent 或默认 Agent；
    没有 Event 的 Agent 补一个无 span 的默认 Event（文法要求 Agent -> Events）。
    """
    worlds = spans.of("World")
    nodes = [Node(WORLD_ID, "World", worlds[0] if worlds else None, None, "world")]
    agent_ids: Dict[str, str] = {}
    mentions: List[Tuple[int, str]] = []
    for span in spans.of("Agent"):
        name = _agent_name(span)
        if name not in agent_ids:
            agent_ids[name] = "a{}".format(len(agent_ids) + 1)
            nodes.append(Node(agent_ids[name], "Agent", span, WORLD_ID, name))
        mentions.append((span.start, agent_ids[name]))

    events = []
    default_agent = None
    for k, span in enumerate(spans.of("Event"), 1):
        before = [aid for pos, aid in mentions if pos < span.start]
        if before:
            owner = before[-1]
        elif mentions:
            owner = mentions[0][1]
        else:
            if default_agent is None:
                default_agent = Node("a0", "Agent", None, WORLD_ID, "")
            owner = default_agent.id
        events.append(Node("e{}".format(k), "Event", span, owner, ""))
    if default_agent is None and not agent_ids:
        default_agent = Node("a0", "Agent", None, WORLD_ID, "")
    if default_agent is not None:
        nodes.append(default_agent)
    nodes.extend(events)
    owners = {e.parent for e in events}
    for n in list(nodes):
        if n.kind == "Agent" and n.id not in owners:
            nodes.append(Node("d{}".format(n.id[1:]), "Event", None, n.id, ""))
    return nodes


def event_regions(tokens: Sequence[Token], nodes: Sequence[Node]) -> Dict[str, Tuple[int, int]]:
    """Event 的文本区域：从触发词到下一个 Event 或句末"""
    events = sorted((n for n in nodes if n.kind == "Event" and n.span is not None), key=lambda n: n.span.start)
    regions = {}
    for i, e in enumerate(events):
        _, se = sentence_bounds(tokens, e.span.start)
        end = se
        if i + 1 < len(events) and events[i + 1].span.start < se:
            end = events[i + 1].span.start
        regions[e.id] = (e.span.start, end)
    return regions


def agent_mentions(tokens: Sequence[Token], node: Node) -> List[int]:
    """Agent 名字在文本中出现的位置（同名重复提及都算）"""
    if not node.name:
        return []
    words = node.name.split()
    n = len(words)
    return [i for i in range(len(tokens) - n + 1) if [t.lemma for t in tokens[i:i + n]] == words]


def quantified_events(nodes: Sequence[Node]) -> List[Node]:
    return [n for n in nodes if n.kind == "Event" and n.span is not None]


# ========== 属性 ==========

@dataclass(frozen=True)
class AttributeDraft:
    """还没有归属节点的属性"""
    kind: str
    span: Span
    value: Optional[Fraction]
    num_unit: Optional[str] = None
    den_unit: Optional[str] = None


def build_drafts(tokens: Sequence[Token], spans: EntitySpanSet, lexicon: Optional[Lexicon] = None) -> List[AttributeDraft]:
    """Rel 内部的数字是谓词常数，不作为属性"""
    lex = lexicon or load_lexicon()
    rels = spans.of("Rel")
    drafts = []
    for span, kind in sorted(spans.attributes(), key=lambda x: x[0].start):
        if any(r.contains(span) for r in rels):
            continue
        first = tokens[span.start]
        value = first.normalized_number if len(span) == 1 else None
        num_unit, den_unit = extract_units(tokens, span, lex)
        if kind == "Amount":
            num_unit = None
        elif kind == "Total":
            den_unit = None
        drafts.append(AttributeDraft(kind, span, value, num_unit, den_unit))
    return drafts


def _segment(tokens: Sequence[Token], span: Span) -> Tuple[int, int]:
    # 子句内以 and/that/then 为界的一段
    cs, ce = clause_bounds(tokens, span.start)
    start = span.start
    while start > cs and tokens[start - 1].lemma not in SEGMENT_BREAKS:
        start -= 1
    end = span.end
    while end < ce and tokens[end].lemma not in SEGMENT_BREAKS:
        end += 1
    return start, end


def _nouns(tokens: Sequence[Token], start: int, end: int) -> set:
    return {t.lemma for t in tokens[start:end] if t.tag == "NOUN" and not t.unit}


def _token_distance(span: Span, start: int, end: int) -> int:
    if start <= span.start < end:
        return 0
    if span.end <= start:
        return start - span.end + 1
    return span.start - end + 1


@dataclass(frozen=True)
class AttachmentResult:
    owners: Tuple[Optional[str], ...]
    # 每个属性的次优节点及其代价差
    alternatives: Tuple[Optional[Tuple[str, float]], ...]
    # 各属性实际归属比各自最优归属多出的代价之和，贪心无冲突时为 0
    cost: float = 0.0


def attachment_costs(
    nodes: Sequence[Node],
    drafts: Sequence[AttributeDraft],
    tokens: Sequence[Token],
    spans: EntitySpanSet,
    prox: ProximityModel,
    goal: Optional[GoalMark] = None,
) -> List[List[Tuple[float, str]]]:
    """每个属性的 (代价, 节点 id) 列表，按代价升序"""
    regions = event_regions(tokens, nodes)
    events = [n for n in quantified_events(nodes)]
    agents = [n for n in nodes if n.kind == "Agent" and n.name]
    scopes = spans.of("World")
    out = []
    for d in drafts:
        cs, ce = clause_bounds(tokens, d.span.start)
        seg_start, seg_end = _segment(tokens, d.span)
        seg_nouns = _nouns(tokens, seg_start, seg_end)
        clause = tokens[d.span.start].clause
        costs: List[Tuple[float, str]] = []
        if any(cs <= s.start < ce for s in scopes):
            out.append([(-prox.w_type_bonus, WORLD_ID)])
            continue
        is_goal = goal is not None and goal.kind == "attribute" and goal.span == d.span
        if events:
            for e in events:
                rs, re_ = regions[e.id]
                dist = _token_distance(d.span, rs, re_)
                dep = abs(clause - tokens[rs].clause)
                compat = len(seg_nouns & _nouns(tokens, rs, re_))
                costs.append((prox.w_token_dist * dist + prox.w_dep_dist * dep - prox.w_type_bonus * compat, e.id))
            mentioned = any(rs < ce and cs < re_ for rs, re_ in regions.values())
        else:
            for a in agents:
                positions = agent_mentions(tokens, a)
                if not positions:
                    continue
                best = None
                for p in positions:
                    dist = abs(d.span.start - p)
                    dep = abs(clause - tokens[p].clause)
                    subject = 1 if (tokens[p].clause == clause and p < d.span.start) else 0
                    c = prox.w_token_dist * dist + prox.w_dep_dist * dep - prox.w_type_bonus * subject
                    best = c if best is None else min(best, c)
                costs.append((best, a.id))
            mentioned = any(cs <= p < ce for a in agents for p in agent_mentions(tokens, a))
        # 问总量且问句不提任何节点 -> World（"How much did it spend?"）
        if is_goal and d.kind == "Total" and not mentioned:
            costs.append((-prox.w_type_bonus, WORLD_ID))
        if not costs:
            costs.append((0.0, WORLD_ID))
        out.append(sorted(costs, key=lambda x: (x[0], x[1])))
    return out


def attach_attributes(
    nodes: Sequence[Node],
    drafts: Sequence[AttributeDraft],
    tokens: Sequence[Token],
    spans: EntitySpanSet,
    prox: ProximityModel,
    goal: Optional[GoalMark] = None,
    forced: Optional[Mapping[int, str]] = None,
) -> AttachmentResult:
    """
    按最优代价从小到大依次分配；同一节点同种属性只能有一个，
    被占用时换到下一个候选，所有候选都被占用时退到 World。
    """
    forced = forced or {}
    costs = attachment_costs(nodes, drafts, tokens, spans, prox, goal)
    order = sorted(range(len(drafts)), key=lambda i: (i not in forced, costs[i][0][0], drafts[i].span.start))
    taken = set()
    owners: List[Optional[str]] = [None] * len(drafts)
    for i in order:
        kind = drafts[i].kind
        choices = [node for _, node in costs[i]]
        if i in forced:
            choices = [forced[i]] + [c for c in choices if c != forced[i]]
        if WORLD_ID not in choices:
            choices.append(WORLD_ID)
        for node in choices:
            if (node, kind) not in taken:
                owners[i] = node
                taken.add((node, kind))
                break
        if owners[i] is None:
            logger.warning("属性 %s(%s) 没有可挂接的节点，已丢弃", kind, " ".join(drafts[i].span.text))
    alternatives = []
    regret = 0.0
    for i in range(len(drafts)):
        ranked = costs[i]
        chosen = next((c for c, n in ranked if n == owners[i]), None)
        # 不在代价表里的归属（冲突退到 World、被丢弃）按一次类型奖励计
        regret += prox.w_type_bonus if chosen is None else chosen - ranked[0][0]
        if len(ranked) >= 2:
            first = ranked[0][0] if chosen is None else chosen
            second = next(((n, c - first) for c, n in ranked if n != owners[i]), None)
            alternatives.append(second)
        else:
            alternatives.append(None)
    return AttachmentResult(tuple(owners), tuple(alternatives), regret)


def assemble_graph(
    nodes: Sequence[Node],
    drafts: Sequence[AttributeDraft],
    attachments: AttachmentResult,
    goal: GoalMark,
    source: str = "",
) -> ParseGraph:
    """由节点、属性与挂接结果构造解析图；Rel 内的目标记为方程未知量"""
    if not drafts and not any(n.kind == "Event" and n.span is not None for n in nodes):
        raise LinkError("empty situation: 没有事件也没有属性")
    attributes = []
    goal_ref = None
    for d, owner in zip(drafts, attachments.owners):
        if owner is None:
            continue
        attributes.append(Attribute(attr_id(d.kind, owner), d.kind, owner, d.value, d.num_unit, d.den_unit, d.span))
        if goal.kind == "attribute" and d.span == goal.span:
            goal_ref = AttrRef(d.kind, owner)
    if goal.kind == "relation":
        goal_value = GOAL_UNKNOWN
    elif goal_ref is None:
        raise LinkError("目标属性 {} 没有被抽取".format(" ".join(goal.span.text)))
    else:
        goal_value = goal_ref
    return ParseGraph(nodes=tuple(nodes), attributes=tuple(attributes), equations=(), goal=goal_value, source=source)


# ========== 候选枚举 ==========

@dataclass(frozen=True)
class Candidate:
    graph: ParseGraph
    score: float
    spans: EntitySpanSet
    attach_cost: float = 0.0


@dataclass(frozen=True)
class CandidateSet:
    candidates: Tuple[Candidate, ...]
    k: int

    def best(self) -> Optional[Candidate]:
        return self.candidates[0] if self.candidates else None

    def __len__(self) -> int:
        return len(self.candidates)


# build(spans, forced_owners) -> (完整解析图, 挂接结果)，失败时抛 SmartError
GraphBuilder = Callable[[EntitySpanSet, Mapping[int, str]], Tuple[ParseGraph, AttachmentResult]]


def _span_variants(
    tokens: Sequence[Token],
    node_dist: LabelDistribution,
    attr_dist: LabelDistribution,
    threshold: float,
    margin: float,
) -> List[EntitySpanSet]:
    variants = []
    for head, dist in (("node", node_dist), ("attr", attr_dist)):
        for i in range(len(dist)):
            row = dist.probs[i]
            best = int(row.argmax())
            p = float(row[best])
            label = dist.labels[best]
            if label == "O" or abs(p - threshold) >= margin:
                continue
            flip = {i: "O"} if p > threshold else {i: label}
            if head == "node":
                variants.append(decode_spans(tokens, node_dist, attr_dist, threshold, forced_node=flip))
            else:
                variants.append(decode_spans(tokens, node_dist, attr_dist, threshold, forced_attr=flip))
    return variants


def enumerate_candidates(
    tokens: Sequence[Token],
    node_dist: LabelDistribution,
    attr_dist: LabelDistribution,
    k: int,
    build: GraphBuilder,
    prox: ProximityModel,
    extra_span_sets: Sequence[EntitySpanSet] = (),
    threshold: float = 0.5,
) -> CandidateSet:
    """
    贪心解码 + 扰动（接近阈值的词翻转、次优挂接）。候选分数 = score_graph 减去挂接代价
    （AttachmentResult.cost，距离模型下的对数因子），去重后按分数降序取前 k 个。k = 1 时只做贪心解码。
    """
    if k < 1:
        raise LinkError("beam 宽度必须 >= 1")
    greedy = decode_spans(tokens, node_dist, attr_dist, threshold)
    span_sets = [greedy]
    if k > 1:
        span_sets.extend(extra_span_sets)
        span_sets.extend(_span_variants(tokens, node_dist, attr_dist, threshold, prox.beam_margin))
    seen_spans = set()
    graphs: List[Tuple[ParseGraph, EntitySpanSet, AttachmentResult]] = []
    for spans in span_sets:
        key = spans.spans
        if key in seen_spans:
            continue
        seen_spans.add(key)
        try:
            pg, attach = build(spans, {})
        except SmartError as e:
            logger.debug("候选构造失败: %s", e)
            continue
        graphs.append((pg, spans, attach))
        if k == 1:
            break
        for i, alt in enumerate(attach.alternatives):
            if alt is not None and alt[1] < prox.beam_margin:
                try:
                    forced_pg, forced_attach = build(spans, {i: alt[0]})
                except SmartError as e:
                    logger.debug("次优挂接候选构造失败: %s", e)
                    continue
                graphs.append((forced_pg, spans, forced_attach))

    seen_graphs = set()
    candidates = []
    for pg, spans, attach in graphs:
        key = serialize_graph(pg)
        if key in seen_graphs:
            continue
        seen_graphs.add(key)
        score = score_graph(pg, node_dist, attr_dist) - attach.cost
        candidates.append(Candidate(pg, score, spans, attach.cost))
    # 同分时挂接代价小的在前，再按生成顺序（贪心解码最先）
    candidates.sort(key=lambda c: (-c.score, c.attach_cost))
    return CandidateSet(tuple(candidates[:k]), k)
