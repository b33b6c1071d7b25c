# -*- coding: utf-8 -*-
"""
抽取模块：分词、规则标注（初始解析器）、可训练序列标注器、单位抽取、目标识别。

标注分两个头：
- 节点头: O / World / Agent / Event / Rel
- 属性头: O / Rate / Amount / Total
Rel span 可以包含属性 span，其余 span 两两不相交。
"""
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

import config
from graph_core import LabelDistribution, SmartError, Span, to_rational

logger = logging.getLogger(__name__)


class ExtractError(SmartError):
    """抽取错误：模型未初始化、找不到问句、训练样本为空、词表格式错误"""


POS_TAGS = ("NOUN", "VERB", "NUM", "ADJ", "ADP", "PRON", "DET", "INTERROG", "OTHER")
ENTITY_LABELS = ("O", "World", "Agent", "Event", "Rate", "Amount", "Total", "Rel")
NODE_LABELS = ("O", "World", "Agent", "Event", "Rel")
ATTR_LABELS = ("O", "Rate", "Amount", "Total")

# 能被规则挖掘（或至少能被识别为关系）的关键词类别
RELATION_CLASSES = frozenset(("more", "less", "equal", "times", "left", "sum", "cue"))

SENTENCE_END = (".", "?", "!")
CLAUSE_BREAK = (",", ";", ":")
ELLIPSIS_MARKERS = (",", "and", "then")

RATE_WINDOW = 3  # 数字之后多少个词内出现 per 类关键词视为速率
REL_WINDOW = 3  # 关系关键词之前多少个词内的数字属于该关系
ELLIPSIS_WINDOW = 4  # 省略事件：分隔词之后多少个词内出现数字

TOKEN_RE = re.compile(r"\d+/\d+|\d+(?:\.\d+)?%?|[A-Za-z]+|'s|[^\sA-Za-z\d]")
NUMBER_RE = re.compile(r"\d+/\d+|\d+(?:\.\d+)?%?")


# ========== 词表 ==========

@dataclass(frozen=True)
class Lexicon:
    tags: Mapping[str, str]
    units: Mapping[str, str]
    phrases: Mapping[Tuple[str, ...], FrozenSet[str]]
    max_phrase: int = 1

    def word_classes(self, word: str) -> FrozenSet[str]:
        return self.phrases.get((word,), frozenset())


def parse_lexicon(lines: Iterable[str]) -> Lexicon:
    """
    每行: <表面形式> TAB <词性 | unit:<词元> | kw:<类别>>
    '#' 开头为注释；同一个词可以出现多行（如 each 既是 DET 又是 kw:per）。
    """
    tags: Dict[str, str] = {}
    units: Dict[str, str] = {}
    phrases: Dict[Tuple[str, ...], set] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise ExtractError("词表第 {} 行缺少 TAB 分隔: {!r}".format(lineno, line))
        surface, cls = line.split("\t", 1)
        words = tuple(surface.strip().lower().split())
        cls = cls.strip()
        if not words:
            raise ExtractError("词表第 {} 行表面形式为空".format(lineno))
        if cls.startswith("unit:"):
            if len(words) != 1:
                raise ExtractError("词表第 {} 行: 单位必须是单个词".format(lineno))
            units[words[0]] = cls[len("unit:"):]
        elif cls.startswith("kw:"):
            phrases.setdefault(words, set()).add(cls[len("kw:"):])
        elif cls in POS_TAGS:
            if len(words) == 1:
                tags.setdefault(words[0], cls)
            elif cls == "INTERROG":
                phrases.setdefault(words, set()).add("interrog")
            else:
                raise ExtractError("词表第 {} 行: 多词短语只能是关键词或疑问短语".format(lineno))
        else:
            raise ExtractError("词表第 {} 行: 未知类别 {}".format(lineno, cls))
    frozen = {k: frozenset(v) for k, v in phrases.items()}
    return Lexicon(
        tags=tags,
        units=units,
        phrases=frozen,
        max_phrase=max((len(k) for k in frozen), default=1),
    )


@lru_cache(maxsize=8)
def load_lexicon(path=None) -> Lexicon:
    path = path or config.LEXICON_PATH
    with open(path, "r", encoding="utf-8") as f:
        lex = parse_lexicon(f)
    logger.debug("词表已加载: %s (%d 个词性, %d 个单位, %d 个关键词)", path, len(lex.tags), len(lex.units), len(lex.phrases))
    return lex


# ========== 分词 ==========

@dataclass(frozen=True)
class Token:
    text: str
    index: int
    tag: str
    normalized_number: Optional[Fraction] = None
    lemma: str = ""
    unit: Optional[str] = None
    proper: bool = False
    sentence: int = 0
    clause: int = 0


def tokenize(text: str, lexicon: Optional[Lexicon] = None) -> List[Token]:
    """
    受控英语分词。数字/百分数/分数各成一个词并带精确值，
    "14-hour" 拆为 14 - hour，"kilometers/hour" 拆为 kilometers / hour。
    词表里没有的大写词视为专有名词（人名），其余未知词标 OTHER。
    """
    assert text and text.strip(), "tokenize 需要非空文本"
    lex = lexicon or load_lexicon()
    text = text.replace("’", "'").replace("‘", "'")
    tokens: List[Token] = []
    sentence = clause = 0
    for i, m in enumerate(TOKEN_RE.finditer(text)):
        s = m.group(0)
        low = s.lower()
        number = to_rational(s) if NUMBER_RE.fullmatch(s) else None
        unit, proper = None, False
        if number is not None:
            tag = "NUM"
        else:
            unit = lex.units.get(low)
            tag = lex.tags.get(low) or ("NOUN" if unit else None)
            if tag is None:
                if s[0].isupper():
                    tag, proper = "NOUN", True
                else:
                    tag = "OTHER"
        tokens.append(Token(s, i, tag, number, low, unit, proper, sentence, clause))
        if s in SENTENCE_END:
            sentence += 1
            clause += 1
        elif s in CLAUSE_BREAK:
            clause += 1
    return tokens


def make_span(tokens: Sequence[Token], start: int, end: int) -> Span:
    return Span(start, end, tuple(t.text for t in tokens[start:end]))


def clause_bounds(tokens: Sequence[Token], i: int) -> Tuple[int, int]:
    """第 i 个词所在子句的 [start, end)，子句以逗号/句号划分"""
    c = tokens[i].clause
    start = i
    while start > 0 and tokens[start - 1].clause == c:
        start -= 1
    end = i
    while end < len(tokens) and tokens[end].clause == c:
        end += 1
    return start, end


def sentence_bounds(tokens: Sequence[Token], i: int) -> Tuple[int, int]:
    s = tokens[i].sentence
    start = i
    while start > 0 and tokens[start - 1].sentence == s:
        start -= 1
    end = i
    while end < len(tokens) and tokens[end].sentence == s:
        end += 1
    return start, end


# ========== 关键词短语 ==========

@dataclass(frozen=True)
class PhraseMatch:
    start: int
    end: int
    classes: FrozenSet[str]


def find_phrases(tokens: Sequence[Token], lexicon: Optional[Lexicon] = None) -> List[PhraseMatch]:
    """从左到右最长匹配，匹配之间不重叠"""
    lex = lexicon or load_lexicon()
    words = [t.lemma for t in tokens]
    out: List[PhraseMatch] = []
    i = 0
    while i < len(words):
        for n in range(min(lex.max_phrase, len(words) - i), 0, -1):
            classes = lex.phrases.get(tuple(words[i:i + n]))
            if classes:
                out.append(PhraseMatch(i, i + n, classes))
                i += n
                break
        else:
            i += 1
    return out


def phrase_classes_per_token(tokens: Sequence[Token], phrases: Sequence[PhraseMatch]) -> List[FrozenSet[str]]:
    per_token = [frozenset()] * len(tokens)
    for m in phrases:
        for i in range(m.start, m.end):
            per_token[i] = m.classes
    return per_token


def is_per_word(token: Token, lexicon: Lexicon) -> bool:
    return "per" in lexicon.word_classes(token.lemma)


def is_agent_word(token: Token, lexicon: Lexicon) -> bool:
    return "agent" in lexicon.word_classes(token.lemma)


def den_units(tokens: Sequence[Token], lexicon: Optional[Lexicon] = None) -> FrozenSet[str]:
    """出现在 per/each/every 之后的单位，即本题的分母单位"""
    lex = lexicon or load_lexicon()
    found = set()
    for i, t in enumerate(tokens[:-1]):
        if is_per_word(t, lex) and tokens[i + 1].unit:
            found.add(tokens[i + 1].unit)
    return frozenset(found)


def unit_index(tokens: Sequence[Token], end: int) -> Optional[int]:
    """数字（或疑问短语）之后的单位词位置，跳过连字符"""
    j = end
    if j < len(tokens) and tokens[j].text == "-":
        j += 1
    if j < len(tokens) and tokens[j].unit:
        return j
    return None


def _bundle_starts(phrases: Sequence[PhraseMatch]) -> set:
    return {m.start for m in phrases if "bundle" in m.classes}


def _each_clause_unit(tokens: Sequence[Token], i: int) -> Optional[str]:
    # "Each kilogram of pears cost 3.65 dollars"：子句以 each/every + 单位开头
    cs, ce = clause_bounds(tokens, i)
    if tokens[cs].lemma in ("each", "every") and cs + 1 < ce and tokens[cs + 1].unit:
        return tokens[cs + 1].unit
    return None


def _is_rate(tokens: Sequence[Token], start: int, end: int, lex: Lexicon) -> bool:
    _, ce = clause_bounds(tokens, start)
    for j in range(end, min(end + RATE_WINDOW, ce)):
        if is_per_word(tokens[j], lex):
            return True
    return _each_clause_unit(tokens, start) is not None and unit_index(tokens, end) is not None


def attribute_kind(
    tokens: Sequence[Token],
    start: int,
    end: int,
    lexicon: Lexicon,
    dens: FrozenSet[str],
    bundle_starts: set,
) -> str:
    """数字（或疑问短语）[start, end) 的属性种类"""
    if _is_rate(tokens, start, end, lexicon):
        return "Rate"
    u = unit_index(tokens, end)
    if u is not None and (tokens[u].unit in dens or u in bundle_starts):
        return "Amount"
    return "Total"


# ========== 实体 span 集合 ==========

@dataclass(frozen=True)
class EntitySpanSet:
    spans: Tuple[Tuple[Span, str], ...] = ()

    def of(self, *labels: str) -> List[Span]:
        return sorted((s for s, l in self.spans if l in labels), key=lambda s: (s.start, s.end))

    def label_of(self, span: Span) -> Optional[str]:
        for s, l in self.spans:
            if s.start == span.start and s.end == span.end:
                return l
        return None

    def nodes(self) -> List[Tuple[Span, str]]:
        return [(s, l) for s, l in self.spans if l in NODE_LABELS]

    def attributes(self) -> List[Tuple[Span, str]]:
        return [(s, l) for s, l in self.spans if l in ATTR_LABELS]

    def with_span(self, span: Span, label: str) -> "EntitySpanSet":
        return EntitySpanSet(self.spans + ((span, label),))

    def nesting_violations(self) -> List[str]:
        """嵌套约束：非 Rel span 两两不交；Rel 之间不交；属性与 Rel 相交时必须被包含"""
        problems = []
        items = sorted(self.spans, key=lambda x: (x[0].start, x[0].end, x[1]))
        for i, (a, la) in enumerate(items):
            for b, lb in items[i + 1:]:
                if not a.overlaps(b):
                    continue
                if la == "Rel" and lb == "Rel":
                    problems.append("Rel {}-{} 与 Rel {}-{} 相交".format(a.start, a.end, b.start, b.end))
                elif la == "Rel" or lb == "Rel":
                    rel, other, lo = (a, b, lb) if la == "Rel" else (b, a, la)
                    if lo not in ATTR_LABELS or not rel.contains(other):
                        problems.append("{} {}-{} 与 Rel 部分重叠".format(lo, other.start, other.end))
                else:
                    problems.append("{} {}-{} 与 {} {}-{} 重叠".format(la, a.start, a.end, lb, b.start, b.end))
        return problems


def _covered(span_list: Iterable[Span], i: int) -> bool:
    return any(s.start <= i < s.end for s in span_list)


def rule_rel_spans(tokens: Sequence[Token], phrases: Sequence[PhraseMatch]) -> List[Span]:
    """关系关键词窗口 -> Rel span（含前面的数字或疑问短语）"""
    n = len(tokens)
    interrog = [m for m in phrases if "interrog" in m.classes]
    candidates: List[Tuple[int, int]] = []
    for m in phrases:
        if m.classes & RELATION_CLASSES:
            start = m.start
            cs, _ = clause_bounds(tokens, m.start)
            for k in range(m.start - 1, max(cs, m.start - REL_WINDOW) - 1, -1):
                if tokens[k].tag == "NUM":
                    start = k
                    break
                hit = [q for q in interrog if q.start <= k < q.end]
                if hit:
                    start = hit[0].start
                    break
            candidates.append((start, m.end))
        elif "bundle" in m.classes:
            # "sets of desks , chairs and lamps"
            k = m.end
            while k < n and (tokens[k].tag == "NOUN" or tokens[k].lemma in (",", "and")) and not tokens[k].proper:
                k += 1
            while k > m.end and tokens[k - 1].lemma in (",", "and"):
                k -= 1
            candidates.append((m.start, max(k, m.end)))
    # 范围的分数: "30% of the full length"
    scope_starts = {m.start for m in phrases if "scope" in m.classes}
    for i, t in enumerate(tokens[:-2]):
        if t.tag == "NUM" and ("%" in t.text or "/" in t.text):
            if tokens[i + 1].lemma == "of" and i + 2 in scope_starts:
                candidates.append((i, i + 2))
    spans: List[Span] = []
    for start, end in sorted(candidates):
        span = make_span(tokens, start, end)
        if not any(span.overlaps(s) for s in spans):
            spans.append(span)
    return spans


def _event_regions(tokens: Sequence[Token], rels: Sequence[Span]) -> List[Tuple[int, int]]:
    """动词起始的区域，按省略结构（", then a 5-hour car ride"）继续切分"""
    n = len(tokens)
    verbs = [j for j, t in enumerate(tokens) if t.tag == "VERB"]
    regions = []
    for j in verbs:
        _, se = sentence_bounds(tokens, j)
        nxt = [v for v in verbs if j < v < se]
        end = nxt[0] if nxt else se
        cur, has_num = j, False
        for k in range(j, end):
            t = tokens[k]
            if k > cur and t.lemma in ELLIPSIS_MARKERS and has_num and not _covered(rels, k):
                ahead = False
                for m in range(k + 1, min(k + 1 + ELLIPSIS_WINDOW, end, n)):
                    if tokens[m].tag == "VERB":
                        break
                    if tokens[m].tag == "NUM":
                        ahead = True
                        break
                if ahead:
                    regions.append((cur, k))
                    cur, has_num = k, False
            if t.tag == "NUM":
                has_num = True
        regions.append((cur, end))
    return [(s, e) for s, e in regions if any(tokens[k].tag == "NUM" for k in range(s, e))]


def rule_tag(tokens: Sequence[Token], lexicon: Optional[Lexicon] = None) -> EntitySpanSet:
    """
    规则标注（初始解析器），确定且无副作用。
    顺序: Rel -> World -> 属性 -> Agent -> Event，后标注的不覆盖先标注的。
    """
    lex = lexicon or load_lexicon()
    tokens = list(tokens)
    phrases = find_phrases(tokens, lex)
    dens = den_units(tokens, lex)
    bundles = _bundle_starts(phrases)

    rels = rule_rel_spans(tokens, phrases)
    out: List[Tuple[Span, str]] = [(s, "Rel") for s in rels]
    taken: List[Span] = list(rels)

    for m in phrases:
        if "scope" in m.classes and not _covered(rels, m.start):
            span = make_span(tokens, m.start, m.end)
            out.append((span, "World"))
            taken.append(span)

    for i, t in enumerate(tokens):
        if t.tag == "NUM" and not _covered(rels, i):
            span = make_span(tokens, i, i + 1)
            out.append((span, attribute_kind(tokens, i, i + 1, lex, dens, bundles)))
            taken.append(span)
    for m in phrases:
        if "interrog" in m.classes and not any(s.overlaps(make_span(tokens, m.start, m.end)) for s in rels):
            span = make_span(tokens, m.start, m.end)
            out.append((span, attribute_kind(tokens, m.start, m.end, lex, dens, bundles)))
            taken.append(span)

    agents = set()
    for i, t in enumerate(tokens):
        if t.proper and not _covered(taken, i):
            agents.add(i)
    for j, t in enumerate(tokens):
        if t.tag != "VERB":
            continue
        cs, _ = clause_bounds(tokens, j)
        for k in range(j - 1, cs - 1, -1):
            tk = tokens[k]
            if tk.tag == "VERB":
                break
            if tk.tag in ("NOUN", "PRON") and not tk.unit:
                after_possessive = k > 0 and tokens[k - 1].lemma == "'s"
                if is_agent_word(tk, lex) and not after_possessive and not _covered(taken, k):
                    agents.add(k)
                break
    for i in sorted(agents):
        span = make_span(tokens, i, i + 1)
        out.append((span, "Agent"))
        taken.append(span)

    for s, e in _event_regions(tokens, rels):
        if _covered(taken, s):
            continue
        k = s
        while k < e:
            t = tokens[k]
            if t.tag == "NUM" or _covered(taken, k) or t.text in SENTENCE_END:
                break
            if t.text in CLAUSE_BREAK and k > s:
                break
            k += 1
        if k > s:
            out.append((make_span(tokens, s, k), "Event"))

    return EntitySpanSet(tuple(sorted(out, key=lambda x: (x[0].start, x[0].end))))


# ========== 单位与目标 ==========

def extract_units(
    tokens: Sequence[Token], number_span: Span, lexicon: Optional[Lexicon] = None
) -> Tuple[Optional[str], Optional[str]]:
    """
    返回 (分子单位, 分母单位)，单位已按词表还原为词元。
    速率: "120 kilometers/hour" -> (kilometer, hour)；
         "Each kilogram of pears cost 3.65 dollars" -> (dollar, kilogram)
    数量: 分母单位；总量: 分子单位。
    """
    lex = lexicon or load_lexicon()
    tokens = list(tokens)
    u = unit_index(tokens, number_span.end)
    if u is not None:
        k = u + 1
        if k + 1 < len(tokens) and is_per_word(tokens[k], lex) and tokens[k + 1].unit:
            return tokens[u].unit, tokens[k + 1].unit
        each_unit = _each_clause_unit(tokens, number_span.start)
        if each_unit is not None and each_unit != tokens[u].unit:
            return tokens[u].unit, each_unit
    else:
        # "how many kilometers per hour" 之外没有单位
        return None, None
    unit = tokens[u].unit
    if unit in den_units(tokens, lex) or u in _bundle_starts(find_phrases(tokens, lex)):
        return None, unit
    return unit, None


@dataclass(frozen=True)
class GoalMark:
    kind: str  # attribute / relation
    span: Span
    attr_kind: Optional[str] = None


def detect_goal(tokens: Sequence[Token], spans: EntitySpanSet, lexicon: Optional[Lexicon] = None) -> GoalMark:
    """最左边的疑问短语即目标；在 Rel 内则目标是方程中的未知量"""
    lex = lexicon or load_lexicon()
    questions = [m for m in find_phrases(tokens, lex) if "interrog" in m.classes]
    if not questions:
        raise ExtractError("no goal detected: 没有找到疑问短语")
    q = questions[0]
    qspan = make_span(tokens, q.start, q.end)
    for s in spans.of("Rel"):
        if s.contains(qspan):
            return GoalMark("relation", qspan)
    for s, label in spans.attributes():
        if s.overlaps(qspan):
            return GoalMark("attribute", s, label)
    logger.debug("疑问短语 %s 没有对应的属性 span，按总量处理", " ".join(qspan.text))
    return GoalMark("attribute", qspan, "Total")


# ========== 可训练序列标注器 ==========

def _shape(t: Token) -> str:
    if t.tag == "NUM":
        if "%" in t.text:
            return "pct"
        if "/" in t.text:
            return "frac"
        return "dec" if "." in t.text else "int"
    if t.proper:
        return "Cap"
    if not t.text[0].isalnum():
        return "punct"
    return "x"


def sentence_features(tokens: Sequence[Token], lexicon: Optional[Lexicon] = None) -> List[List[str]]:
    """每个词的特征串：词、词性、±2 窗口、关键词类别和单位类型，不含规则标注的输出"""
    lex = lexicon or load_lexicon()
    tokens = list(tokens)
    phrases = find_phrases(tokens, lex)
    per_token = phrase_classes_per_token(tokens, phrases)
    dens = den_units(tokens, lex)

    def unit_kind(t: Token) -> str:
        return "den" if t.unit in dens else "num"

    feats: List[List[str]] = []
    n = len(tokens)
    for i, t in enumerate(tokens):
        f = ["bias", "w=" + t.lemma, "t=" + t.tag, "shape=" + _shape(t)]
        f.extend("kw=" + c for c in sorted(per_token[i]))
        if t.unit:
            f.append("u=" + unit_kind(t))
        for off in (-2, -1, 1, 2):
            j = i + off
            if 0 <= j < n:
                tj = tokens[j]
                f.append("w{:+d}={}".format(off, tj.lemma))
                f.append("t{:+d}={}".format(off, tj.tag))
                f.extend("kw{:+d}={}".format(off, c) for c in sorted(per_token[j]))
                if tj.unit:
                    f.append("u{:+d}={}".format(off, unit_kind(tj)))
            else:
                f.append("w{:+d}=<pad>".format(off))
        prev = tokens[i - 1].lemma if i > 0 else "<pad>"
        f.append("w-1|w={}|{}".format(prev, t.lemma))
        feats.append(list(dict.fromkeys(f)))
    return feats


def gold_labels(n_tokens: int, spans: EntitySpanSet) -> Tuple[List[int], List[int]]:
    node = [0] * n_tokens
    attr = [0] * n_tokens
    for span, label in spans.spans:
        if span.end > n_tokens:
            raise ExtractError("span [{}, {}) 超出 {} 个词".format(span.start, span.end, n_tokens))
        if label in ATTR_LABELS:
            for i in range(span.start, span.end):
                attr[i] = ATTR_LABELS.index(label)
        elif label in NODE_LABELS and label != "O":
            for i in range(span.start, span.end):
                node[i] = NODE_LABELS.index(label)
    return node, attr


def _softmax(scores: np.ndarray, scale: float) -> np.ndarray:
    z = scale * scores
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class LabelerModel:
    """
    两个线性打分头（节点头、属性头），权重矩阵形状 (特征数, 标签数)。
    模型是不可变值：train 返回新模型，旧快照可以被并发读取。
    """
    feature_index: Mapping[str, int] = field(default_factory=dict)
    node_weights: np.ndarray = field(default_factory=lambda: np.zeros((0, len(NODE_LABELS))))
    attr_weights: np.ndarray = field(default_factory=lambda: np.zeros((0, len(ATTR_LABELS))))
    version: int = 0
    scale: float = 2.0

    @property
    def trained(self) -> bool:
        return self.version > 0 and len(self.feature_index) > 0

    def columns(self, feats: Sequence[str]) -> np.ndarray:
        return np.array([self.feature_index[f] for f in feats if f in self.feature_index], dtype=np.int64)

    def distributions(self, feature_rows: Sequence[Sequence[str]]) -> Tuple[LabelDistribution, LabelDistribution]:
        n = len(feature_rows)
        node_scores = np.zeros((n, len(NODE_LABELS)))
        attr_scores = np.zeros((n, len(ATTR_LABELS)))
        for i, feats in enumerate(feature_rows):
            cols = self.columns(feats)
            if len(cols):
                node_scores[i] = self.node_weights[cols].sum(axis=0)
                attr_scores[i] = self.attr_weights[cols].sum(axis=0)
        return (
            LabelDistribution(NODE_LABELS, _softmax(node_scores, self.scale)),
            LabelDistribution(ATTR_LABELS, _softmax(attr_scores, self.scale)),
        )


def _runs(labels: Sequence[str]) -> List[Tuple[int, int, str]]:
    runs = []
    i = 0
    while i < len(labels):
        if labels[i] == "O":
            i += 1
            continue
        j = i
        while j < len(labels) and labels[j] == labels[i]:
            j += 1
        runs.append((i, j, labels[i]))
        i = j
    return runs


def head_labels(dist: LabelDistribution, threshold: float = 0.5, forced: Optional[Mapping[int, str]] = None) -> List[str]:
    """逐词取最大概率标签，概率不超过阈值的记为 O；forced 用于候选枚举时翻转个别词"""
    best = np.argmax(dist.probs, axis=1)
    labels = []
    for i in range(len(dist)):
        label = dist.labels[int(best[i])]
        if dist.probs[i, best[i]] <= threshold:
            label = "O"
        labels.append(label)
    for i, label in (forced or {}).items():
        labels[i] = label
    return labels


def decode_spans(
    tokens: Sequence[Token],
    node_dist: LabelDistribution,
    attr_dist: LabelDistribution,
    threshold: float = 0.5,
    forced_node: Optional[Mapping[int, str]] = None,
    forced_attr: Optional[Mapping[int, str]] = None,
) -> EntitySpanSet:
    """先解码节点头，再解码属性头；与非 Rel 节点重叠、或与 Rel 部分重叠的属性丢弃"""
    node_spans = [
        (make_span(tokens, s, e), l) for s, e, l in _runs(head_labels(node_dist, threshold, forced_node))
    ]
    rels = [s for s, l in node_spans if l == "Rel"]
    others = [s for s, l in node_spans if l != "Rel"]
    attr_spans = []
    for s, e, l in _runs(head_labels(attr_dist, threshold, forced_attr)):
        span = make_span(tokens, s, e)
        if any(span.overlaps(o) for o in others):
            continue
        if any(span.overlaps(r) and not r.contains(span) for r in rels):
            continue
        attr_spans.append((span, l))
    return EntitySpanSet(tuple(sorted(node_spans + attr_spans, key=lambda x: (x[0].start, x[0].end))))


@dataclass(frozen=True)
class Prediction:
    node_dist: LabelDistribution
    attr_dist: LabelDistribution
    spans: EntitySpanSet


def predict(model: LabelerModel, tokens: Sequence[Token], lexicon: Optional[Lexicon] = None) -> Prediction:
    if not model.trained:
        raise ExtractError("model uninitialized: 标注模型尚未训练")
    node_dist, attr_dist = model.distributions(sentence_features(tokens, lexicon))
    return Prediction(node_dist, attr_dist, decode_spans(tokens, node_dist, attr_dist))


def _token_accuracy(model: LabelerModel, rows, gold_node, gold_attr) -> float:
    if not model.trained or not rows:
        return 0.0
    node_dist, attr_dist = model.distributions(rows)
    ok = np.sum(np.argmax(node_dist.probs, axis=1) == np.array(gold_node))
    ok += np.sum(np.argmax(attr_dist.probs, axis=1) == np.array(gold_attr))
    return float(ok) / (2 * len(rows))


def _perceptron(
    weights: np.ndarray, columns: List[np.ndarray], gold: List[int], rng: np.random.Generator, epochs: int, margin: float
) -> np.ndarray:
    # 间隔感知机：gold 分数没有超过最强错误标签 margin 时更新
    w = weights.copy()
    for epoch in range(epochs):
        mistakes = 0
        for idx in rng.permutation(len(columns)):
            cols = columns[idx]
            g = gold[idx]
            scores = w[cols].sum(axis=0)
            rival = scores.copy()
            rival[g] = -np.inf
            b = int(np.argmax(rival))
            if scores[g] - scores[b] < margin:
                w[cols, g] += 1.0
                w[cols, b] -= 1.0
                mistakes += 1
        if mistakes == 0:
            logger.debug("感知机第 %d 轮收敛", epoch + 1)
            break
    return w


def train(
    model: LabelerModel,
    examples: Sequence[Tuple[Sequence[Token], EntitySpanSet]],
    seed: int = 0,
    epochs: int = 20,
    margin: float = 1.0,
    lexicon: Optional[Lexicon] = None,
) -> LabelerModel:
    """
    在 (tokens, 实体 span) 样本上热启动训练，返回版本号 +1 的新模型。
    训练后若训练集词级准确率低于旧模型，则保留旧权重。
    """
    if not examples:
        raise ExtractError("训练样本为空")
    lex = lexicon or load_lexicon()
    rows: List[List[str]] = []
    gold_node: List[int] = []
    gold_attr: List[int] = []
    for tokens, spans in examples:
        rows.extend(sentence_features(tokens, lex))
        node, attr = gold_labels(len(tokens), spans)
        gold_node.extend(node)
        gold_attr.extend(attr)

    index = dict(model.feature_index)
    for feats in rows:
        for f in feats:
            if f not in index:
                index[f] = len(index)
    grow = len(index) - model.node_weights.shape[0]
    node_w = np.vstack([model.node_weights, np.zeros((grow, len(NODE_LABELS)))])
    attr_w = np.vstack([model.attr_weights, np.zeros((grow, len(ATTR_LABELS)))])
    columns = [np.array([index[f] for f in feats], dtype=np.int64) for feats in rows]

    rng = np.random.default_rng(seed)
    new_node = _perceptron(node_w, columns, gold_node, rng, epochs, margin)
    new_attr = _perceptron(attr_w, columns, gold_attr, rng, epochs, margin)

    candidate = LabelerModel(index, new_node, new_attr, model.version + 1, model.scale)
    if model.trained:
        old = LabelerModel(index, node_w, attr_w, model.version + 1, model.scale)
        before = _token_accuracy(old, rows, gold_node, gold_attr)
        after = _token_accuracy(candidate, rows, gold_node, gold_attr)
        if after < before:
            logger.warning("标注器训练后准确率下降 (%.4f -> %.4f)，保留旧权重", before, after)
            return old
    return candidate
