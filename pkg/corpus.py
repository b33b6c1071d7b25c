# -*- coding: utf-8 -*-
"""
题库：JSONL 读写、模板生成器、IID/OOD 划分、答案准确率评测、统计。

JSONL 每行: {"id", "text", "answer", "type", "meta"?}，answer 为十进制字符串，
读入时转为精确有理数。
"""
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import config
from extract import TOKEN_RE
from graph_core import SmartError, format_rational, is_terminating, to_rational
from solver import answers_match

logger = logging.getLogger(__name__)


class CorpusError(SmartError):
    """题库错误：格式错误的行（带行号）、空题库、没有对应模板"""


PROBLEM_TYPES = ("motion", "task", "relation", "price")
OUTCOMES = ("correct", "wrong-answer", "parse-failure", "solver-failure")

# 事件数 ~ 1 + Poisson(λ)，再截到模板允许的范围；默认题库平均事件数约 2.27
EVENT_LAMBDA = 1.6
CUE_RATE = 0.3


# ========== 题目记录 ==========

@dataclass(frozen=True)
class ProblemRecord:
    id: str
    text: str
    answer: Fraction
    ptype: str
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.ptype not in PROBLEM_TYPES:
            raise CorpusError("未知题型 {}（{}）".format(self.ptype, self.id))

    def to_dict(self) -> Dict[str, Any]:
        d = {"id": self.id, "text": self.text, "answer": format_rational(self.answer), "type": self.ptype}
        if self.meta:
            d["meta"] = dict(self.meta)
        return d


def token_count(text: str) -> int:
    """题长 = 词数（与分词器同一套切分规则）"""
    return len(TOKEN_RE.findall(text))


def record_from_dict(data: Any, where: str = "") -> ProblemRecord:
    if not isinstance(data, dict):
        raise CorpusError("{}: 记录必须是 JSON 对象".format(where))
    for key in ("id", "text", "answer", "type"):
        if key not in data:
            raise CorpusError("{}: 缺少字段 {}".format(where, key))
    try:
        answer = to_rational(str(data["answer"]))
    except (ValueError, ZeroDivisionError):
        raise CorpusError("{}: 答案不是数字: {!r}".format(where, data["answer"]))
    meta = data.get("meta") or {}
    if not isinstance(meta, dict):
        raise CorpusError("{}: meta 必须是对象".format(where))
    try:
        return ProblemRecord(str(data["id"]), str(data["text"]), answer, str(data["type"]), meta)
    except CorpusError as e:
        raise CorpusError("{}: {}".format(where, e))


def loads(lines: Sequence[str], name: str = "<corpus>") -> List[ProblemRecord]:
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        where = "{} 第 {} 行".format(name, lineno)
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError("{}: JSON 格式错误: {}".format(where, e))
        records.append(record_from_dict(data, where))
    return records


def load(path) -> List[ProblemRecord]:
    if not os.path.exists(path):
        raise CorpusError("题库文件不存在: {}".format(path))
    with open(path, "r", encoding="utf-8") as f:
        return loads(f.readlines(), str(path))


def dumps(records: Sequence[ProblemRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for r in records)


def save(path, records: Sequence[ProblemRecord]) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(records))


def records_to_frame(records: Sequence[ProblemRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        rows.append({
            "id": r.id,
            "type": r.ptype,
            "text": r.text,
            "answer": format_rational(r.answer),
            "tokens": token_count(r.text),
            "agents": r.meta.get("agents", np.nan),
            "events": r.meta.get("events", np.nan),
            "relations": r.meta.get("relations", np.nan),
            "family": r.meta.get("family", ""),
        })
    return pd.DataFrame(rows, columns=["id", "type", "text", "answer", "tokens", "agents", "events", "relations", "family"])


# ========== 模板 ==========

@dataclass(frozen=True)
class Template:
    family: str
    ptype: str
    events: Tuple[int, int]
    parts: Mapping[str, str]

    def fill(self, key: str, **slots) -> str:
        if key not in self.parts:
            raise CorpusError("模板 {} 缺少 {}".format(self.family, key))
        try:
            return self.parts[key].format(**slots)
        except KeyError as e:
            raise CorpusError("模板 {} 的 {} 缺少槽位 {}".format(self.family, key, e))

    def join(self, items: Sequence[str], prefix: str = "") -> str:
        """按 sep/last 拼接短语列表；prefix 为 fact/item 时用 fact_sep 等"""
        sep_key = "{}_sep".format(prefix) if prefix else "sep"
        last_key = "{}_last".format(prefix) if prefix else "last"
        if len(items) == 1:
            return items[0]
        sep = self.parts.get(sep_key, ", ")
        last = self.parts.get(last_key, " and ")
        return sep.join(items[:-1]) + last + items[-1]


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] == '"':
        return value[1:-1]
    return value


def parse_templates(lines: Sequence[str]) -> Dict[str, Template]:
    sections: Dict[str, Dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = re.fullmatch(r"\s*\[([\w.]+)\]\s*", line)
        if m:
            current = m.group(1)
            sections[current] = {}
            continue
        if current is None or "=" not in line:
            raise CorpusError("模板第 {} 行格式错误: {!r}".format(lineno, line))
        key, value = line.split("=", 1)
        sections[current][key.strip()] = _unquote(value)
    templates = {}
    for family, parts in sections.items():
        if "text" not in parts or "type" not in parts:
            raise CorpusError("模板 {} 缺少 text 或 type".format(family))
        lo, _, hi = parts.get("events", "1-1").partition("-")
        templates[family] = Template(family, parts["type"], (int(lo), int(hi or lo)), parts)
    return templates


def load_templates(path=None) -> Dict[str, Template]:
    path = path or config.TEMPLATES_PATH
    if not os.path.exists(path):
        raise CorpusError("模板文件不存在: {}".format(path))
    with open(path, "r", encoding="utf-8") as f:
        return parse_templates(f.readlines())


# ========== 生成器 ==========
# 每个族一个采样函数: (rng, 事件数, 模板, 参数) -> (题面, 答案, meta)
# 答案由生成参数直接算出，不经过求解器。

NAMES = ("Mingming", "Xiaogang", "Xiaoqiang", "Xiaohong", "Lily", "Tom", "Amy", "Jack", "Lucy", "Mike")
VEHICLES = ("train", "car", "bus", "ship", "plane", "truck")
ORDINALS = ("first", "second", "third", "fourth", "fifth")
COUNT_WORDS = ("one", "two", "three", "four", "five")
FRUITS = ("pears", "apples", "oranges", "bananas", "grapes")
ITEMS = ("desk", "chair", "lamp", "bookcase", "table")
BUYERS = (("mom", "she"), ("the family", "they"), ("the school", "it"))
FACTORS = (Fraction(6, 5), Fraction(7, 5), Fraction(3, 2), Fraction(2), Fraction(5, 2), Fraction(3))


def _pick(rng: np.random.Generator, pool: Sequence[str], n: int) -> List[str]:
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[int(i)] for i in idx]


def _int(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _cents(rng: np.random.Generator, lo: int, hi: int) -> Fraction:
    return Fraction(_int(rng, lo, hi), 100)


fmt = format_rational


def _motion_journey(rng, n, tpl, params):
    name = _pick(rng, NAMES, 1)[0]
    vehicles = _pick(rng, VEHICLES, n)
    hours = [_int(rng, 1, 14) for _ in range(n)]
    speeds = [5 * _int(rng, 4, 60) for _ in range(n)]
    events = [tpl.fill("event", hours=h, vehicle=v) for h, v in zip(hours, vehicles)]
    facts = [tpl.fill("fact", vehicle=v, speed=s) for v, s in zip(vehicles, speeds)]
    text = tpl.fill("text", name=name, events=tpl.join(events), facts=tpl.join(facts, "fact"))
    answer = Fraction(sum(h * s for h, s in zip(hours, speeds)))
    return text, answer, {"agents": 1, "events": n, "relations": n + 1}


def _motion_left(rng, n, tpl, params):
    vehicles = _pick(rng, VEHICLES, n)
    speeds = [5 * _int(rng, 4, 30) for _ in range(n)]
    hours = [_int(rng, 2, 6) for _ in range(n)]
    left = 10 * _int(rng, 1, 20)
    total = sum(s * h for s, h in zip(speeds, hours)) + left
    events = [tpl.fill("event", vehicle=v, speed=s, hours=h) for v, s, h in zip(vehicles, speeds, hours)]
    text = tpl.fill("text", total=total, events=tpl.join(events))
    return text, Fraction(left), {"agents": n, "events": n, "relations": n + 1}


def _motion_time(rng, n, tpl, params):
    vehicle = _pick(rng, VEHICLES, 1)[0]
    speed = 5 * _int(rng, 4, 30)
    hours = _int(rng, 2, 10)
    text = tpl.fill("text", vehicle=vehicle, speed=speed, distance=speed * hours)
    return text, Fraction(hours), {"agents": 1, "events": 1, "relations": 1}


def _task_weeks(rng, n, tpl, params):
    hi = min(6, 19 // n)
    percents = [5 * _int(rng, 1, hi) for _ in range(n)]
    length = 20 * _int(rng, 5, 50)
    known = Fraction(length * sum(percents), 100)
    events = [tpl.fill("event", percent=p, ordinal=ORDINALS[i]) for i, p in enumerate(percents)]
    weeks = "{} {}".format(COUNT_WORDS[n - 1], "week" if n == 1 else "weeks")
    text = tpl.fill("text", events=tpl.join(events), total=fmt(known), weeks=weeks)
    return text, Fraction(length), {"agents": 1, "events": n, "relations": n + 1}


def _task_left(rng, n, tpl, params):
    names = _pick(rng, NAMES, n)
    rates = [_int(rng, 5, 20) for _ in range(n)]
    days = [_int(rng, 2, 6) for _ in range(n)]
    left = 5 * _int(rng, 1, 10)
    events = [tpl.fill("event", name=a, rate=r, days=d) for a, r, d in zip(names, rates, days)]
    text = tpl.fill("text", events=tpl.join(events), left=left)
    answer = Fraction(sum(r * d for r, d in zip(rates, days)) + left)
    return text, answer, {"agents": n, "events": n, "relations": n + 1}


def _relation_chain(rng, n, tpl, params):
    cue_rate = float(params.get("cue_rate", CUE_RATE))
    names = _pick(rng, NAMES, n + 1)
    value = Fraction(_int(rng, 200, 600), 10)
    base = value
    phrases = []
    cues = 0
    for i in range(n):
        kind = ("times", "more", "less")[_int(rng, 0, 2)]
        factor = FACTORS[_int(rng, 0, len(FACTORS) - 1)]
        delta = _int(rng, 1, 10)
        if kind == "less" and value <= delta:
            kind = "more"
        cue = rng.random() < cue_rate
        key = "cue_" + kind if cue else kind
        cues += int(cue)
        relation = tpl.fill(key, factor=fmt(factor), delta=delta)
        phrases.append(tpl.fill("event", name=names[i + 1], relation=relation, prev=names[i]))
        if kind == "times":
            value = value * factor
        elif kind == "more":
            value = value + delta
        else:
            value = value - delta
    text = tpl.fill("text", first=names[0], base=fmt(base), events=tpl.join(phrases), target=names[-1])
    return text, value, {"agents": n + 1, "events": n, "relations": n, "cues": cues}


def _price_bundle(rng, n, tpl, params):
    items = _pick(rng, ITEMS, n)
    count = _int(rng, 10, 60)
    prices = [_int(rng, 10, 200) for _ in range(n)]
    events = [tpl.fill("event", price=p, item=it) for p, it in zip(prices, items)]
    plural = tpl.join([it + "s" for it in items], "item")
    text = tpl.fill("text", count=count, items=plural, events=tpl.join(events))
    return text, Fraction(count * sum(prices)), {"agents": 1, "events": n, "relations": 2 * n}


def _price_unit(rng, n, tpl, params):
    fruit = _pick(rng, FRUITS, 1)[0]
    buyer, _ = BUYERS[_int(rng, 0, len(BUYERS) - 1)]
    price = _cents(rng, 100, 999)
    amount = _int(rng, 1, 20)
    text = tpl.fill("text", fruit=fruit, price=fmt(price), buyer=buyer, amount=amount)
    return text, price * amount, {"agents": 1, "events": 1, "relations": 1}


def _price_multi(rng, n, tpl, params):
    fruits = _pick(rng, FRUITS, n)
    buyer, pronoun = BUYERS[_int(rng, 0, len(BUYERS) - 1)]
    amounts = [_int(rng, 1, 20) for _ in range(n)]
    prices = [_cents(rng, 100, 999) for _ in range(n)]
    events = [tpl.fill("event", amount=a, fruit=f) for a, f in zip(amounts, fruits)]
    facts = [tpl.fill("fact", fruit=f, price=fmt(p)) for f, p in zip(fruits, prices)]
    text = tpl.fill("text", buyer=buyer, events=tpl.join(events), facts=tpl.join(facts, "fact"), pronoun=pronoun)
    answer = sum((a * p for a, p in zip(amounts, prices)), Fraction(0))
    return text, answer, {"agents": 1, "events": n, "relations": n + 1}


SAMPLERS: Dict[str, Callable] = {
    "motion.journey": _motion_journey,
    "motion.left": _motion_left,
    "motion.time": _motion_time,
    "task.weeks": _task_weeks,
    "task.left": _task_left,
    "relation.chain": _relation_chain,
    "price.bundle": _price_bundle,
    "price.unit": _price_unit,
    "price.multi": _price_multi,
}


def capitalize_sentences(text: str) -> str:
    return re.sub(r"(^|[.?!]\s+)([a-z])", lambda m: m.group(1) + m.group(2).upper(), text)


def _families_for(kind: Optional[str], templates: Mapping[str, Template]) -> List[str]:
    if kind in (None, "", "all"):
        return sorted(f for f in templates if f in SAMPLERS)
    if kind in templates:
        return [kind]
    fams = sorted(f for f, t in templates.items() if t.ptype == kind and f in SAMPLERS)
    if not fams:
        raise CorpusError("没有题型/模板族 {} 的模板".format(kind))
    return fams


def generate(
    kind: Optional[str] = None,
    count: int = 100,
    seed: int = 0,
    params: Optional[Mapping[str, Any]] = None,
    templates: Optional[Mapping[str, Template]] = None,
) -> List[ProblemRecord]:
    """
    按模板生成 count 道题。kind 可以是题型（motion 等）、模板族（motion.journey 等）或 None（四种题型轮流）。
    params: n_events 固定事件数；event_lambda 事件数分布参数；cue_rate 关系链中提示词改写的比例。
    同一 (kind, params, count, seed) 生成逐字节相同的题库。
    """
    if count < 1:
        raise CorpusError("count 必须 >= 1")
    params = dict(params or {})
    templates = templates if templates is not None else load_templates()
    families = _families_for(kind, templates)
    for fam in families:
        if fam not in SAMPLERS:
            raise CorpusError("模板族 {} 没有采样函数".format(fam))
    by_type: Dict[str, List[str]] = {}
    for fam in families:
        by_type.setdefault(templates[fam].ptype, []).append(fam)
    types = [t for t in PROBLEM_TYPES if t in by_type]
    lam = float(params.get("event_lambda", EVENT_LAMBDA))
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        fams = by_type[types[i % len(types)]]
        fam = fams[_int(rng, 0, len(fams) - 1)]
        tpl = templates[fam]
        lo, hi = tpl.events
        if "n_events" in params:
            n = int(params["n_events"])
            if not lo <= n <= hi:
                raise CorpusError("模板族 {} 不支持 {} 个事件（范围 {}-{}）".format(fam, n, lo, hi))
        else:
            n = int(np.clip(1 + rng.poisson(lam), lo, hi))
        text, answer, meta = SAMPLERS[fam](rng, n, tpl, params)
        if not is_terminating(answer):
            raise CorpusError("生成的答案不是有限小数: {} ({})".format(answer, fam))
        meta = dict(meta, family=fam)
        records.append(ProblemRecord("{}-{}-{:05d}".format(fam, seed, i), capitalize_sentences(text), answer, tpl.ptype, meta))
    return records


# ========== 划分 ==========

@dataclass(frozen=True)
class SplitSpec:
    mode: str = "iid"  # iid / ood
    ratio: float = 0.8  # iid: 训练集比例
    fraction: float = 0.2  # ood: 每类最长的这一比例进测试集
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("iid", "ood"):
            raise CorpusError("未知划分方式 {}".format(self.mode))
        if not 0 < self.fraction < 1 or not 0 < self.ratio < 1:
            raise CorpusError("划分比例必须在 (0,1) 内")


def split(records: Sequence[ProblemRecord], spec: SplitSpec = SplitSpec()) -> Tuple[List[ProblemRecord], List[ProblemRecord]]:
    """
    iid: 固定种子打乱后按 ratio 切分
    ood: 每种题型按词数降序（同长按 id）取前 fraction 为测试集
    """
    if not records:
        raise CorpusError("empty corpus")
    n = len(records)
    if spec.mode == "iid":
        order = np.random.default_rng(spec.seed).permutation(n)
        cut = int(n * spec.ratio)
        train = [records[int(i)] for i in order[:cut]]
        test = [records[int(i)] for i in order[cut:]]
    else:
        df = records_to_frame(records)
        test_idx = set()
        for ptype, grp in df.groupby("type", sort=True):
            k = int(len(grp) * spec.fraction)
            ranked = grp.sort_values(["tokens", "id"], ascending=[False, True])
            test_idx.update(int(i) for i in ranked.index[:k])
        train = [r for i, r in enumerate(records) if i not in test_idx]
        test = [r for i, r in enumerate(records) if i in test_idx]
    if not train or not test:
        logger.warning("划分退化: 训练集 %d 题, 测试集 %d 题", len(train), len(test))
    return train, test


# ========== 评测 ==========

@dataclass(frozen=True, eq=False)
class EvalReport:
    outcomes: pd.DataFrame  # id, type, status, predicted, gold, correct
    runtime: float = 0.0

    @property
    def overall(self) -> float:
        if self.outcomes.empty:
            return 0.0
        return float(self.outcomes["correct"].mean())

    @property
    def per_type(self) -> pd.Series:
        acc = self.outcomes.groupby("type")["correct"].mean() if not self.outcomes.empty else pd.Series(dtype=float)
        return acc.reindex(list(PROBLEM_TYPES))

    def counts(self) -> pd.Series:
        return self.outcomes["status"].value_counts().reindex(list(OUTCOMES), fill_value=0)

    def to_table(self, title: str = "答案准确率") -> str:
        """对齐的纯文本表: Overall | Motion | Task | Relation | Price"""
        headers = ["Overall"] + [t.capitalize() for t in PROBLEM_TYPES]
        values = [self.overall] + [self.per_type.get(t) for t in PROBLEM_TYPES]
        cells = ["-" if v is None or pd.isna(v) else "{:.1f}".format(100 * v) for v in values]
        widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
        lines = [
            title,
            " | ".join(h.rjust(w) for h, w in zip(headers, widths)),
            "-+-".join("-" * w for w in widths),
            " | ".join(c.rjust(w) for c, w in zip(cells, widths)),
        ]
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, Any]:
        per_type = {t: (None if pd.isna(v) else round(float(v), 6)) for t, v in self.per_type.items()}
        return {
            "overall": round(self.overall, 6),
            "per_type": per_type,
            "counts": {k: int(v) for k, v in self.counts().items()},
            "total": int(len(self.outcomes)),
            "outcomes": [
                {k: (v.item() if isinstance(v, np.generic) else v) for k, v in row.items()}
                for row in self.outcomes.to_dict(orient="records")
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2)

    def to_csv(self, path) -> None:
        self.outcomes.to_csv(path, index=False, encoding="utf-8")


def _judge(solver, record: ProblemRecord) -> Dict[str, Any]:
    try:
        outcome = solver.solve(record.text, record.id)
    except SmartError as e:
        logger.debug("%s 解析失败: %s", record.id, e)
        status, predicted = "parse-failure", None
    else:
        predicted = outcome.value
        if outcome.status != "solved":
            status = outcome.status
        elif answers_match(predicted, record.answer):
            status = "correct"
        else:
            status = "wrong-answer"
    return {
        "id": record.id,
        "type": record.ptype,
        "status": status,
        "predicted": None if predicted is None else format_rational(predicted),
        "gold": format_rational(record.answer),
        "correct": status == "correct",
    }


def evaluate(solver, test: Sequence[ProblemRecord], jobs: int = 1) -> EvalReport:
    """
    solver 需要有 solve(text, source) -> Outcome（status / value）。
    jobs > 1 时多线程逐题评测；solver 在评测期间只读。结果按输入顺序排列。
    """
    start = time.time()
    total = len(test)
    rows: List[Optional[Dict[str, Any]]] = [None] * total
    if jobs > 1 and total > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(_judge, solver, r): i for i, r in enumerate(test)}
            for done, fut in enumerate(as_completed(futures), 1):
                rows[futures[fut]] = fut.result()
                if done % 200 == 0:
                    logger.info("评测进度: %d/%d", done, total)
    else:
        for i, r in enumerate(test):
            rows[i] = _judge(solver, r)
            if (i + 1) % 200 == 0:
                logger.info("评测进度: %d/%d", i + 1, total)
    outcomes = pd.DataFrame(rows, columns=["id", "type", "status", "predicted", "gold", "correct"])
    return EvalReport(outcomes, time.time() - start)


# ========== 统计 ==========

def stats(records: Sequence[ProblemRecord]) -> pd.DataFrame:
    """每种题型与全体的平均词数、agent 数、事件数、关系数（没有 meta 的题只统计长度）"""
    if not records:
        raise CorpusError("empty corpus")
    df = records_to_frame(records)
    cols = ["tokens", "agents", "events", "relations"]
    for c in cols:
        df[c] = pd.to_numeric(df[c], errors="coerce")
    table = df.groupby("type")[cols].mean()
    table["count"] = df.groupby("type").size()
    overall = df[cols].mean()
    overall["count"] = len(df)
    table.loc["overall"] = overall
    return table
