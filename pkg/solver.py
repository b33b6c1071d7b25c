# -*- coding: utf-8 -*-
"""
求解模块：精确有理数上的约束传播 + 高斯消元兜底。

1. propagate: 不动点循环，每轮代入已知量，只剩一个线性未知量的方程直接解出；
2. solve_linear: 剩下的方程必须对剩余未知量线性，做精确高斯消元；
3. answer: 加上隐含约束后依次执行 1、2，返回目标值与推导轨迹。
"""
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

from graph_core import (
    GOAL_UNKNOWN,
    AttrRef,
    BinOp,
    Const,
    Equation,
    Expr,
    ParseGraph,
    Ref,
    SmartError,
    UnknownVar,
    format_rational,
    is_terminating,
    render_equation,
)
from relate import implicit_constraints

logger = logging.getLogger(__name__)

Key = Union[AttrRef, str]  # str 是方程内未知量的名字（x）

MATCH_TOLERANCE = Fraction(1, 10000)


def key_str(key: Key) -> str:
    return str(key)


# ========== 推导轨迹 ==========

@dataclass(frozen=True)
class TraceStep:
    kind: str  # propagate / eliminate
    equation: str
    unknown: str
    value: Fraction
    index: Optional[int] = None
    indices: Tuple[int, ...] = ()

    def render(self) -> str:
        if self.kind == "propagate":
            return "由 [{}] {} 得 {} = {}".format(self.index, self.equation, self.unknown, format_rational(self.value))
        return "消元 {} 得 {} = {}".format(list(self.indices), self.unknown, format_rational(self.value))


@dataclass(frozen=True)
class DerivationTrace:
    steps: Tuple[TraceStep, ...] = ()
    warnings: Tuple[str, ...] = ()

    def with_steps(self, steps: Sequence[TraceStep]) -> "DerivationTrace":
        return replace(self, steps=self.steps + tuple(steps))

    def with_warning(self, message: str) -> "DerivationTrace":
        return replace(self, warnings=self.warnings + (message,))

    def render_text(self) -> str:
        lines = ["{:>2}. {}".format(i + 1, s.render()) for i, s in enumerate(self.steps)]
        lines.extend("警告: {}".format(w) for w in self.warnings)
        return "\n".join(lines)

    def to_json(self) -> List[Dict]:
        return [
            {
                "kind": s.kind,
                "equation": s.equation,
                "unknown": s.unknown,
                "value": format_rational(s.value),
                "index": s.index,
                "indices": list(s.indices),
            }
            for s in self.steps
        ]


# ========== 异常 ==========

class SolverError(SmartError):
    """求解失败，trace 为失败前已经完成的推导"""

    def __init__(self, message: str, trace: Optional[DerivationTrace] = None, equation: Optional[str] = None):
        super().__init__(message)
        self.trace = trace or DerivationTrace()
        self.equation = equation


class Contradiction(SolverError):
    pass


class DivisionByZero(SolverError):
    pass


class NonlinearResidual(SolverError):
    pass


class Underdetermined(SolverError):
    pass


class Inconsistent(SolverError):
    pass


class _NonLinear(Exception):
    pass


# ========== 线性形式 ==========

class LinearForm:
    """Σ coeff·var + const"""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: Optional[Dict[Key, Fraction]] = None, const: Fraction = Fraction(0)):
        self.coeffs = {k: v for k, v in (coeffs or {}).items() if v != 0}
        self.const = Fraction(const)

    def __add__(self, other: "LinearForm") -> "LinearForm":
        coeffs = dict(self.coeffs)
        for k, v in other.coeffs.items():
            coeffs[k] = coeffs.get(k, Fraction(0)) + v
        return LinearForm(coeffs, self.const + other.const)

    def scale(self, c: Fraction) -> "LinearForm":
        return LinearForm({k: v * c for k, v in self.coeffs.items()}, self.const * c)

    def __sub__(self, other: "LinearForm") -> "LinearForm":
        return self + other.scale(Fraction(-1))

    def is_const(self) -> bool:
        return not self.coeffs

    def variables(self) -> List[Key]:
        return sorted(self.coeffs, key=key_str)


def linearize(expr: Expr, bindings: Mapping[Key, Fraction]) -> LinearForm:
    """代入已知量后化成线性形式；出现未知量相乘等非线性项时抛 _NonLinear"""
    if isinstance(expr, Const):
        return LinearForm(const=expr.value)
    if isinstance(expr, Ref):
        if expr.ref in bindings:
            return LinearForm(const=bindings[expr.ref])
        return LinearForm({expr.ref: Fraction(1)})
    if isinstance(expr, UnknownVar):
        if expr.name in bindings:
            return LinearForm(const=bindings[expr.name])
        return LinearForm({expr.name: Fraction(1)})
    left = linearize(expr.left, bindings)
    if expr.op == "^":
        exponent = expr.right.value
        if exponent.denominator != 1:
            raise _NonLinear("非整数指数")
        if left.is_const():
            if left.const == 0 and exponent < 0:
                raise ZeroDivisionError
            return LinearForm(const=left.const ** int(exponent))
        if exponent == 1:
            return left
        if exponent == 0:
            return LinearForm(const=Fraction(1))
        raise _NonLinear("未知量的乘方")
    right = linearize(expr.right, bindings)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        if left.is_const():
            return right.scale(left.const)
        if right.is_const():
            return left.scale(right.const)
        raise _NonLinear("未知量相乘")
    # "/"
    if right.is_const():
        if right.const == 0:
            raise ZeroDivisionError
        return left.scale(1 / right.const)
    raise _NonLinear("除以未知量")


def equation_form(eq: Equation, bindings: Mapping[Key, Fraction]) -> LinearForm:
    return linearize(eq.lhs, bindings) - linearize(eq.rhs, bindings)


# ========== 方程组 ==========

@dataclass(frozen=True)
class EquationSystem:
    equations: Tuple[Equation, ...]
    unknowns: FrozenSet[Key]
    known: Mapping[AttrRef, Fraction] = field(default_factory=dict)


def _equation_keys(eq: Equation) -> List[Key]:
    keys: List[Key] = list(eq.refs())

    def walk(e: Expr):
        if isinstance(e, UnknownVar):
            keys.append(e.name)
        elif isinstance(e, BinOp):
            walk(e.left)
            walk(e.right)

    walk(eq.lhs)
    walk(eq.rhs)
    return keys


def build_system(pg: ParseGraph, equations: Optional[Sequence[Equation]] = None) -> EquationSystem:
    equations = tuple(pg.equations if equations is None else equations)
    known = {AttrRef(a.kind, a.owner): a.value for a in pg.attributes if a.known}
    unknowns = {k for eq in equations for k in _equation_keys(eq) if k not in known}
    return EquationSystem(equations, frozenset(unknowns), known)


def _isolate(eq: Equation, index: int, bindings: Mapping[Key, Fraction], trace: DerivationTrace):
    """方程只剩一个未知量时解出它；返回 (key, value) 或 None；方程全已知时检查是否矛盾"""
    text = render_equation(eq)
    try:
        form = equation_form(eq, bindings)
    except _NonLinear:
        return None
    except ZeroDivisionError:
        raise DivisionByZero("方程 [{}] {} 出现除以零".format(index, text), trace, text)
    variables = form.variables()
    if not variables:
        if form.const != 0:
            raise Contradiction("方程 [{}] {} 化简后两边不相等".format(index, text), trace, text)
        return True
    if len(variables) > 1:
        return None
    key = variables[0]
    return key, -form.const / form.coeffs[key]


def propagate(sys: EquationSystem) -> Tuple[Dict[Key, Fraction], Tuple[int, ...], DerivationTrace]:
    """
    按方程原始顺序反复扫描，直到没有新的绑定。
    返回 (绑定, 剩余方程下标, 轨迹)。
    """
    bindings: Dict[Key, Fraction] = dict(sys.known)
    trace = DerivationTrace()
    done = set()
    changed = True
    while changed:
        changed = False
        for i, eq in enumerate(sys.equations):
            if i in done:
                continue
            result = _isolate(eq, i, bindings, trace)
            if result is None:
                continue
            done.add(i)
            if result is True:
                continue
            key, value = result
            bindings[key] = value
            trace = trace.with_steps([TraceStep("propagate", render_equation(eq), key_str(key), value, index=i)])
            changed = True
    residual = tuple(i for i in range(len(sys.equations)) if i not in done)
    return bindings, residual, trace


def _gauss(rows: List[List[Fraction]], nvars: int) -> Tuple[List[List[Fraction]], List[int]]:
    # 化为行最简形，返回 (矩阵, 主元列)
    rank = 0
    pivots = []
    for col in range(nvars):
        pivot = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        p = rows[rank][col]
        rows[rank] = [v / p for v in rows[rank]]
        for r in range(len(rows)):
            if r != rank and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[rank])]
        pivots.append(col)
        rank += 1
    return rows, pivots


def solve_linear(
    equations: Sequence[Equation],
    bindings: Optional[Mapping[Key, Fraction]] = None,
    indices: Optional[Sequence[int]] = None,
    trace: Optional[DerivationTrace] = None,
) -> Tuple[Dict[Key, Fraction], List[TraceStep]]:
    """
    对剩余方程做精确高斯消元，要求唯一解。
    错误: 非线性 -> NonlinearResidual；秩不足 -> Underdetermined；无解 -> Inconsistent。
    """
    bindings = dict(bindings or {})
    indices = tuple(indices if indices is not None else range(len(equations)))
    trace = trace or DerivationTrace()
    forms = []
    for eq in equations:
        text = render_equation(eq)
        try:
            forms.append(equation_form(eq, bindings))
        except _NonLinear:
            raise NonlinearResidual("nonlinear residual: {}".format(text), trace, text)
        except ZeroDivisionError:
            raise DivisionByZero("方程 {} 出现除以零".format(text), trace, text)
    variables = sorted({k for f in forms for k in f.coeffs}, key=key_str)
    rows = [[f.coeffs.get(v, Fraction(0)) for v in variables] + [-f.const] for f in forms]
    rows, pivots = _gauss(rows, len(variables))
    for r in rows[len(pivots):]:
        if r[-1] != 0:
            raise Inconsistent("inconsistent: 方程组无解", trace)
    if len(pivots) < len(variables):
        free = [key_str(variables[c]) for c in range(len(variables)) if c not in pivots]
        raise Underdetermined("underdetermined: 无法确定 {}".format(", ".join(free)), trace)
    steps = []
    for r, col in enumerate(pivots):
        key = variables[col]
        bindings[key] = rows[r][-1]
        steps.append(TraceStep("eliminate", "", key_str(key), rows[r][-1], indices=indices))
    return bindings, steps


# ========== 求解入口 ==========

@dataclass(frozen=True)
class Solution:
    value: Fraction
    bindings: Mapping[Key, Fraction]
    trace: DerivationTrace
    graph: ParseGraph

    def display(self) -> str:
        return format_rational(self.value)


def goal_key(pg: ParseGraph) -> Key:
    if pg.goal is None:
        raise SolverError("解析图没有目标")
    return "x" if pg.goal == GOAL_UNKNOWN else pg.goal


def verify_bindings(sys: EquationSystem, bindings: Mapping[Key, Fraction]) -> None:
    """所有未知量都已绑定的方程必须精确成立"""
    for i, eq in enumerate(sys.equations):
        if all(k in bindings for k in _equation_keys(eq)):
            form = equation_form(eq, bindings)
            if form.const != 0:
                raise Contradiction("方程 [{}] {} 代入解后不成立".format(i, render_equation(eq)), equation=render_equation(eq))


def answer(pg: ParseGraph) -> Solution:
    """加入隐含约束 -> 传播 -> 对剩余方程消元 -> 读出目标值"""
    key = goal_key(pg)
    pg, implicit = implicit_constraints(pg)
    pg = pg.with_equations(implicit)
    sys = build_system(pg)
    bindings, residual, trace = propagate(sys)
    if residual:
        eqs = [sys.equations[i] for i in residual]
        try:
            bindings, steps = solve_linear(eqs, bindings, residual, trace)
            trace = trace.with_steps(steps)
        except (Underdetermined, NonlinearResidual) as e:
            if key not in bindings:
                e.trace = trace
                raise
            logger.debug("目标已求出，剩余方程无法完全求解: %s", e)
        except SolverError as e:
            e.trace = trace
            raise
    if key not in bindings:
        raise Underdetermined("underdetermined: 目标 {} 无法求出".format(key_str(key)), trace)
    verify_bindings(sys, bindings)
    value = bindings[key]
    if value <= 0:
        logger.warning("答案非正: %s (%s)", format_rational(value), pg.source)
        trace = trace.with_warning("答案非正: {}".format(format_rational(value)))
    return Solution(value, bindings, trace, pg)


def replay_trace(sys: EquationSystem, trace: DerivationTrace) -> Dict[Key, Fraction]:
    """从初始方程组逐步重放轨迹，得到的绑定应与原求解一致"""
    bindings: Dict[Key, Fraction] = dict(sys.known)
    replayed_elimination = False
    for step in trace.steps:
        if step.kind == "propagate":
            result = _isolate(sys.equations[step.index], step.index, bindings, trace)
            if result is None or result is True or key_str(result[0]) != step.unknown:
                raise SolverError("轨迹第 {} 步无法重放".format(step.index), trace)
            bindings[result[0]] = result[1]
        elif not replayed_elimination:
            eqs = [sys.equations[i] for i in step.indices]
            bindings, _ = solve_linear(eqs, bindings, step.indices)
            replayed_elimination = True
    return bindings


def answers_match(predicted: Fraction, gold: Fraction) -> bool:
    """答案匹配：金标是有限小数时要求精确相等；否则（如 10/3）允许 1e-4 的相对误差"""
    if predicted == gold:
        return True
    if is_terminating(gold):
        return False
    return abs(predicted - gold) / max(abs(gold), Fraction(1)) <= MATCH_TOLERANCE
