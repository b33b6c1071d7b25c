# -*- coding: utf-8 -*-
"""
应用题求解命令行：
    solve  求解一道题（或文件中每行一道），--trace 打印解析图、方程来源与推导过程
    parse  输出解析图 JSON，--candidates k 输出 k 个候选及分数
    train  在题库上做迭代自训练，写出检查点与报告，--resume 从已有检查点接着训练
    eval   在题库（或其 IID/OOD 测试划分）上评测答案准确率
    gen    用模板生成题库 JSONL
退出码: 0 成功，1 用法/配置错误，2 有题目没解出来
"""
import sys
import io
import os

# 设置控制台编码
if sys.platform == 'win32':
    sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8')
    sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding='utf-8')

import argparse
import json
import logging
from datetime import datetime
from typing import List, Optional

import checkpoint_store
import corpus
import learn
from config import Config, ConfigError, load_config
from graph_core import (
    SerializationError,
    SmartError,
    format_rational,
    graph_to_dict,
    render_equation,
    serialize_graph,
)
from pipeline import Models, Options, Outcome, Pipeline, load_resources

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNSOLVED = 2

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """用法错误统一用退出码 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "{}: 错误: {}\n".format(self.prog, message))


def _setup_logging(log_dir: Optional[str] = None, verbose: bool = False) -> Optional[str]:
    """配置 root logger"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
        force=True,
    )
    ts = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_path = None
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_path = os.path.join(log_dir, f"smart_{ts}.log")
        file_h = logging.FileHandler(log_path, encoding="utf-8")
        file_h.setLevel(logging.DEBUG)
        file_h.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(message)s", datefmt="%Y-%m-%d %H:%M:%S"))
        logging.root.addHandler(file_h)
    return log_path


def _config(args) -> Config:
    cfg = load_config(
        args.config,
        beam=getattr(args, "candidates", None) or getattr(args, "beam", None),
        max_iters=getattr(args, "max_iters", None),
        seed=getattr(args, "seed", None),
        model_dir=getattr(args, "model_dir", None),
        disable_miner=args.disable_miner or None,
        disable_translator=args.disable_translator or None,
        disable_labeler=args.disable_labeler or None,
        output_format=args.format,
    )
    return cfg.validate()


def _pipeline(cfg: Config, models: Optional[Models] = None) -> Pipeline:
    res = load_resources(cfg)
    if models is None:
        models = checkpoint_store.load_models(cfg.model_dir) if checkpoint_store.has_models(cfg.model_dir) else Models()
    return Pipeline(res, models, Options.from_config(cfg))


def _problem_texts(args) -> List[str]:
    if args.file:
        if not os.path.exists(args.file):
            raise UsageError("文件不存在: {}".format(args.file))
        with open(args.file, "r", encoding="utf-8") as f:
            texts = [line.strip() for line in f if line.strip()]
    else:
        texts = [" ".join(args.text).strip()] if args.text else []
    if not texts or not all(texts):
        raise UsageError("没有输入题目")
    return texts


# ========== solve ==========

def format_trace(outcome: Outcome) -> str:
    """解析图摘要 + 带来源标记的方程 + 推导步骤"""
    pg = outcome.solution.graph if outcome.solution is not None else outcome.graph
    lines = []
    if pg is not None:
        lines.append("解析图:")
        for n in pg.nodes:
            text = " ".join(n.span.text) if n.span is not None else "-"
            lines.append("  {} {} parent={} [{}]".format(n.kind, n.id, n.parent or "-", text))
            for a in pg.attributes_of(n.id):
                value = format_rational(a.value) if a.value is not None else "?"
                unit = "/".join(u for u in (a.num_unit, a.den_unit) if u)
                lines.append("    {}({}) = {} {}".format(a.kind, n.id, value, unit).rstrip())
        lines.append("目标: {}".format(pg.goal))
        lines.append("方程:")
        for eq in pg.equations:
            lines.append("  [{}] {}    ({})".format(eq.provenance, render_equation(eq), eq.label))
    if outcome.solution is not None:
        lines.append("推导:")
        lines.append(outcome.solution.trace.render_text())
    elif outcome.error:
        lines.append("失败原因: {}".format(outcome.error))
    return "\n".join(lines)


def cmd_solve(args) -> int:
    cfg = _config(args)
    parser = _pipeline(cfg)
    code = EXIT_OK
    results = []
    for i, text in enumerate(_problem_texts(args)):
        outcome = parser.solve(text, "input-{}".format(i + 1))
        if outcome.status != "solved":
            code = EXIT_UNSOLVED
        if cfg.output_format == "json":
            item = {
                "status": outcome.status,
                "answer": format_rational(outcome.value) if outcome.value is not None else None,
                "error": outcome.error or None,
            }
            if args.trace:
                pg = outcome.solution.graph if outcome.solution else outcome.graph
                item["graph"] = graph_to_dict(pg) if pg is not None else None
                item["trace"] = outcome.solution.trace.to_json() if outcome.solution else None
            results.append(item)
            continue
        if outcome.status == "solved":
            print(outcome.solution.display())
        else:
            print("未解出 ({}): {}".format(outcome.status, outcome.error))
        if args.trace:
            print(format_trace(outcome))
    if cfg.output_format == "json":
        print(json.dumps(results if len(results) > 1 else results[0], ensure_ascii=False, sort_keys=True, indent=2))
    return code


# ========== parse ==========

def cmd_parse(args) -> int:
    cfg = _config(args)
    parser = _pipeline(cfg)
    text = _problem_texts(args)[0]
    try:
        if args.candidates:
            _, cands = parser.candidates(text, "input", args.candidates)
            if not cands.candidates:
                print("没有合法的候选解析图", file=sys.stderr)
                return EXIT_UNSOLVED
            out = [{"score": round(c.score, 12), "graph": graph_to_dict(c.graph)} for c in cands.candidates]
            print(json.dumps(out, ensure_ascii=False, sort_keys=True))
        else:
            print(serialize_graph(parser.parse(text, "input")))
    except SmartError as e:
        print("解析失败: {}".format(e), file=sys.stderr)
        return EXIT_UNSOLVED
    return EXIT_OK


# ========== train / eval ==========

def _split(records, args, cfg: Config):
    spec = corpus.SplitSpec(mode=args.split, ratio=args.ratio, seed=cfg.seed)
    return corpus.split(records, spec)


def cmd_train(args) -> int:
    cfg = _config(args)
    records = corpus.load(args.corpus)
    if not records:
        raise UsageError("题库为空: {}".format(args.corpus))
    test = None
    if args.split:
        records, test = _split(records, args, cfg)
    resume = None
    if args.resume:
        if not checkpoint_store.has_models(cfg.model_dir):
            raise UsageError("没有可以接着训练的检查点: {}".format(cfg.model_dir))
        success, failure = checkpoint_store.load_buffers(cfg.model_dir)
        resume = (checkpoint_store.load_models(cfg.model_dir), success, failure)
        logger.info("从检查点 %s 接着训练: 成功 %d, 失败 %d", cfg.model_dir, len(success), len(failure))
    res = load_resources(cfg)
    logger.info("开始训练: %d 题, 最多 %d 轮, seed=%d", len(records), cfg.max_iters, cfg.seed)
    result = learn.run(records, res, Options.from_config(cfg), cfg.max_iters, cfg.seed, test, args.jobs, resume)
    out_dir = checkpoint_store.save_run(result, cfg.model_dir)
    logger.info("检查点已写入 %s", out_dir)
    if cfg.output_format == "json":
        print(result.report.to_json(orient="records", force_ascii=False))
    else:
        print(result.report.to_string(index=False))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    records = corpus.load(args.corpus)
    if not records:
        raise UsageError("题库为空: {}".format(args.corpus))
    test = records
    models = None
    if args.split:
        train_set, test = _split(records, args, cfg)
        if args.fit:
            res = load_resources(cfg)
            result = learn.run(train_set, res, Options.from_config(cfg), cfg.max_iters, cfg.seed, jobs=args.jobs)
            models = result.state.models
    parser = _pipeline(cfg, models)
    report = corpus.evaluate(parser, test, args.jobs)
    if args.csv:
        report.to_csv(args.csv)
    if cfg.output_format == "json":
        print(report.to_json())
    else:
        title = "答案准确率 ({})".format(args.split.upper() if args.split else "全部")
        print(report.to_table(title))
        counts = report.counts()
        print("  ".join("{}={}".format(k, int(v)) for k, v in counts.items()))
    return EXIT_OK


# ========== gen ==========

def cmd_gen(args) -> int:
    params = {}
    if args.n_events is not None:
        params["n_events"] = args.n_events
    if args.cue_rate is not None:
        params["cue_rate"] = args.cue_rate
    cfg = load_config(args.config)
    templates = corpus.load_templates(cfg.templates_path)
    records = corpus.generate(args.type, args.count, args.seed if args.seed is not None else 0, params, templates)
    if args.output:
        corpus.save(args.output, records)
        logger.info("已生成 %d 题 -> %s", len(records), args.output)
    else:
        sys.stdout.write(corpus.dumps(records))
    return EXIT_OK


# ========== 入口 ==========

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="应用题情境模型解析与求解")
    parser.add_argument("--config", type=str, default=os.environ.get("SMART_CONFIG"), help="配置文件（key=value）")
    parser.add_argument("--log-dir", type=str, default=None, help="日志目录")
    parser.add_argument("--verbose", "-v", action="store_true", help="输出调试日志")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, text=True):
        if text:
            p.add_argument("text", nargs="*", help="题目文本")
            p.add_argument("--file", type=str, default=None, help="题目文件，每行一道")
        p.add_argument("--format", choices=("text", "json"), default=None, help="输出格式")
        p.add_argument("--model-dir", type=str, default=None, help="检查点目录")
        p.add_argument("--disable-miner", action="store_true", help="关闭关键词关系挖掘")
        p.add_argument("--disable-translator", action="store_true", help="关闭模板翻译器")
        p.add_argument("--disable-labeler", action="store_true", help="不用学到的标注器（只用规则标注）")
        p.add_argument("--seed", type=int, default=None, help="随机种子")

    p = sub.add_parser("solve", help="求解题目")
    common(p)
    p.add_argument("--trace", action="store_true", help="打印解析图与推导过程")
    p.add_argument("--beam", type=int, default=None, help="候选个数 k")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("parse", help="输出解析图 JSON")
    common(p)
    p.add_argument("--candidates", type=int, default=None, help="输出前 k 个候选")
    p.set_defaults(func=cmd_parse)

    for name, func, helptext in (("train", cmd_train, "迭代自训练"), ("eval", cmd_eval, "评测答案准确率")):
        p = sub.add_parser(name, help=helptext)
        common(p, text=False)
        p.add_argument("corpus", help="题库 JSONL")
        p.add_argument("--split", choices=("iid", "ood"), default=None, help="划分方式")
        p.add_argument("--ratio", type=float, default=0.8, help="IID 训练集比例")
        p.add_argument("--max-iters", type=int, default=None, help="最大迭代轮数（0 = 只自举）")
        p.add_argument("--jobs", type=int, default=1, help="并行线程数")
        p.add_argument("--beam", type=int, default=None, help="候选个数 k")
        if name == "train":
            p.add_argument("--resume", action="store_true", help="从 --model-dir 里的检查点（模型与缓冲区）接着训练")
        if name == "eval":
            p.add_argument("--fit", action="store_true", help="先在训练划分上训练再评测")
            p.add_argument("--csv", type=str, default=None, help="逐题结果 CSV 输出路径")
        p.set_defaults(func=func)

    p = sub.add_parser("gen", help="生成题库")
    p.add_argument("--type", type=str, default=None, help="题型或模板族（默认四种题型轮流）")
    p.add_argument("--count", type=int, default=100, help="题目数")
    p.add_argument("--seed", type=int, default=None, help="随机种子")
    p.add_argument("--n-events", type=int, default=None, help="固定事件数")
    p.add_argument("--cue-rate", type=float, default=None, help="关系链中提示词改写比例")
    p.add_argument("--output", "-o", type=str, default=None, help="输出路径（默认标准输出）")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.log_dir, args.verbose)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print("错误: {}".format(e), file=sys.stderr)
        return EXIT_USAGE
    except corpus.CorpusError as e:
        print("题库错误: {}".format(e), file=sys.stderr)
        return EXIT_USAGE
    except (SerializationError, learn.LearnError) as e:
        print("检查点错误: {}".format(e), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
