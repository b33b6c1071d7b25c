# -*- coding: utf-8 -*-
"""
训练检查点存储：缓冲区存 JSONL（题号 + 序列化解析图），模型与报告存 JSON。
目录结构（默认 models/，可用 SMART_MODEL_DIR 或 --model-dir 改）:
    success.jsonl  failure.jsonl  labeler.json  translator.json  report.json  report.csv
所有 JSON 按键排序输出，相同状态写出逐字节相同的文件。
"""
import json
import os
from typing import Optional, Tuple

import numpy as np
import pandas as pd

import config
from extract import ATTR_LABELS, NODE_LABELS, LabelerModel
from graph_core import SerializationError, graph_from_dict, graph_to_dict, to_rational, format_rational
from learn import FailureBuffer, FailureEntry, SuccessBuffer, SuccessEntry
from pipeline import Models
from relate import TranslatorModel

FORMAT_VERSION = 1


def _model_dir(base=None) -> str:
    d = str(base or config.MODEL_DIR)
    os.makedirs(d, exist_ok=True)
    return d


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _read_json(path: str):
    if not os.path.exists(path):
        raise SerializationError("文件不存在", path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise SerializationError("JSON 格式错误: {}".format(e), path)


def _check_version(data, path: str) -> None:
    if not isinstance(data, dict) or data.get("format_version") != FORMAT_VERSION:
        raise SerializationError("不支持的格式版本 {}".format(data.get("format_version") if isinstance(data, dict) else None), path)


# ========== 缓冲区 ==========

def save_buffers(success: SuccessBuffer, failure: FailureBuffer, base=None) -> None:
    d = _model_dir(base)
    lines = [
        _dump({"id": e.problem_id, "origin": e.origin, "iteration": e.iteration, "graph": graph_to_dict(e.graph)})
        for e in success.entries
    ]
    _write(os.path.join(d, "success.jsonl"), "".join(line + "\n" for line in lines))
    lines = [
        _dump({"id": e.problem_id, "answer": format_rational(e.answer), "reason": e.reason})
        for e in failure.entries
    ]
    _write(os.path.join(d, "failure.jsonl"), "".join(line + "\n" for line in lines))


def _read_jsonl(path: str):
    if not os.path.exists(path):
        raise SerializationError("文件不存在", path)
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise SerializationError("第 {} 行 JSON 格式错误: {}".format(lineno, e), path)


def load_buffers(base=None) -> Tuple[SuccessBuffer, FailureBuffer]:
    d = _model_dir(base)
    success = []
    path = os.path.join(d, "success.jsonl")
    for lineno, data in _read_jsonl(path):
        try:
            graph = graph_from_dict(data["graph"])
            success.append(SuccessEntry(data["id"], graph, data.get("origin", "rule"), int(data.get("iteration", 0))))
        except KeyError as e:
            raise SerializationError("第 {} 行缺少字段 {}".format(lineno, e), path)
        except SerializationError as e:
            raise SerializationError("第 {} 行 {}".format(lineno, e), path)
    failure = []
    path = os.path.join(d, "failure.jsonl")
    for lineno, data in _read_jsonl(path):
        try:
            failure.append(FailureEntry(data["id"], to_rational(data["answer"]), data.get("reason", "")))
        except (KeyError, ValueError) as e:
            raise SerializationError("第 {} 行格式错误: {}".format(lineno, e), path)
    return SuccessBuffer(tuple(success)), FailureBuffer(tuple(failure))


# ========== 模型 ==========

def labeler_to_dict(model: LabelerModel) -> dict:
    features = sorted(model.feature_index, key=model.feature_index.get)
    return {
        "format_version": FORMAT_VERSION,
        "version": model.version,
        "scale": model.scale,
        "node_labels": list(NODE_LABELS),
        "attr_labels": list(ATTR_LABELS),
        "features": features,
        "node_weights": model.node_weights.tolist(),
        "attr_weights": model.attr_weights.tolist(),
    }


def labeler_from_dict(data, path: str = "labeler") -> LabelerModel:
    _check_version(data, path)
    if data.get("node_labels") != list(NODE_LABELS) or data.get("attr_labels") != list(ATTR_LABELS):
        raise SerializationError("标签集合与当前版本不一致", path)
    features = data["features"]
    node_w = np.array(data["node_weights"], dtype=float).reshape(len(features), len(NODE_LABELS))
    attr_w = np.array(data["attr_weights"], dtype=float).reshape(len(features), len(ATTR_LABELS))
    return LabelerModel({f: i for i, f in enumerate(features)}, node_w, attr_w, int(data["version"]), float(data["scale"]))


def translator_to_dict(model: TranslatorModel) -> dict:
    """模式 -> [{skeleton, count}]，按骨架排序"""
    store = {
        p: [{"skeleton": s, "count": int(c)} for s, c in sorted(counts.items())]
        for p, counts in model.store.items()
    }
    return {"format_version": FORMAT_VERSION, "version": model.version, "store": store}


def translator_from_dict(data, path: str = "translator") -> TranslatorModel:
    _check_version(data, path)
    store = data.get("store")
    if not isinstance(store, dict):
        raise SerializationError("store 必须是对象", path)
    patterns = {}
    for p, entries in sorted(store.items()):
        if not isinstance(entries, list):
            raise SerializationError("模式的骨架必须是列表", "{}.store[{!r}]".format(path, p))
        counts = {}
        for j, item in enumerate(entries):
            try:
                counts[str(item["skeleton"])] = int(item["count"])
            except (KeyError, TypeError, ValueError):
                raise SerializationError("骨架条目格式错误", "{}.store[{!r}][{}]".format(path, p, j))
        patterns[p] = dict(sorted(counts.items()))
    return TranslatorModel(patterns, int(data["version"]))


def save_models(models: Models, base=None) -> None:
    d = _model_dir(base)
    _write(os.path.join(d, "labeler.json"), _dump(labeler_to_dict(models.labeler)))
    _write(os.path.join(d, "translator.json"), _dump(translator_to_dict(models.translator)))


def load_models(base=None) -> Models:
    """目录里没有模型文件时返回未训练的模型（规则解析器）"""
    d = _model_dir(base)
    lab_path = os.path.join(d, "labeler.json")
    tr_path = os.path.join(d, "translator.json")
    labeler = labeler_from_dict(_read_json(lab_path), lab_path) if os.path.exists(lab_path) else LabelerModel()
    translator = translator_from_dict(_read_json(tr_path), tr_path) if os.path.exists(tr_path) else TranslatorModel()
    return Models(labeler, translator)


# ========== 报告 ==========

def save_report(report: pd.DataFrame, base=None) -> str:
    d = _model_dir(base)
    rows = [{k: (None if pd.isna(v) else v) for k, v in row.items()} for row in report.to_dict(orient="records")]
    rows = [{k: (v.item() if isinstance(v, np.generic) else v) for k, v in row.items()} for row in rows]
    path = os.path.join(d, "report.json")
    _write(path, json.dumps(rows, ensure_ascii=False, sort_keys=True, indent=2))
    report.to_csv(os.path.join(d, "report.csv"), index=False, encoding="utf-8")
    return path


def save_run(result, base=None) -> str:
    """learn.run 的结果整体落盘，返回目录"""
    d = _model_dir(base)
    save_buffers(result.success, result.failure, d)
    save_models(result.state.models, d)
    save_report(result.report, d)
    return d


def has_models(base: Optional[str] = None) -> bool:
    d = str(base or config.MODEL_DIR)
    return os.path.exists(os.path.join(d, "labeler.json"))
