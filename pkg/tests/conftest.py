# -*- coding: utf-8 -*-
"""测试公共夹具：测试从仓库根目录导入模块"""
import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

import corpus  # noqa: E402
from config import load_config  # noqa: E402
from pipeline import Pipeline, load_resources  # noqa: E402

FIXTURES = os.path.join(ROOT, "fixtures")


@pytest.fixture(scope="session")
def res():
    return load_resources(load_config())


@pytest.fixture(scope="session")
def lexicon(res):
    return res.lexicon


@pytest.fixture(scope="session")
def rule_pipeline(res):
    return Pipeline(res)


@pytest.fixture(scope="session")
def samples():
    return corpus.load(os.path.join(FIXTURES, "samples.jsonl"))


@pytest.fixture(scope="session")
def unit_price():
    return corpus.load(os.path.join(FIXTURES, "unit_price.jsonl"))


@pytest.fixture(scope="session")
def small_corpus():
    """四种题型各 10 道"""
    return corpus.generate(count=40, seed=7)
