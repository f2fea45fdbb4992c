from pathlib import Path

import numpy as np
import pytest

from pantyping.encoder import EncodedSentence, Vocab
from pantyping.hierarchy import load_hierarchy, read_hierarchy

DATA = Path(__file__).parent / "data"


@pytest.fixture
def fixture15():
    return read_hierarchy(DATA / "hierarchy15.txt")


@pytest.fixture
def tiny_hierarchy():
    # 7 types, 3 layers
    return load_hierarchy(["/a", "/a/b", "/a/b/c", "/a/b/d", "/a/e", "/a/e/f", "/g"])


@pytest.fixture
def vocab():
    v = Vocab()
    for tok in "the senator ran for office in ohio and won a seat".split():
        v.add(tok)
    return v


@pytest.fixture
def sentences(vocab):
    return [
        EncodedSentence(tuple(vocab.encode("the senator ran for office".split())), (1, 2)),
        EncodedSentence(tuple(vocab.encode("ohio and the senator won".split())), (3, 4)),
        EncodedSentence(tuple(vocab.encode("a seat in ohio".split())), (3, 4)),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
