import time

import numpy as np
import pytest

from helpers import DESK_SPEC, DESK_STEPS
from kwspot.embeddings import WindowSpec, generate_corpus
from kwspot.training import TrainConfig, train


@pytest.fixture(scope="session")
def desk_corpus():
    return generate_corpus(DESK_SPEC)


@pytest.fixture(scope="session")
def desk_split(desk_corpus):
    # train on the first half of every class's instances, evaluate on the rest
    return desk_corpus.split(4, 4)


@pytest.fixture(scope="session")
def desk_siamese(desk_split):
    train_part, _ = desk_split
    start = time.perf_counter()
    result = train("siamese", train_part, TrainConfig(steps=DESK_STEPS, seed=0), WindowSpec())
    result.seconds = time.perf_counter() - start
    return result


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_line():
    """Record one PASS/FAIL line for the end-of-run acceptance summary."""
    def record(number: int, ok: bool, text: str):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  criterion {number}: {text}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
