import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from atbench.model import AtModel, ModelConfig  # noqa: E402
from atbench.synthetic import text_corpus  # noqa: E402
from atbench.tokenization import Mode, TaskKind, build_limited_vocab, build_subword_vocab  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def table():
    return build_subword_vocab(text_corpus())


@pytest.fixture(scope="session")
def task_vocabs(table):
    return {
        TaskKind.OCR: (build_limited_vocab(), Mode.CHARACTER),
        TaskKind.IC: (table, Mode.SUBWORD),
        TaskKind.VQA: (table, Mode.SUBWORD),
    }


@pytest.fixture
def tiny_model(table, task_vocabs):
    return AtModel(ModelConfig(d=16, heads=2, m=8), table, task_vocabs, seed=0)


ACCEPTANCE_LINES = []


def record(criterion: str, passed: bool, detail: str) -> None:
    """Stores one acceptance verdict; the lines are printed after the run."""
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
