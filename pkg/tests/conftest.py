import numpy as np
import pytest

from dpsynth.corpus import Corpus, InstructionRecord


@pytest.fixture
def tiny_corpus():
    return Corpus(
        records=[
            InstructionRecord(id="a", text="write a poem about the sea"),
            InstructionRecord(id="b", text="translate this sentence to french"),
            InstructionRecord(id="c", text="what is the capital of peru"),
        ],
        role="real",
    )


def make_corpus(texts, role="real", prefix="r"):
    return Corpus(
        records=[InstructionRecord(id=f"{prefix}{i}", text=t) for i, t in enumerate(texts)],
        role=role,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
