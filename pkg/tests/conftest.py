import sys

import numpy as np
import pytest

from tokensurgery.bundle import random_bundle
from tokensurgery.vocab import Vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_vocab():
    """32-token vocabulary: the 260 reserved slots are not counted by the model tests."""
    words = ["ev", "ler", "imiz", "den", "▁ev", "▁kitap", "▁okul", "lar", "da", "▁bir"]
    return Vocabulary.from_regular(words)


@pytest.fixture
def desk_bundle():
    # V=32, d=8, h=16 with the toy residual backbone
    return random_bundle(32, d=8, h=16, seed=7, dtype=np.float64)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results):
            terminalreporter.write_line(line)
