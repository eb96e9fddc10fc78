"""Shared fixtures: the 4-class training corpus and a trained stack.

Training a stack takes ~15 s, so one finalized hourly+daily stack is built
per session and shared by every test that only reads from it. Tests that
mutate or retrain build their own.
"""

import time

import numpy as np
import pytest

from gridfpd import data_io, training
from gridfpd.hierarchy import ExtractorStack, Resolution, StackConfig

CORPUS_DAYS = 64
CORPUS_SEED_5MIN = 11
CORPUS_SEED_HOURLY = 12
STACK_SEED = 0

# wall-clock costs of session fixtures, for tests that enforce runtime budgets
TIMINGS: dict[str, float] = {}


def build_corpus():
    """Every class at both entry forms: 5-minute raw and hourly raw."""
    batches = []
    for kind in ("solar", "wind", "load", "ev"):
        batches.append(data_io.synth_by_kind(
            kind, CORPUS_DAYS, resolution=Resolution.FIVE_MIN,
            seed=CORPUS_SEED_5MIN))
        batches.append(data_io.synth_by_kind(
            kind, CORPUS_DAYS, resolution=Resolution.HOURLY,
            seed=CORPUS_SEED_HOURLY))
    return batches


def train_default_stack(corpus):
    stack = ExtractorStack(StackConfig(), seed=STACK_SEED,
                           levels=(Resolution.HOURLY, Resolution.DAILY))
    config = training.TrainConfig(epochs=20, seed=0, class_count=4)
    training.train_stack(stack, corpus, config)
    training.finalize(stack)
    return stack


@pytest.fixture(scope="session")
def corpus():
    return build_corpus()


@pytest.fixture(scope="session")
def trained_stack(corpus):
    start = time.perf_counter()
    stack = train_default_stack(corpus)
    TIMINGS["stack_train_seconds"] = time.perf_counter() - start
    return stack
