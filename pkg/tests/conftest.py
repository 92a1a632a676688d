import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from quakemfcc.dataset import build_windows, load_manifest, split  # noqa: E402
from quakemfcc.features import FeatureConfig  # noqa: E402
from quakemfcc.nn import CNNClassifier, LSTMClassifier  # noqa: E402
from quakemfcc.synth import write_corpus  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# the desk corpus: 310 quake and 300 noise traces, seed 7, 80/20 split
CORPUS_SEED = 7
CORPUS_RATE = 1000
DESK_EPOCHS = 15


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    write_corpus(str(root), 310, 300, CORPUS_RATE, CORPUS_SEED)
    return os.path.join(str(root), "manifest.csv")


@pytest.fixture(scope="session")
def desk_windows(desk_corpus):
    entries, root = load_manifest(desk_corpus)
    cfg = FeatureConfig.reference(CORPUS_RATE)
    cache = {}
    train = build_windows(split(entries, "train"), root, cfg, 0.2, cache=cache)
    test = build_windows(split(entries, "test"), root, cfg, 0.2, cache=cache)
    return train, test


@pytest.fixture(scope="session")
def desk_models(desk_windows):
    """CNN and LSTM trained once on the desk corpus and shared across tests."""
    train, _ = desk_windows
    cfg = FeatureConfig.reference(CORPUS_RATE)
    out = {}
    for kind, cls in (("cnn", CNNClassifier), ("lstm", LSTMClassifier)):
        clf = cls(epochs=DESK_EPOCHS, random_state=CORPUS_SEED).fit(train.X, train.y)
        clf.model_.meta.update({"feature_config": cfg.as_dict(), "window_s": 0.2,
                                "feature_kind": "mfcc", "seed": CORPUS_SEED})
        out[kind] = clf
    return out


def pytest_terminal_summary(terminalreporter):
    from acceptance_registry import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
