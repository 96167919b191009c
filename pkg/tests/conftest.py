import numpy as np
import pytest

from graphunlearn.gnn import ModelConfig, init_model
from graphunlearn.graph import SbmConfig, SplitConfig, from_edges, generate_sbm, make_splits


def path_graph(n, features=None, labels=None, num_classes=2):
    edges = [(i, i + 1) for i in range(n - 1)]
    if features is None:
        features = np.eye(n, 3)[:, :3] if n >= 3 else np.ones((n, 3))
    if labels is None:
        labels = np.arange(n) % num_classes
    return from_edges(n, edges, features, labels, num_classes)


@pytest.fixture
def sbm_small():
    g = generate_sbm(SbmConfig(num_blocks=4, nodes_per_block=20, p_in=0.3, p_out=0.02, seed=3))
    return make_splits(g, SplitConfig(seed=3))


@pytest.fixture
def model_small(sbm_small):
    cfg = ModelConfig(sbm_small.feature_dim, sbm_small.num_classes, hidden_dim=8, seed=0)
    return init_model(cfg)


_acceptance_key = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_acceptance_key] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the summary."""
    return request.config.stash[_acceptance_key]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_acceptance_key, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
