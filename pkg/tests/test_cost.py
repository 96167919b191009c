import time

import numpy as np
import pytest

from graphunlearn import cost
from graphunlearn.gnn import ModelConfig, train


def test_unknown_clock():
    with pytest.raises(ValueError):
        cost.Stopwatch("sundial")


def test_virtual_clock_counts_charged_work():
    with cost.Stopwatch("virtual") as sw:
        cost.charge(2.5e9)
    assert sw.elapsed() == pytest.approx(2.5)
    cost.charge(1e9)  # outside the context: not counted
    assert sw.elapsed() == pytest.approx(2.5)


def test_nested_meters_both_count():
    with cost.Stopwatch("virtual") as outer:
        with cost.metering() as inner:
            cost.charge(10.0)
        cost.charge(5.0)
    assert inner.flops == 10.0
    assert outer.elapsed() == pytest.approx(15.0 / cost.NOMINAL_FLOPS_PER_SECOND)


def test_budget_lookahead_wall():
    limit = 0.05
    with cost.Budget(limit, "wall") as b:
        units = 0
        while not b.should_stop():
            time.sleep(0.004)
            b.mark()
            units += 1
    assert b.exhausted
    assert b.elapsed() <= 1.05 * limit + 0.002
    assert units >= 5


def test_budget_lookahead_virtual_exact():
    with cost.Budget(1.0, "virtual") as b:
        units = 0
        while not b.should_stop():
            cost.charge(0.3e9)
            b.mark()
            units += 1
    assert units == 3 and b.elapsed() == pytest.approx(0.9)


def test_unlimited_budget_never_stops():
    with cost.Budget(None) as b:
        assert not b.should_stop()
    assert not b.exhausted


def test_virtual_training_time_is_deterministic(sbm_small):
    cfg = ModelConfig(sbm_small.feature_dim, sbm_small.num_classes, hidden_dim=8)
    t = [train(sbm_small, cfg, epochs=5, clock="virtual")[1].wall_time for _ in range(2)]
    assert t[0] == t[1] > 0
    assert np.isfinite(t[0])
