"""One-cycle schedule shape and boundary behavior."""

import numpy as np
import pytest

from backbone_tooling.errors import FinetuneError
from backbone_tooling.schedule import one_cycle_lrs


def test_exact_endpoints_and_single_peak():
    max_lr = 0.02
    trace = one_cycle_lrs(max_lr, 100)
    assert trace.shape == (100,)
    assert trace[0] == max_lr / 25.0
    assert trace[-1] == max_lr / 25.0 / 1e4
    assert trace.max() == max_lr
    assert np.count_nonzero(trace == max_lr) == 1


def test_three_point_invariant():
    trace = one_cycle_lrs(0.1, 47)
    assert trace[0] < 0.1            # starts below the peak
    assert trace.max() == 0.1        # touches the peak
    assert trace[-1] < trace[0]      # ends below where it started


def test_unimodal_rise_then_fall():
    trace = one_cycle_lrs(1.0, 80)
    peak = int(np.argmax(trace))
    assert np.all(np.diff(trace[: peak + 1]) > 0)
    assert np.all(np.diff(trace[peak:]) < 0)


def test_peak_position_matches_pct_start():
    trace = one_cycle_lrs(0.5, 101, pct_start=0.3)
    assert int(np.argmax(trace)) == 30


def test_minimum_length_still_has_both_phases():
    trace = one_cycle_lrs(0.01, 3)
    assert trace.shape == (3,)
    assert trace[1] == 0.01
    assert trace[0] < 0.01 and trace[2] < trace[0]


def test_custom_divisors_honored():
    trace = one_cycle_lrs(1.0, 50, start_div=10.0, final_div=100.0)
    assert trace[0] == 0.1
    assert trace[-1] == 0.1 / 100.0


@pytest.mark.parametrize("max_lr,total,pct", [
    (1e-4, 3, 0.5), (0.003, 10, 0.1), (2.0, 500, 0.9), (0.1, 33, 0.25),
])
def test_bounds_hold_across_settings(max_lr, total, pct):
    trace = one_cycle_lrs(max_lr, total, pct_start=pct)
    assert trace.shape == (total,)
    final_lr = max_lr / 25.0 / 1e4
    assert np.all(trace >= final_lr - 1e-18)
    assert np.all(trace <= max_lr)
    assert np.count_nonzero(trace == max_lr) == 1


@pytest.mark.parametrize("kwargs", [
    {"max_lr": 0.0, "total_steps": 10},
    {"max_lr": -0.1, "total_steps": 10},
    {"max_lr": 0.1, "total_steps": 2},
    {"max_lr": 0.1, "total_steps": 10, "pct_start": 0.0},
    {"max_lr": 0.1, "total_steps": 10, "pct_start": 1.0},
])
def test_invalid_settings_rejected(kwargs):
    with pytest.raises(FinetuneError):
        one_cycle_lrs(**kwargs)
