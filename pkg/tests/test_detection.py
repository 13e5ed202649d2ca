#!/usr/bin/env python3
"""Tests for photon-count state detection."""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from microtrap.detection import (  # noqa: E402
    DetectionModel,
    detect,
    detect_shots,
    detection_error_budget,
)
from microtrap.errors import DomainError  # noqa: E402


def test_default_threshold():
    """12 kHz signal over 4 kHz background in 5 ms puts the threshold at 43 counts."""
    model = DetectionModel()
    assert model.bright_mean == pytest.approx(80.0)
    assert model.dark_mean == pytest.approx(20.0)
    assert model.threshold == 43


def test_zero_background_threshold():
    """Without background only zero counts read as D."""
    assert DetectionModel(background_kHz=0.0).threshold == 0


def test_error_budget_default():
    """At 5 ms the D5/2 decay during the window dominates the error."""
    budget = detection_error_budget(DetectionModel())
    assert budget["threshold"] == 43
    assert budget["bright_error"] < 1e-4
    assert 2.0e-3 < budget["dark_error"] < 3.2e-3
    assert budget["decay_probability"] == pytest.approx(1.0 - np.exp(-5e-3 / 1.2))


def test_error_decreases_with_window():
    """Mean misclassification falls from 1 ms to 2 ms to 5 ms."""
    base = DetectionModel()
    errors = [detection_error_budget(base.with_window(w))["mean_error"] for w in (1000, 2000, 5000)]
    assert errors[0] > errors[1] > errors[2]


def test_sampled_error_matches_budget():
    """Simulated shelved shots are misread at the analytic dark-error rate."""
    model = DetectionModel()
    rng = np.random.default_rng(1)
    _, dark = detect_shots(np.ones(200_000, dtype=bool), model, rng)
    expected = detection_error_budget(model)["dark_error"]
    assert 1.0 - dark.mean() == pytest.approx(expected, abs=6e-4)


def test_bright_shots_read_bright():
    """S ions are almost never classified D at 5 ms."""
    counts, dark = detect_shots(np.zeros(10_000, dtype=bool), DetectionModel(), np.random.default_rng(2))
    assert dark.sum() <= 3
    assert counts.mean() == pytest.approx(80.0, rel=0.02)


def test_single_shot():
    """detect returns the count and the classified state."""
    counts, state = detect("S", DetectionModel(), np.random.default_rng(0))
    assert counts >= 0
    assert state in ("S", "D")
    with pytest.raises(DomainError):
        detect("P", DetectionModel(), np.random.default_rng(0))


def test_model_validation():
    """Non-positive windows, signals or lifetimes are rejected."""
    with pytest.raises(DomainError):
        DetectionModel(window_us=0.0)
    with pytest.raises(DomainError):
        DetectionModel(signal_kHz=0.0)
    with pytest.raises(DomainError):
        DetectionModel(d_lifetime_s=0.0)
