#!/usr/bin/env python3
"""Shared pytest options: full-resolution field solves run only with --runslow."""
import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run full-resolution field solves"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-resolution field solve (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
