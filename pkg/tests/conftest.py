"""Shared models for the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from rsctmc.model import load_model, model_from_dict, random_model

MODELS = Path(__file__).resolve().parent.parent / "demos" / "models"

# two random suites used throughout: 10 models for solver checks, 20 for policy iteration
SUITE10 = tuple(range(10))
SUITE20 = tuple(range(20))


def single_state(c0=2.0, g0=1.0):
    return model_from_dict({"n": 1, "actions": [["a"]], "rates": [{"a": [0.0]}],
                            "cost": [{"a": c0}], "terminal": [g0]})


def symmetric(c0=1.0, rate=1.0):
    return model_from_dict({
        "n": 2, "actions": [["a"], ["a"]],
        "rates": [{"a": [None, rate]}, {"a": [rate, None]}],
        "cost": [{"a": c0}, {"a": c0}], "terminal": [0.0, 0.0],
    })


def with_costs(model, cost=None, terminal=None, scale=1.0, shift=0.0):
    """Copy of ``model`` with costs replaced, scaled or shifted."""
    from rsctmc.model import model_to_dict

    doc = model_to_dict(model)
    for i, row in enumerate(doc["cost"]):
        for label in row:
            base = row[label] if cost is None else cost
            row[label] = scale * base + shift
    if terminal is not None:
        doc["terminal"] = list(terminal)
    else:
        doc["terminal"] = [scale * g for g in doc["terminal"]]
    return model_from_dict(doc)


@pytest.fixture(scope="session")
def m2():
    return load_model((MODELS / "m2.json").read_text())


@pytest.fixture(scope="session")
def sym():
    return symmetric()


@pytest.fixture(scope="session")
def one():
    return single_state()


@pytest.fixture(scope="session")
def suite10():
    return [random_model(s) for s in SUITE10]


@pytest.fixture(scope="session")
def suite20():
    return [random_model(s) for s in SUITE20]


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
