from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def threshold_stub(q: float, dim: int = 0):
    """Simulator that collides iff theta[dim] > q; criticality is the distance to q."""

    def run(theta, seed):
        x = float(theta[dim])
        return SimpleNamespace(collision=x > q, min_ttc=max(q - x, 0.0), final_gap=q - x)

    return run


def bernoulli_stub(p: float):
    """Simulator whose collision is a seeded coin flip with probability p."""

    def run(theta, seed):
        hit = np.random.default_rng(seed).random() < p
        return SimpleNamespace(collision=bool(hit), min_ttc=1.0, final_gap=1.0)

    return run


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def synthetic_lvd(n: int, seed: int = 0) -> np.ndarray:
    r = np.random.default_rng(seed)
    v0 = r.uniform(8.0, 40.0, n)
    ratio = r.beta(2.0, 6.0, n)
    decel = np.exp(r.normal(np.log(0.8), 0.4, n))
    return np.column_stack([v0, ratio, decel])


# --- acceptance criteria reporting -------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, float, list]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        _CRITERIA[number] = (title, rep.passed, rep.duration, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, duration, details = _CRITERIA[number]
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title} ({duration:.1f} s)"
        if details:
            line += ": " + "; ".join(details)
        terminalreporter.write_line(line)
