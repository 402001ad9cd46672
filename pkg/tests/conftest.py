"""Shared fixtures: a numba warm-up so compile time never lands inside a
timed assertion, and small synthetic-dataset builders."""

from __future__ import annotations

import numpy as np
import pytest

from cmekit import lasso_cd, make_dataset

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session", autouse=True)
def _warm_jit():
    """Compile the jitted lasso kernels once, outside any timed block."""
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 5))
    y = X[:, 0] + rng.normal(size=40)
    lasso_cd(X, y, family="gaussian", k_cv=2)
    d = (rng.uniform(size=40) < 0.5).astype(np.float64)
    lasso_cd(X, d, family="binomial", k_cv=2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240814)


def make_binary_ds(n=400, seed=0, p=2, effect=None):
    """Binary-treatment dataset with a known linear-interaction truth.

    Y = 1 + theta(X)*D + X + Z@1 + e, with theta(x) = 0.5 + 0.25x unless an
    `effect` callable is given. Propensity logit(0.4X + 0.4Z1).
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, n)
    z = rng.normal(size=(n, p))
    eta = 0.4 * x + 0.4 * z[:, 0]
    d = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(np.float64)
    theta = effect(x) if effect is not None else 0.5 + 0.25 * x
    y = 1.0 + theta * d + x + z.sum(axis=1) + rng.normal(size=n)
    return make_dataset(y=y, d=d, x=x, z=z)


def make_continuous_ds(n=400, seed=0, theta=2.0):
    """Continuous-treatment dataset: Y = theta*D + g(V) + e, D = m(V) + u."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, n)
    z = rng.normal(size=(n, 2))
    m = 0.5 * x - 0.3 * z[:, 0]
    d = m + rng.normal(size=n)
    g = 1.0 + x + 0.5 * z[:, 1]
    y = theta * d + g + rng.normal(size=n)
    return make_dataset(
        y=y, d=d, x=x, z=z, treatment_type="continuous"
    )


def record_criterion(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
