"""
Pytest configuration and fixtures for localizer tests
"""

import json
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the package directory to path for imports
package_dir = Path(__file__).parent.parent
sys.path.insert(0, str(package_dir))

from services.lti_core import LtiSystem  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical campaigns (set LOCALIZER_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("LOCALIZER_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set LOCALIZER_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def example1_system():
    """Two-state, single-input, single-output system with one invariant zero at 0."""
    return LtiSystem(
        a=np.array([[1.0, 2.0], [0.0, 3.0]]),
        b=np.array([[2.0], [3.0]]),
        c=np.array([[1.0, 0.0]]),
        name="example1",
    )


@pytest.fixture
def scalar_system():
    """x[k+1] = u[k], y[k] = x[k]."""
    return LtiSystem(a=np.array([[0.0]]), b=np.array([[1.0]]), c=np.array([[1.0]]), name="scalar")


@pytest.fixture
def decoupled_system():
    """Three independent stable channels, one source and one sensor each."""
    return LtiSystem(a=0.5 * np.eye(3), b=np.eye(3), c=np.eye(3), name="decoupled")


@pytest.fixture
def zero_system():
    """Square SISO system with an invariant zero at 0.5."""
    return LtiSystem(
        a=np.diag([0.5, 0.2]),
        b=np.array([[0.0], [1.0]]),
        c=np.array([[1.0, 1.0]]),
        name="zero-at-half",
    )


@pytest.fixture
def stable_system():
    """Small stable random-like system with more sensors than sources."""
    rng = np.random.default_rng(11)
    a = rng.normal(0.0, 1.0, size=(4, 4))
    a *= 0.8 / np.max(np.abs(np.linalg.eigvals(a)))
    b = np.vstack([np.eye(3), np.zeros((1, 3))])
    c = rng.normal(0.0, 1.0, size=(4, 4))
    return LtiSystem(a=a, b=b, c=c, name="stable4")


@pytest.fixture
def system_file(tmp_path, decoupled_system):
    """The decoupled system written as a JSON system file."""
    path = tmp_path / "decoupled.json"
    path.write_text(json.dumps({
        "A": decoupled_system.a.tolist(),
        "B": decoupled_system.b.tolist(),
        "C": decoupled_system.c.tolist(),
        "name": "decoupled",
    }))
    return path


@pytest.fixture
def example1_file(tmp_path):
    path = tmp_path / "example1.json"
    path.write_text(json.dumps({"A": [[1, 2], [0, 3]], "B": [[2], [3]], "C": [[1, 0]]}))
    return path
