import numpy as np
import pytest

from amattack.data import BINARY, CONTINUOUS, INTERCEPT, RESPONSE, ColumnSchema, Dataset
from amattack.glm import GlmFamily, constrained_target
from amattack.mechanism import MechanismNet
from amattack.remediation import AttackData


def small_problem(seed, family="gaussian", n=10, n_masked=1, hidden=5):
    """Tiny (data, target, net) triple: three correlated features, masked from column 0."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    X[:, 1] += 0.5 * X[:, 0]
    eta = X @ np.array([1.0, -0.5, 0.3]) + 0.2
    if family == "gaussian":
        y = eta + 0.5 * rng.normal(size=n)
    else:
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    schema = ColumnSchema(("a", "b", "c", "y", "intercept"), 3,
                          (CONTINUOUS,) * 3 + (RESPONSE, INTERCEPT), True)
    ds = Dataset(np.column_stack([X, y, np.ones(n)]), schema)
    masked = [0] if n_masked == 1 else [0, 1]
    data = AttackData.from_dataset(ds, masked)
    ridge = 0.0 if family == "gaussian" else 0.1
    target = constrained_target(ds.X, ds.y, GlmFamily(family), 0, ridge=ridge)
    net = MechanismNet.init(data.masked, data.net_input.shape[1], hidden, seed)
    return ds, data, target, net


def regression_dataset(n=200, seed=0, coef=(1.0, -0.5, 0.3)):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, len(coef)))
    y = 1.0 + X @ np.asarray(coef) + 0.5 * rng.normal(size=n)
    names = tuple(f"x{j}" for j in range(len(coef))) + ("y", "intercept")
    kinds = (CONTINUOUS,) * len(coef) + (RESPONSE, INTERCEPT)
    return Dataset(np.column_stack([X, y, np.ones(n)]), ColumnSchema(names, len(coef), kinds, True))


def binary_response_dataset(n=300, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    s = (rng.random(n) < 0.5).astype(float)
    eta = 0.8 * X[:, 0] - 0.6 * X[:, 1] + 0.5 * s
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    schema = ColumnSchema(("u", "v", "s", "y", "intercept"), 3,
                          (CONTINUOUS, CONTINUOUS, BINARY, RESPONSE, INTERCEPT), True)
    return Dataset(np.column_stack([X, s, y, np.ones(n)]), schema)


@pytest.fixture
def reg_ds():
    return regression_dataset()


# (criterion, PASS/FAIL, detail) lines filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
