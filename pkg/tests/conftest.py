import numpy as np
import pytest

from ikdp import tensor as T
from ikdp.tensor import Tensor


def numeric_grad(fn, arr: np.ndarray, h: float = 1e-3, index=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``arr`` (mutated in place)."""
    idx = list(np.ndindex(arr.shape)) if index is None else index
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        old = arr[i]
        arr[i] = old + h
        up = fn()
        arr[i] = old - h
        down = fn()
        arr[i] = old
        out[k] = (up - down) / (2 * h)
    return out


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel()
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def check_op_grad(build, *shapes, seed=0, h=1e-3):
    """Largest relative error between tape and finite-difference gradients of ``sum(w * build(*xs))``."""
    rng = np.random.default_rng(seed)
    with T.precision(np.float64):
        xs = [Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
        probe = None

        def value():
            with T.no_grad():
                y = build(*xs)
            return float(np.sum(probe * y.data))

        y = build(*xs)
        probe = rng.normal(size=y.shape)
        T.backward(T.sum_(T.mul(y, Tensor(probe))))
        worst = 0.0
        for x in xs:
            worst = max(worst, rel_err(x.grad, numeric_grad(value, x.data, h)))
    return worst


@pytest.fixture(autouse=True)
def _fresh_tape():
    T.clear_tape()
    yield
    T.clear_tape()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
