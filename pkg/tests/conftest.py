import numpy as np
import pytest

from hybrid_recon.diffcore import Tape, Tensor


def numeric_gradient(fn, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar ``fn`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * step)
    return grad


def tape_gradient(fn, x: np.ndarray) -> np.ndarray:
    t = Tensor(x, requires_grad=True)
    with Tape() as tape:
        loss = fn(t)
    return tape.gradient(loss, [t])[0]


def relative_gap(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30))


def check_gradient(fn, x: np.ndarray, tol: float = 1e-4, step: float = 1e-4) -> float:
    """Relative gap between tape and finite-difference gradients; asserts it is below ``tol``."""
    analytic = tape_gradient(fn, x)
    numeric = numeric_gradient(lambda v: fn(Tensor(v)).item(), x, step)
    gap = relative_gap(analytic, numeric)
    assert gap < tol, f"gradient mismatch {gap:.2e}"
    return gap


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    """Store and print the one-line verdict of an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
