import numpy as np
import pytest

from mindread.tensor import Tensor


def numeric_grad(f, arrays, h=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. every array in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f()
            a[i] = old - h
            down = f()
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    """Relative error ||a - n|| / max(||a|| + ||n||, 1e-12) over a whole group."""
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return num / den


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def leaf(a):
    return Tensor(a, requires_grad=True)


# acceptance criteria append (number, passed, detail) here
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
