import numpy as np
import pytest

from censorseg.gradcore import Tensor


def numeric_grad(f, arrays, h=1e-4):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(build, arrays):
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*ts).backward()
    return [t.grad for t in ts]


def max_rel_err(build, arrays, rtol=1e-4, atol=1e-8):
    """Largest elementwise relative error between backward and central differences."""
    num = numeric_grad(lambda *xs: build(*[Tensor(x) for x in xs]).item(), [a.copy() for a in arrays])
    ana = analytic_grad(build, arrays)
    worst = 0.0
    for n, a in zip(num, ana):
        err = np.abs(n - a) / np.maximum(np.maximum(np.abs(n), np.abs(a)), atol / rtol)
        worst = max(worst, float(err.max()))
    return worst


def assert_grad_close(build, arrays, rtol=1e-4, atol=1e-8):
    """Backward vs central differences, elementwise relative error <= rtol."""
    worst = max_rel_err(build, arrays, rtol, atol)
    assert worst <= rtol, f"max rel err {worst:.3g}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def acceptance(request):
    """``acceptance(label, ok, detail)`` records one PASS/FAIL line and returns ``ok``."""

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail}"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
