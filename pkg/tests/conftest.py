import numpy as np
import pytest

from mopn.ndcore import ParamStore


def finite_difference_check(store: ParamStore, loss_fn, step=1e-5, rel=1e-4, abs_tol=1e-8, names=None):
    """Compare ``store.grads`` with central differences of ``loss_fn()``.

    Returns the list of (name, index, analytic, numeric) entries that fail
    ``|a - f| <= abs_tol or |a - f| / max(|a|, |f|) < rel``.
    """
    bad = []
    for name in names or store.names():
        p = store.params[name]
        g = store.grads[name]
        for i in range(p.size):
            old = p.flat[i]
            p.flat[i] = old + step
            up = loss_fn()
            p.flat[i] = old - step
            down = loss_fn()
            p.flat[i] = old
            num = (up - down) / (2 * step)
            ana = g.flat[i]
            diff = abs(ana - num)
            if diff > abs_tol and diff / max(abs(ana), abs(num)) >= rel:
                bad.append((name, i, ana, num))
    return bad


@pytest.fixture
def fd_check():
    return finite_difference_check


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
