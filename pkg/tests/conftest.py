import numpy as np
import pytest

from radarcorr import diffcore as dc


def weighted_sum(t, w):
    """Scalar sum(t * w) built from engine ops, so every element gets a distinct weight."""
    return dc.reshape(dc.matmul(dc.reshape(t, (1, -1)), np.asarray(w).reshape(-1, 1)), ())


def check_grads(fn, arrays, seed=0, h=1e-5, rtol=1e-4, atol=1e-6):
    """Compare analytic gradients of sum(fn(*tensors) * w) against central differences."""
    tensors = [dc.Tensor(a.copy()) for a in arrays]
    out = fn(*tensors)
    w = np.random.default_rng(seed).normal(size=out.shape)
    loss = weighted_sum(out, w)
    dc.backward(loss)
    failures = []
    for k, t in enumerate(tensors):
        def f():
            return weighted_sum(fn(*tensors), w).data
        num = dc.numeric_grad(f, t.data, h)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not dc.grad_close(ana, num, rtol, atol):
            failures.append((k, float(np.abs(ana - num).max())))
    return failures


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one pass/fail line per criterion in the terminal summary

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
