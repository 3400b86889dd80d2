import numpy as np
import pytest

from trajoutlier.numerics import Tensor
from trajoutlier.numerics.gradcheck import numerical_grad, rel_error


def grad_errors(build, arrays, h=1e-5):
    """Relative error between autodiff and central differences for each array.

    ``build`` maps a list of Tensors (wrapping ``arrays``) to a scalar Tensor.
    """
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    build(leaves).backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    live = [np.array(a, dtype=np.float64) for a in arrays]
    numeric = numerical_grad(lambda: build([Tensor(a) for a in live]).item(), live, h)
    return [rel_error(a, n) for a, n in zip(analytic, numeric)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, summary line), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {line}")
