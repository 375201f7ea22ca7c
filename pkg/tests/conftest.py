import numpy as np
import pytest

from lassl.numeric import autodiff as ad
from lassl.numeric.network import ParamSet, forward, init_params
from lassl.ssl import infonce_var


def central_difference(f, params: ParamSet, h: float = 1e-6) -> dict[str, np.ndarray]:
    """Finite-difference gradient of scalar ``f(params)`` over every entry."""
    out = {}
    for name, arr in params.arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(params)
            flat[i] = old - h
            down = f(params)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def relative_error(a: dict, b: dict) -> float:
    va = np.concatenate([a[k].ravel() for k in sorted(a)])
    vb = np.concatenate([b[k].ravel() for k in sorted(b)])
    scale = max(np.linalg.norm(va), np.linalg.norm(vb), 1e-300)
    return float(np.linalg.norm(va - vb) / scale)


def composite_loss(params, x1, x2, tau=0.5, record=False, symmetrize=False):
    b = x1.shape[0]
    _, proj = forward(params, np.vstack([x1, x2]), record_tape=True)
    loss = infonce_var(ad.take_rows(proj, 0, b), ad.take_rows(proj, b, 2 * b), tau, symmetrize)
    return loss if record else float(loss.value)


@pytest.fixture
def small_net():
    return init_params((5, 6, 4), (4, 4, 3), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
