import numpy as np
import pytest

from pii_unlearn.model import ModelConfig, Parameters, init_model


def as64(params: Parameters) -> Parameters:
    return params.astype(np.float64)


def central_diff(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f()`` with respect to ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30))


@pytest.fixture
def tiny_cfg():
    return ModelConfig(d_model=16, n_layers=2, n_heads=2, context_length=32, seed=7)


@pytest.fixture
def tiny_model(tiny_cfg):
    return init_model(tiny_cfg)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion: ``criterion(n, ok, detail)``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
