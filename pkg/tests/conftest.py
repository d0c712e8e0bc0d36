import numpy as np
import pytest

from gearnet.data import DomainPairSpec, build_transition_matrix, make_domain_pair

ACCEPTANCE_LINES: list[str] = []


def numerical_grad(f, arr: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``arr`` (perturbed in place)."""
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


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def small_pair():
    spec = DomainPairSpec(n_classes=3, n_features=2, n_source=60, n_target=50, rotation_deg=20, seed=3)
    return make_domain_pair(spec, build_transition_matrix("uniform", 3, 0.2))


@pytest.fixture
def report():
    def add(number: int, ok: bool, text: str):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
