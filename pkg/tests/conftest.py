import numpy as np
import pytest

from hdmanova.model import ContrastMatrix, RegressionData, build_projections
from hdmanova.theta import solve_theta


def gaussian_design(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    return np.hstack([np.ones((n, 1)), rng.standard_normal((n, p - 1))])


def oneway_design(sizes) -> tuple[np.ndarray, np.ndarray]:
    labels = np.repeat(np.arange(len(sizes)), sizes)
    return np.eye(len(sizes))[labels], labels


def regression_setup(n=40, p=5, m=2, d=7, seed=0):
    rng = np.random.default_rng(seed)
    X = gaussian_design(n, p, rng)
    Y = rng.standard_normal((n, d))
    data = RegressionData(X, Y)
    proj = build_projections(data, ContrastMatrix.last_k(p, m))
    return data, proj, solve_theta(proj)


@pytest.fixture
def setup():
    return regression_setup()


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE: dict = {}


def record(criterion: int, part: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name + ': ' if name else ''}{'pass' if p else 'FAIL'} ({d})"
                           for name, p, d in parts)
        tr.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
