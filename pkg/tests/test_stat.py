import numpy as np
import pytest

from hdmanova.errors import ValidationError
from hdmanova.model import ContrastMatrix, RegressionData, build_projections
from hdmanova.sim import InnovationDesign, ar1_sigma_sq
from hdmanova.stat import (decompose_null, dichotomy_diagnostics, q_statistic, u_statistic,
                           u_statistic_trace)
from hdmanova.theta import solve_theta

from conftest import gaussian_design, regression_setup


def _one_sample(n):
    data = RegressionData(np.ones((n, 1)), np.zeros((n, 1)))
    proj = build_projections(data, ContrastMatrix([[1.0]]))
    return proj, solve_theta(proj)


def test_zero_input():
    _, proj, ts = regression_setup()
    Z = np.zeros((proj.n, 3))
    assert q_statistic(Z, proj) == 0 and u_statistic(Z, proj, ts) == 0


def test_one_sample_forms():
    rng = np.random.default_rng(0)
    n = 11
    proj, ts = _one_sample(n)
    Y = rng.standard_normal((n, 4))
    assert np.isclose(q_statistic(Y, proj), n * np.sum(Y.mean(axis=0) ** 2))
    G = Y @ Y.T
    assert np.isclose(u_statistic(Y, proj, ts), (G.sum() - np.trace(G)) / n)


def test_q_double_loop():
    rng = np.random.default_rng(1)
    data, proj, _ = regression_setup(n=8, p=3, m=1, d=3, seed=1)
    Y = rng.standard_normal((8, 3))
    total = sum(proj.P[i, j] * Y[i] @ Y[j] for i in range(8) for j in range(8))
    assert np.isclose(q_statistic(Y, proj), total, rtol=1e-10)


def test_subtraction_equals_trace():
    rng = np.random.default_rng(2)
    _, proj, ts = regression_setup(n=10, p=3, m=1, d=4, seed=1)
    Y = rng.standard_normal((10, 4))
    a, b = u_statistic(Y, proj, ts), u_statistic_trace(Y, ts)
    assert abs(a - b) <= 1e-9 * abs(b)


def test_foreign_theta_rejected():
    _, proj, _ = regression_setup(seed=0)
    _, _, ts = regression_setup(seed=1)
    with pytest.raises(ValidationError):
        u_statistic(np.zeros((proj.n, 1)), proj, ts)
    with pytest.raises(ValidationError):
        q_statistic(np.zeros((proj.n + 1, 1)), proj)


def test_decomposition():
    rng = np.random.default_rng(3)
    _, proj, ts = regression_setup(n=30, p=4, m=2, seed=3)
    V = np.zeros((30, 5))
    V[7] = rng.standard_normal(5)
    dec = decompose_null(V, proj)
    assert abs(dec.Q_star) < 1e-14
    assert np.isclose(dec.Q_n, proj.P[7, 7] * V[7] @ V[7])
    for _ in range(200):
        V = rng.standard_normal((30, 5))
        dec = decompose_null(V, proj, ts)
        assert abs(dec.Q_n - dec.D_n - dec.Q_star) < 1e-8 * abs(dec.Q_n)


def test_null_invariance_and_shift():
    rng = np.random.default_rng(4)
    data, proj, ts = regression_setup(n=40, p=5, m=2, d=6, seed=4)
    X = data.X
    V = rng.standard_normal((40, 6))
    B0 = rng.standard_normal((5, 6))
    B0[3:] = 0  # C B0 = 0 for the last-2 contrast
    assert np.isclose(u_statistic(X @ B0 + V, proj, ts), u_statistic(V, proj, ts), rtol=1e-8)
    B1 = rng.standard_normal((5, 6))
    Delta = rng.standard_normal((5, 6))
    Delta[3:] = 0
    a = u_statistic(X @ B1 + V, proj, ts)
    b = u_statistic(X @ (B1 + Delta) + V, proj, ts)
    assert np.isclose(a, b, rtol=1e-8)


def test_mean_zero_under_null_positive_under_alternative():
    rng = np.random.default_rng(5)
    data, proj, ts = regression_setup(n=40, p=5, m=2, d=5, seed=5)
    null = np.array([u_statistic(rng.standard_normal((40, 5)), proj, ts) for _ in range(5000)])
    assert abs(null.mean()) < 3 * null.std(ddof=1) / np.sqrt(null.size)
    B = np.zeros((5, 5))
    B[4] = 0.5
    alt = np.array([u_statistic(data.X @ B + rng.standard_normal((40, 5)), proj, ts)
                    for _ in range(2000)])
    assert alt.mean() > 5 * alt.std(ddof=1) / np.sqrt(alt.size)


def test_dichotomy_identity_gaussian():
    d = 30
    _, proj, _ = regression_setup(n=60, p=6, m=3, seed=6)
    diag = dichotomy_diagnostics(lambda k, rng: rng.standard_normal((k, d)), proj, np.eye(d),
                                 reps=4000, seed=1)
    assert diag.sigma_sq == d
    pii = np.diag(proj.P)
    closed = 2 * np.sum(pii ** 2) / proj.m
    # lambda_sq is linear in the moment estimate; propagate its standard error
    se = diag.moment_e0_se * np.sum(pii ** 2) / (proj.m * d)
    assert abs(diag.lambda_sq - closed) < 3 * se
    assert np.isclose(diag.var_Qstar, 2 * (proj.m - np.sum(pii ** 2)) * d)
    assert diag.delta_q_bound > 0 and diag.M_q > 0 and diag.L_q > 0


def test_dichotomy_example3_moment():
    design = InnovationDesign("example3", 100, 0.3)
    _, proj, _ = regression_setup(n=60, p=6, m=3, seed=7)
    diag = dichotomy_diagnostics(lambda k, rng: design.sample(k, rng), proj, design.sigma(),
                                 reps=20000, seed=2)
    assert abs(diag.moment_e0 - design.moment_e0) < 3 * diag.moment_e0_se
    assert np.isclose(diag.sigma_sq, design.sigma_sq)


def test_dichotomy_argument_checks():
    _, proj, _ = regression_setup()
    f = lambda k, rng: rng.standard_normal((k, 2))  # noqa: E731
    with pytest.raises(ValidationError):
        dichotomy_diagnostics(f, proj, np.eye(2), reps=10)
    with pytest.raises(ValidationError):
        dichotomy_diagnostics(f, proj, np.eye(2), q=4.0)


def test_ar1_sigma_sq_matches_summation():
    d, t = 37, 0.45
    idx = np.arange(d)
    S = t ** np.abs(idx[:, None] - idx[None, :])
    assert np.isclose(ar1_sigma_sq(d, t), np.sum(S * S))
