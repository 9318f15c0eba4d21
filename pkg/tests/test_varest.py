import numpy as np
import pytest

from hdmanova.errors import InfeasibleError, ValidationError
from hdmanova.model import RegressionData
from hdmanova.sim import ar1_rows, ar1_sigma_sq
from hdmanova.varest import (SplitPlan, oracle_estimator, split_estimator, split_plan,
                             srivastava_bias, srivastava_estimator)

from conftest import gaussian_design

N, P, D, THETA = 100, 20, 200, 0.3


@pytest.fixture(scope="module")
def design():
    return gaussian_design(N, P, np.random.default_rng(0))


def test_rank_one_gram_product():
    h = 6
    A, Ac = np.arange(h), np.arange(h, 2 * h)
    plan = SplitPlan(halves=((A, Ac),), projectors=((np.eye(h), np.eye(h)),), dropped=(),
                     h=h, p=1, seed=0)
    r = np.array([1.0, -2.0, 0.5])
    Y = np.zeros((2 * h, 3))
    Y[2] = r
    Y[h + 4] = r
    assert np.isclose(plan.estimate_each(Y)[0], (r @ r) ** 2 / (h - 1) ** 2)


def test_gram_trick_identity(design):
    rng = np.random.default_rng(1)
    Y = rng.standard_normal((N, 30))
    plan = split_plan(design, 1, seed=3)
    (A, Ac), (MA, MAc) = plan.halves[0], plan.projectors[0]
    RA, RAc = MA @ Y[A], MAc @ Y[Ac]
    direct = np.trace(RA.T @ RA @ RAc.T @ RAc) / plan.dof ** 2
    assert np.isclose(plan.estimate_each(Y)[0], direct, rtol=1e-8)


def test_split_plan_properties(design):
    plan = split_plan(design, 4, seed=7)
    for A, Ac in plan.halves:
        assert len(A) == len(Ac) == N // 2
        assert not set(A) & set(Ac)
    again = split_plan(design, 4, seed=7)
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(plan.halves, again.halves))
    odd = split_plan(design[:99], 3, seed=1)
    assert len(odd.dropped) == 3
    for (A, Ac), k in zip(odd.halves, odd.dropped):
        assert k not in A and k not in Ac
    with pytest.raises(InfeasibleError):
        split_plan(design[:40], 2)
    with pytest.raises(ValidationError):
        split_plan(design, 0)


def test_within_half_relabelling(design):
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((N, 10))
    plan = split_plan(design, 1, seed=5)
    A, Ac = plan.halves[0]
    perm = np.arange(N)
    perm[A] = rng.permutation(A)
    perm[Ac] = rng.permutation(Ac)
    shuffled = split_plan(design[perm], 1, seed=5)
    # the same membership after relabelling rows within each half
    assert np.array_equal(np.sort(perm[shuffled.halves[0][0]]), A)
    a = plan.estimate_each(Y)[0]
    b = shuffled.estimate_each(Y[perm])[0]
    assert np.isclose(a, b, rtol=1e-10)


def test_split_unbiased_ar1(design):
    rng = np.random.default_rng(3)
    truth = ar1_sigma_sq(D, THETA)
    est = [split_estimator(RegressionData(design, ar1_rows(N, D, THETA, rng)), 10, seed=s).value
           for s in range(200)]
    assert abs(np.mean(est) / truth - 1) < 0.05


def test_oracle_pair_and_identity():
    V = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert np.isclose(oracle_estimator(V).value, 1.0)
    rng = np.random.default_rng(4)
    d = 50
    vals = np.array([oracle_estimator(rng.standard_normal((30, d))).value for _ in range(1000)])
    assert abs(vals.mean() - d) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)
    with pytest.raises(ValidationError):
        oracle_estimator(np.ones((1, 3)))


def test_split_tracks_oracle(design):
    rng = np.random.default_rng(5)
    close = 0
    for s in range(200):
        V = ar1_rows(N, D, THETA, rng)
        a = split_estimator(RegressionData(design, V), 10, seed=s).sd
        o = oracle_estimator(V).sd
        close += abs(a / o - 1) < 0.10
    assert close >= 190


def test_srivastava_cases(design):
    assert srivastava_estimator(np.zeros((N, 5)), N, P).raw == 0
    rng = np.random.default_rng(6)
    Q, _ = np.linalg.qr(design)
    truth = ar1_sigma_sq(D, THETA)
    vals = []
    for _ in range(200):
        V = ar1_rows(N, D, THETA, rng)
        vals.append(srivastava_estimator(V - Q @ (Q.T @ V), N, P).value)
    assert abs(np.mean(vals) / truth - 1) < 0.05
    with pytest.raises(ValidationError):
        srivastava_estimator(np.zeros((5, 2)), 5, 4)


def test_srivastava_bias_formula():
    diag = np.full(10, 0.8)
    assert srivastava_bias(2 * 7.0, 7.0, diag, 10, 2) == 0
    low = srivastava_bias((18 + 100) * 50.0, 50.0, diag, 10, 2)
    high = srivastava_bias((18 + 200) * 50.0, 50.0, diag, 10, 2)
    assert 0 < low < high


def test_clamp_keeps_raw():
    # the Gram form is a squared norm, so the only clamped case is an exact zero
    X = gaussian_design(24, 2, np.random.default_rng(8))
    est = split_estimator(RegressionData(X, np.zeros((24, 3))), 2, seed=1)
    assert est.raw == 0 and est.value == pytest.approx(3e-12) and est.sd > 0


def test_relative_rmse_shrinks_with_n():
    rng = np.random.default_rng(9)
    d, truth = 100, ar1_sigma_sq(100, THETA)
    rmse = []
    for n in (60, 100, 200):
        X = gaussian_design(n, 5, rng)
        err = [split_estimator(RegressionData(X, ar1_rows(n, d, THETA, rng)), 5, seed=s).value / truth - 1
               for s in range(150)]
        rmse.append(np.sqrt(np.mean(np.square(err))))
    assert rmse[0] > rmse[1] > rmse[2]
