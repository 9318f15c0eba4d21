import math

import numpy as np
import pytest
from scipy import linalg

from hdmanova.errors import LoadError, SingularityError, ValidationError
from hdmanova.model import (ContrastMatrix, RegressionData, build_projections, fit_constrained,
                            fit_full, gaussian_leverage_bound, leverage_report, load_csv)

from conftest import gaussian_design, oneway_design


def _write(path, rows):
    path.write_text("\n".join(",".join(str(c) for c in r) for r in rows) + "\n")
    return path


class TestLoadCsv:
    def test_shapes(self, tmp_path):
        X = _write(tmp_path / "x.csv", [["a", "b"], [1, 0], [1, 1], [1, 3]])
        Y = _write(tmp_path / "y.csv", [[1, 2], [3, 4], [5, 7]])
        data = load_csv(X, Y)
        assert (data.n, data.p, data.d) == (3, 2, 2)

    def test_intercept_flag(self, tmp_path):
        X = _write(tmp_path / "x.csv", [[0], [1], [3]])
        Y = _write(tmp_path / "y.csv", [[1], [3], [5]])
        data = load_csv(X, Y, intercept=True)
        assert data.p == 2 and np.all(data.X[:, 0] == 1)

    def test_duplicated_column_is_rank_deficient(self, tmp_path):
        X = _write(tmp_path / "x.csv", [[1, 1], [2, 2], [3, 3], [4, 4]])
        Y = _write(tmp_path / "y.csv", [[1], [2], [3], [5]])
        with pytest.raises(LoadError, match="rank deficient"):
            load_csv(X, Y)

    def test_nan_cell_located(self, tmp_path):
        X = _write(tmp_path / "x.csv", [["x"], [1], [2], [4]])
        Y = _write(tmp_path / "y.csv", [["u", "v"], [1, 2], [3, "NaN"], [4, 4]])
        with pytest.raises(LoadError) as info:
            load_csv(X, Y)
        assert (info.value.row, info.value.column) == (3, 2)

    def test_ragged_and_text(self, tmp_path):
        X = _write(tmp_path / "x.csv", [[1], [2], [4]])
        Y = _write(tmp_path / "y.csv", [[1, 2], [3], [4, 4]])
        with pytest.raises(LoadError, match="ragged") as info:
            load_csv(X, Y)
        assert info.value.row == 2
        Y2 = _write(tmp_path / "y2.csv", [[1, 2], [3, 1], [4, "oops"]])
        with pytest.raises(LoadError, match="non-numeric"):
            load_csv(X, Y2)

    def test_missing_file_and_row_mismatch(self, tmp_path):
        X = _write(tmp_path / "x.csv", [[1], [2], [4]])
        with pytest.raises(LoadError):
            load_csv(X, tmp_path / "absent.csv")
        Y = _write(tmp_path / "y.csv", [[1], [2]])
        with pytest.raises(LoadError, match="rows"):
            load_csv(X, Y)


class TestTypes:
    def test_regression_data_checks(self):
        with pytest.raises(ValidationError):
            RegressionData(np.ones((3, 3)), np.ones((3, 1)))
        with pytest.raises(ValidationError):
            RegressionData(np.ones((4, 1)), np.ones((3, 1)))
        with pytest.raises(SingularityError):
            RegressionData(np.ones((5, 2)), np.ones((5, 1)))

    def test_contrast_rank(self):
        with pytest.raises(ValidationError):
            ContrastMatrix([[1, 0, 0], [2, 0, 0]])
        C = ContrastMatrix.last_k(5, 2)
        assert C.m == 2 and np.array_equal(C.C[:, 3:], np.eye(2))
        assert np.all(C.C[:, :3] == 0)

    def test_contrast_parse(self, tmp_path):
        assert ContrastMatrix.parse("last-3", 6).m == 3
        path = _write(tmp_path / "c.csv", [[0, 1, -1]])
        assert ContrastMatrix.parse(str(path), 3).m == 1
        with pytest.raises(ValidationError):
            ContrastMatrix.parse(str(path), 4)
        with pytest.raises(ValidationError):
            ContrastMatrix.parse("last-x", 4)


def _random_case(seed, n=30, p=6, m=3, d=4):
    rng = np.random.default_rng(seed)
    X = gaussian_design(n, p, rng)
    C = rng.standard_normal((m, p))
    data = RegressionData(X, rng.standard_normal((n, d)))
    return data, ContrastMatrix(C), build_projections(data, ContrastMatrix(C))


class TestProjections:
    @pytest.mark.parametrize("seed", range(5))
    def test_invariants(self, seed):
        data, C, proj = _random_case(seed)
        P, P0 = proj.P, proj.P0
        hat = data.X @ np.linalg.solve(data.X.T @ data.X, data.X.T)
        assert np.linalg.norm(P @ P - P) < 1e-8
        assert np.linalg.norm(P0 @ P0 - P0) < 1e-8
        assert np.linalg.norm(P @ P0) < 1e-8
        assert abs(np.trace(P) - C.m) < 1e-10
        assert abs(np.trace(P0) - (data.p - C.m)) < 1e-10
        assert abs(np.trace(proj.Pbar1) - (data.n - data.p)) < 1e-10
        assert np.allclose(P + P0, hat, atol=1e-10)
        lev = np.diag(hat)
        assert np.all(np.maximum(np.diag(P), np.diag(P0)) <= lev + 1e-12)

    def test_matches_textbook_formula(self):
        data, C, proj = _random_case(11)
        X, Cm = data.X, C.C
        G = np.linalg.inv(X.T @ X)
        P = X @ G @ Cm.T @ np.linalg.inv(Cm @ G @ Cm.T) @ Cm @ G @ X.T
        assert np.allclose(proj.P, P, atol=1e-10)

    def test_one_sample(self):
        n = 9
        data = RegressionData(np.ones((n, 1)), np.arange(n * 2.0).reshape(n, 2))
        proj = build_projections(data, ContrastMatrix([[1.0]]))
        assert np.allclose(proj.P, 1.0 / n)
        assert np.allclose(proj.P0, 0.0)

    def test_two_group_entries(self):
        n1 = n2 = 3
        X, _ = oneway_design([n1, n2])
        data = RegressionData(X, np.zeros((6, 1)))
        proj = build_projections(data, ContrastMatrix([[1.0, -1.0]]))
        n = n1 + n2
        # projection onto c = (1/n1, ..., -1/n2, ...)
        c = np.r_[np.full(n1, 1 / n1), np.full(n2, -1 / n2)]
        assert np.allclose(proj.P, np.outer(c, c) / (c @ c))
        assert np.isclose(proj.P[0, 1], n2 / (n1 * n))
        assert np.isclose(proj.P[0, n1], -1 / n)

    def test_near_collinear_design_rejected(self):
        X = np.array([[1.0, 0.0], [1.0, 1e-7], [1.0, 2e-7]])
        with pytest.raises(SingularityError):
            RegressionData(X, np.zeros((3, 1)))


class TestFits:
    def test_constrained_matches_nullspace_solver(self):
        rng = np.random.default_rng(3)
        X = gaussian_design(6, 2, rng)
        Y = rng.standard_normal((6, 3))
        C = np.array([[0.0, 1.0]])
        data = RegressionData(X, Y)
        proj = build_projections(data, ContrastMatrix(C))
        # reparameterize B = N G with N spanning null(C)
        N = linalg.null_space(C)
        Gm, *_ = np.linalg.lstsq(X @ N, Y, rcond=None)
        assert np.allclose(fit_constrained(data, proj), Y - X @ N @ Gm, atol=1e-8)

    def test_constrained_identities(self):
        rng = np.random.default_rng(4)
        n = 7
        data = RegressionData(np.ones((n, 1)), rng.standard_normal((n, 2)))
        proj = build_projections(data, ContrastMatrix([[1.0]]))
        assert np.allclose(fit_constrained(data, proj), data.Y)
        data, C, proj = _random_case(5)
        R = fit_constrained(data, proj)
        assert np.allclose(proj.P @ R, proj.P @ data.Y, atol=1e-10)
        assert np.allclose(proj.Pbar0 @ R, R, atol=1e-10)

    def test_full_fit(self):
        rng = np.random.default_rng(6)
        X = gaussian_design(6, 2, rng)
        data = RegressionData(X, rng.standard_normal((6, 3)))
        Vhat, S = fit_full(data)
        assert np.allclose(X.T @ Vhat, 0, atol=1e-10)
        assert np.allclose(S, S.T) and np.linalg.eigvalsh(S).min() > -1e-12
        exact = RegressionData(X, X @ rng.standard_normal((2, 3)))
        Vhat, S = fit_full(exact)
        assert np.allclose(Vhat, 0, atol=1e-12) and np.allclose(S, 0, atol=1e-12)

    def test_covariance_unbiased_ar1(self):
        from hdmanova.sim import ar1_rows
        rng = np.random.default_rng(7)
        n, p, d, theta = 200, 5, 50, 0.3
        X = gaussian_design(n, p, rng)
        acc = np.zeros(d)
        for _ in range(500):
            _, S = fit_full(RegressionData(X, ar1_rows(n, d, theta, rng)))
            acc += np.diag(S)
        assert np.all(np.abs(acc / 500 - 1.0) < 0.02)


class TestLeverage:
    def test_one_sample_ratio(self):
        n = 12
        data = RegressionData(np.ones((n, 1)), np.zeros((n, 1)))
        rep = leverage_report(data, build_projections(data, ContrastMatrix([[1.0]])))
        assert math.isclose(rep.p_diag_sq_ratio, 1 / n)

    def test_balanced_oneway(self):
        sizes = [5, 5, 5, 5]
        X, _ = oneway_design(sizes)
        data = RegressionData(X, np.zeros((20, 1)))
        C = np.hstack([np.ones((3, 1)), -np.eye(3)])
        rep = leverage_report(data, build_projections(data, ContrastMatrix(C)))
        assert rep.max_p_diag <= 1 / 5 + 1e-12

    def test_gaussian_bound(self):
        ln = math.log(100)
        expect = (180 + 18 * math.sqrt(40 * ln) + 36 * ln) / 100
        assert math.isclose(gaussian_leverage_bound(100, 20), expect)

    def test_varpi_range(self):
        data, C, proj = _random_case(1)
        with pytest.raises(ValidationError):
            leverage_report(data, proj, varpi0=0.5)
