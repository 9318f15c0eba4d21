"""Regression data, contrasts, projection matrices and leverage diagnostics.

The model is ``Y = X B + V`` with ``X`` of shape ``(n, p)`` and ``Y`` of
shape ``(n, d)``; the hypothesis is ``C B = 0`` for a full-row-rank
contrast ``C`` of shape ``(m, p)``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import LoadError, SingularityError, ValidationError

COND_LIMIT = 1e12
PROJ_TOL = 1e-8
TRACE_TOL = 1e-10


def _check_condition(A: np.ndarray, what: str) -> float:
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularityError(f"{what} is numerically singular (condition number {cond:.3g})", cond)
    return cond


def _spd_inverse(A: np.ndarray, what: str) -> np.ndarray:
    _check_condition(A, what)
    lu, piv = linalg.lu_factor(A)
    inv = linalg.lu_solve((lu, piv), np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def _orth(A: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(A)
    return q


@dataclass(frozen=True)
class RegressionData:
    """Design ``X`` (n x p) and responses ``Y`` (n x d)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2:
            raise ValidationError("X and Y must be 2-d arrays")
        if X.shape[0] != Y.shape[0]:
            raise ValidationError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        n, p = X.shape
        if not n > p >= 1:
            raise ValidationError(f"need n > p >= 1, got n={n}, p={p}")
        for name, A in (("X", X), ("Y", Y)):
            bad = np.argwhere(~np.isfinite(A))
            if bad.size:
                i, j = bad[0]
                raise LoadError(f"non-finite value in {name}", row=int(i) + 1, column=int(j) + 1)
        _check_condition(X.T @ X, "X^T X")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.Y.shape[1]

    def with_response(self, Y: np.ndarray) -> "RegressionData":
        return RegressionData(self.X, Y)


@dataclass(frozen=True)
class ContrastMatrix:
    """Full-row-rank ``C`` (m x p) encoding ``H0: C B = 0``."""

    C: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim == 1:
            C = C[None, :]
        if C.ndim != 2 or C.shape[0] < 1:
            raise ValidationError("contrast must be a non-empty 2-d array")
        if not np.all(np.isfinite(C)):
            raise ValidationError("contrast contains non-finite entries")
        m, p = C.shape
        if m > p:
            raise ValidationError(f"contrast has m={m} rows but only p={p} columns")
        s = np.linalg.svd(C, compute_uv=False)
        if s[-1] <= s[0] * 1e-10:
            raise ValidationError(f"contrast is rank deficient (numerical rank < {m})")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    @classmethod
    def last_k(cls, p: int, k: int) -> "ContrastMatrix":
        """``C = [0 | I_k]``: test that the last ``k`` coefficient rows vanish."""
        if not 1 <= k <= p:
            raise ValidationError(f"last-k needs 1 <= k <= p, got k={k}, p={p}")
        return cls(np.hstack([np.zeros((k, p - k)), np.eye(k)]))

    @classmethod
    def parse(cls, spec: str, p: int) -> "ContrastMatrix":
        """Accept ``"last-k"`` shorthand or a path to an m x p CSV."""
        spec = spec.strip()
        if spec.startswith("last-"):
            try:
                k = int(spec[5:])
            except ValueError:
                raise ValidationError(f"bad contrast shorthand {spec!r}") from None
            return cls.last_k(p, k)
        C = read_matrix(spec)
        if C.shape[1] != p:
            raise ValidationError(f"contrast has {C.shape[1]} columns, design has {p}")
        return cls(C)


@dataclass(frozen=True, eq=False)
class ProjectionSet:
    """Projection matrices for a design/contrast pair.

    ``P`` projects onto the column space of ``X (X'X)^-1 C'``, ``P0`` is
    the null-model hat matrix ``H - P``, ``Pbar0 = I - P0`` and
    ``Pbar1 = I - H``.  ``hat`` holds the leverages ``diag(H)``.
    """

    P: np.ndarray
    P0: np.ndarray
    Pbar0: np.ndarray
    Pbar1: np.ndarray
    hat: np.ndarray
    m: int
    p: int
    fingerprint: str = field(repr=False)

    @property
    def n(self) -> int:
        return self.P.shape[0]


def build_projections(data: RegressionData, contrast: ContrastMatrix) -> ProjectionSet:
    """Construct ``P = X(X'X)^-1 C' {C(X'X)^-1 C'}^-1 C(X'X)^-1 X'`` and friends.

    Invariants (idempotency, orthogonality of P and P0, traces) are
    verified once here.
    """
    X = data.X
    n, p = X.shape
    if contrast.p != p:
        raise ValidationError(f"contrast has {contrast.p} columns, design has {p}")
    m = contrast.m
    XtX_inv = _spd_inverse(X.T @ X, "X^T X")
    A = X @ XtX_inv @ contrast.C.T
    _check_condition(contrast.C @ XtX_inv @ contrast.C.T, "C (X^T X)^-1 C^T")
    # orthonormal bases give the same projectors with better rounding
    QA = _orth(A)
    QX = _orth(X)
    P = QA @ QA.T
    H = QX @ QX.T
    P = 0.5 * (P + P.T)
    H = 0.5 * (H + H.T)
    P0 = H - P
    eye = np.eye(n)
    Pbar0 = eye - P0
    Pbar1 = eye - H

    if np.linalg.norm(P @ P - P) > PROJ_TOL or np.linalg.norm(P0 @ P0 - P0) > PROJ_TOL:
        raise SingularityError("projection matrices are not idempotent to tolerance")
    if np.linalg.norm(P @ P0) > PROJ_TOL:
        raise SingularityError("P and P0 are not orthogonal to tolerance")
    if abs(np.trace(P) - m) > TRACE_TOL * max(1, m) or abs(np.trace(P0) - (p - m)) > 1e-8:
        raise SingularityError("projection traces disagree with the contrast rank")

    for M in (P, P0, Pbar0, Pbar1):
        M.setflags(write=False)
    hat = np.diag(H).copy()
    hat.setflags(write=False)
    fp = hashlib.blake2b(np.ascontiguousarray(P).tobytes(), digest_size=12).hexdigest()
    return ProjectionSet(P=P, P0=P0, Pbar0=Pbar0, Pbar1=Pbar1, hat=hat, m=m, p=p, fingerprint=fp)


def fit_constrained(data: RegressionData, proj: ProjectionSet) -> np.ndarray:
    """Residuals of the null-constrained least-squares fit, ``(I - P0) Y``."""
    return proj.Pbar0 @ data.Y


def fit_full(data: RegressionData) -> tuple[np.ndarray, np.ndarray]:
    """Unconstrained residuals ``Vhat = Pbar1 Y`` and ``Sigma_hat = Vhat'Vhat/(n-p)``."""
    Vhat = residuals(data.X, data.Y)
    S = Vhat.T @ Vhat / (data.n - data.p)
    return Vhat, 0.5 * (S + S.T)


def residuals(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    Q = _orth(X)
    return Y - Q @ (Q.T @ Y)


def gaussian_leverage_bound(n: int, p: int) -> float:
    """High-probability bound on the maximum leverage of a Gaussian design."""
    ln = math.log(n)
    return (9 * p + 18 * math.sqrt(2 * p * ln) + 36 * ln) / n


@dataclass(frozen=True)
class LeverageReport:
    max_p0_diag: float
    max_p_diag: float
    max_leverage: float
    p_diag_sq_ratio: float
    zeta: float
    varpi0: float
    varpi1: float
    cond_null_leverage: bool
    cond_design: bool
    gaussian_bound: float

    def to_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in self.__dict__.items()}


def leverage_report(data: RegressionData, proj: ProjectionSet,
                    varpi0: float = 0.49, varpi1: float = 0.49) -> LeverageReport:
    """Leverage diagnostics behind the weight-system existence conditions.

    ``cond_null_leverage`` is ``max P0_ii <= varpi0``; ``cond_design`` is
    the stronger ``max h_ii <= min(varpi0, zeta * varpi1)`` with
    ``zeta = (1 - 2 varpi0)(1 - varpi0)``.
    """
    if not (0 < varpi0 < 0.5 and 0 < varpi1 < 0.5):
        raise ValidationError("varpi0 and varpi1 must lie in (0, 1/2)")
    pii = np.diag(proj.P)
    p0 = np.diag(proj.P0)
    zeta = (1 - 2 * varpi0) * (1 - varpi0)
    max_h = float(proj.hat.max())
    return LeverageReport(
        max_p0_diag=float(p0.max()),
        max_p_diag=float(pii.max()),
        max_leverage=max_h,
        p_diag_sq_ratio=float(np.sum(pii ** 2) / proj.m),
        zeta=zeta,
        varpi0=varpi0,
        varpi1=varpi1,
        cond_null_leverage=bool(p0.max() <= varpi0),
        cond_design=bool(max_h <= min(varpi0, zeta * varpi1)),
        gaussian_bound=gaussian_leverage_bound(data.n, data.p),
    )


# -- CSV ingestion ---------------------------------------------------------

def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_table(path: str | Path) -> tuple[list[str] | None, list[list[str]]]:
    """Raw CSV cells; the first row is a header iff any cell is non-numeric."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise LoadError(f"cannot read file: {exc.strerror}", path=str(path)) from None
    if not rows:
        raise LoadError("file is empty", path=str(path))
    header = None
    if not all(_is_number(c.strip()) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise LoadError("file has a header but no data", path=str(path))
    return header, rows


def _to_matrix(rows: list[list[str]], path: str, first_row: int) -> np.ndarray:
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise LoadError(f"ragged row: expected {width} cells, found {len(r)}",
                            path=path, row=i + first_row)
        for j, cell in enumerate(r):
            try:
                v = float(cell.strip())
            except ValueError:
                raise LoadError(f"non-numeric cell {cell.strip()!r}", path=path,
                                row=i + first_row, column=j + 1) from None
            if not math.isfinite(v):
                raise LoadError(f"non-finite cell {cell.strip()!r}", path=path,
                                row=i + first_row, column=j + 1)
            out[i, j] = v
    return out


def read_matrix(path: str | Path) -> np.ndarray:
    header, rows = read_table(path)
    return _to_matrix(rows, str(path), 2 if header else 1)


def load_csv(design_path: str | Path, response_path: str | Path,
             intercept: bool = False) -> RegressionData:
    """Read a design and a response CSV into validated :class:`RegressionData`.

    Row/column positions in errors are 1-based and count the header line.
    With ``intercept=True`` a column of ones is prepended to the design.
    """
    X = read_matrix(design_path)
    Y = read_matrix(response_path)
    if X.shape[0] != Y.shape[0]:
        raise LoadError(f"design has {X.shape[0]} rows, response has {Y.shape[0]}",
                        path=str(response_path))
    if intercept:
        X = np.hstack([np.ones((X.shape[0], 1)), X])
    try:
        return RegressionData(X, Y)
    except SingularityError as exc:
        raise LoadError(f"design is rank deficient: {exc}", path=str(design_path)) from None
