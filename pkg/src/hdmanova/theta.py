"""Diagonal-cancelling weights and the zero-diagonal kernel matrix.

The weights solve ``(Pbar0 o Pbar0) theta = diag(P)`` (``o`` is the
Hadamard product).  With them, ``P_theta = P - Pbar0 D_theta Pbar0`` has
an exactly zero diagonal, so the modified statistic is a pure
off-diagonal (U-type) quadratic form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DominanceError, NumericError, ValidationError
from .model import ProjectionSet

DIRECT_MAX_N = 2000
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ThetaSystem:
    theta: np.ndarray
    P_theta: np.ndarray
    frob_sq: float
    m: int
    residual: float
    fingerprint: str = field(repr=False)

    @property
    def frob(self) -> float:
        return float(np.sqrt(self.frob_sq))

    @property
    def n(self) -> int:
        return self.theta.shape[0]


def jacobi_solve(A: np.ndarray, b: np.ndarray, tol: float = 1e-12,
                 max_sweeps: int = 10_000) -> np.ndarray:
    """Jacobi iteration; converges for strictly diagonally dominant ``A``."""
    diag = np.diag(A).copy()
    if np.any(diag == 0):
        raise NumericError("Jacobi iteration needs a non-zero diagonal")
    x = b / diag
    for _ in range(max_sweeps):
        r = b - A @ x
        if np.max(np.abs(r)) < tol:
            return x
        x = x + r / diag
    raise NumericError(f"Jacobi iteration did not reach tolerance {tol} in {max_sweeps} sweeps")


def solve_theta(proj: ProjectionSet, varpi0: float = 0.49, varpi1: float = 0.49,
                method: str = "auto") -> ThetaSystem:
    """Solve the weight system and assemble ``P_theta``.

    Parameters
    ----------
    proj : ProjectionSet
    varpi0 : float
        Leverage bound in (0, 1/2); ``max_i P0_ii <= varpi0`` is required
        and guarantees strict diagonal dominance.
    varpi1 : float
        Second constant in (0, 1/2); when ``max_i P_ii <= zeta * varpi1``
        the solution satisfies ``max |theta_i| <= varpi1``, which is checked.
    method : {"auto", "direct", "jacobi"}
        ``auto`` uses a pivoted LU solve up to n = 2000 and Jacobi above.

    Raises
    ------
    DominanceError
        If the null-model leverage bound fails (reports the offending index).
    NumericError
        If a post-condition on the solution fails.
    """
    if not (0 < varpi0 < 0.5 and 0 < varpi1 < 0.5):
        raise ValidationError("varpi0 and varpi1 must lie in (0, 1/2)")
    p0 = np.diag(proj.P0)
    worst = int(np.argmax(p0))
    if p0[worst] > varpi0:
        raise DominanceError(worst, float(p0[worst]), varpi0)

    n = proj.n
    A = proj.Pbar0 * proj.Pbar0
    pii = np.diag(proj.P).copy()
    if method == "auto":
        method = "direct" if n <= DIRECT_MAX_N else "jacobi"
    if method == "direct":
        theta = linalg.solve(A, pii, assume_a="sym")
    elif method == "jacobi":
        theta = jacobi_solve(A, pii)
    else:
        raise ValidationError(f"unknown solver {method!r}")
    residual = float(np.max(np.abs(A @ theta - pii)))
    if residual >= RESIDUAL_TOL:
        raise NumericError(f"weight system residual {residual:.3g} exceeds {RESIDUAL_TOL}")

    P_theta = proj.P - (proj.Pbar0 * theta) @ proj.Pbar0
    P_theta = 0.5 * (P_theta + P_theta.T)
    d = np.abs(np.diag(P_theta)).max()
    if d >= 1e-8:
        raise NumericError(f"assembled P_theta has diagonal entries up to {d:.3g}")
    np.fill_diagonal(P_theta, 0.0)

    m = proj.m
    frob_sq = float(np.sum(P_theta * P_theta))
    expected = m - float(theta @ pii)
    if abs(frob_sq - expected) > 1e-10 * max(abs(expected), 1.0):
        raise NumericError(f"|P_theta|_F^2 = {frob_sq:.12g} but m - sum(theta P_ii) = {expected:.12g}")

    zeta = (1 - 2 * varpi0) * (1 - varpi0)
    sum_p2 = float(pii @ pii)
    if float(theta @ pii) > sum_p2 / zeta * (1 + 1e-10) + 1e-14:
        raise NumericError("sum theta_i P_ii exceeds sum P_ii^2 / zeta")
    if pii.max() <= varpi1 * zeta and np.abs(theta).max() > varpi1 + 1e-12:
        raise NumericError("max |theta_i| exceeds varpi1 although max P_ii <= zeta varpi1")
    if sum_p2 <= m * zeta / 2 and not frob_sq > m / 2:
        raise NumericError("degenerate P_theta: |P_theta|_F^2 <= m/2")

    theta.setflags(write=False)
    P_theta.setflags(write=False)
    return ThetaSystem(theta=theta, P_theta=P_theta, frob_sq=frob_sq, m=m,
                       residual=residual, fingerprint=proj.fingerprint)


def variance_factor(ts: ThetaSystem, sigma_sq: float) -> float:
    """Null variance of the modified statistic, ``2 |P_theta|_F^2 sigma_sq``."""
    if sigma_sq < 0:
        raise ValidationError("sigma_sq must be non-negative")
    return 2.0 * ts.frob_sq * sigma_sq
