"""Classical and modified MANOVA statistics, null decomposition, and
Monte Carlo diagnostics for the diagonal-versus-off-diagonal dichotomy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._random import rng_for
from .errors import ValidationError
from .model import ProjectionSet
from .theta import ThetaSystem


def _as_2d(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    return Y[:, None] if Y.ndim == 1 else Y


def _check_rows(Y: np.ndarray, n: int):
    if Y.shape[0] != n:
        raise ValidationError(f"response has {Y.shape[0]} rows, projections are {n} x {n}")


def q_statistic(Y, proj: ProjectionSet) -> float:
    """Classical statistic ``|P Y|_F^2``."""
    Y = _as_2d(Y)
    _check_rows(Y, proj.n)
    PY = proj.P @ Y
    return float(np.sum(PY * PY))


def u_statistic(Y, proj: ProjectionSet, ts: ThetaSystem) -> float:
    """Modified statistic ``Q_n - sum_k theta_k |r_k|^2`` with ``r = (I - P0) Y``."""
    Y = _as_2d(Y)
    _check_rows(Y, proj.n)
    if ts.fingerprint != proj.fingerprint:
        raise ValidationError("ThetaSystem was built from a different ProjectionSet")
    r = proj.Pbar0 @ Y
    return q_statistic(Y, proj) - float(ts.theta @ np.einsum("ij,ij->i", r, r))


def u_statistic_trace(Y, ts: ThetaSystem) -> float:
    """``trace(Y' P_theta Y)``; algebraically equal to :func:`u_statistic`."""
    Y = _as_2d(Y)
    return float(np.sum(Y * (ts.P_theta @ Y)))


@dataclass(frozen=True)
class Decomposition:
    Q_n: float
    D_n: float
    Q_star: float
    U_n: float


def decompose_null(V, proj: ProjectionSet, ts: ThetaSystem | None = None) -> Decomposition:
    """Split ``Q_n`` of null innovations into diagonal and off-diagonal parts.

    ``D_n = sum_i P_ii |V_i|^2`` and ``Q_star = sum_{i != j} P_ij V_i'V_j``
    are computed separately; ``U_n`` is filled in when ``ts`` is given.
    """
    V = _as_2d(V)
    _check_rows(V, proj.n)
    pii = np.diag(proj.P)
    norms = np.einsum("ij,ij->i", V, V)
    D = float(pii @ norms)
    off = proj.P - np.diag(pii)
    Qs = float(np.sum(V * (off @ V)))
    Q = q_statistic(V, proj)
    U = u_statistic_trace(V, ts) if ts is not None else float("nan")
    return Decomposition(Q_n=Q, D_n=D, Q_star=Qs, U_n=U)


@dataclass(frozen=True)
class DichotomyDiagnostics:
    lambda_sq: float
    var_D: float
    var_Qstar: float
    M_q: float
    L_q: float
    delta_q_bound: float
    moment_e0: float
    moment_e0_se: float
    sigma_sq: float
    q: float
    reps: int


Sampler = Callable[[int, np.random.Generator], np.ndarray]


def dichotomy_diagnostics(sampler: Sampler, proj: ProjectionSet, Sigma, reps: int = 2000,
                          q: float = 3.0, seed: int = 0) -> DichotomyDiagnostics:
    """Monte Carlo moments that decide which part of ``Q_n`` dominates.

    ``sampler(k, rng)`` must return ``k`` i.i.d. innovation rows.  The
    fourth-moment quantity ``Var(V_1'V_1)``, ``M_q = E|V_1'V_2/s|^q`` and
    ``L_q = E|V_1' Sigma V_1 / s^2|^(q/2)`` are estimated from ``2 * reps``
    rows; ``s^2 = tr(Sigma^2)`` is exact.
    """
    if reps < 1000:
        raise ValidationError("dichotomy diagnostics need reps >= 1000")
    if not 2 < q <= 3:
        raise ValidationError("q must lie in (2, 3]")
    Sigma = np.asarray(Sigma, dtype=float)
    sigma_sq = float(np.sum(Sigma * Sigma))
    rng = rng_for(seed, "dichotomy")
    V1 = np.asarray(sampler(reps, rng), dtype=float)
    V2 = np.asarray(sampler(reps, rng), dtype=float)

    norms = np.concatenate([np.einsum("ij,ij->i", V1, V1), np.einsum("ij,ij->i", V2, V2)])
    e0 = float(np.var(norms, ddof=1))
    c = norms - norms.mean()
    mu4 = float(np.mean(c ** 4))
    e0_se = float(np.sqrt(max(mu4 - e0 ** 2, 0.0) / norms.size))

    s = np.sqrt(sigma_sq)
    cross = np.einsum("ij,ij->i", V1, V2) / s
    M_q = float(np.mean(np.abs(cross) ** q))
    quad = np.einsum("ij,ij->i", V1 @ Sigma, V1) / sigma_sq
    L_q = float(np.mean(np.abs(quad) ** (q / 2)))

    pii = np.diag(proj.P)
    m = proj.m
    sum_p2 = float(pii @ pii)
    var_D = sum_p2 * e0
    var_Qstar = 2.0 * (m - sum_p2) * sigma_sq
    delta = q - 2
    bound = 2.0 * (pii.max() / m) ** (delta / 2) * M_q
    return DichotomyDiagnostics(
        lambda_sq=var_D / (m * sigma_sq), var_D=var_D, var_Qstar=var_Qstar,
        M_q=M_q, L_q=L_q, delta_q_bound=float(bound), moment_e0=e0,
        moment_e0_se=e0_se, sigma_sq=sigma_sq, q=q, reps=reps,
    )
