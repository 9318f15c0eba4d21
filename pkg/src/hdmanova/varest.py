"""Estimators of ``s^2 = tr(Sigma^2)``.

* ``split``: fit both halves of a random split separately and return
  ``tr(Sigma_A Sigma_Ac)``; unbiased without any Gaussian assumption.
* ``oracle``: the U-statistic over true innovations (simulation only).
* ``srivastava``: the residual-based estimator that is unbiased only for
  Gaussian errors, plus its exact bias for general errors.

Traces of products of d x d covariance estimates are always evaluated
through (n/2) x (n/2) Gram products, so cost is O(n^2 d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._random import rng_for
from .errors import InfeasibleError, ValidationError
from .model import COND_LIMIT, RegressionData, _orth

MAX_SPLIT_ATTEMPTS = 50


@dataclass(frozen=True)
class VarianceEstimate:
    """Estimate of ``tr(Sigma^2)``.

    ``value`` is clamped below at ``1e-12 * d`` so that square roots and
    divisions stay finite; ``raw`` keeps the unclamped number.
    """

    value: float
    raw: float
    method: str
    n_splits: int = 1
    seed: int = 0
    per_split: tuple = field(default=(), repr=False)
    dropped: tuple = ()

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.value))

    def to_dict(self) -> dict:
        return {
            "value": self.value, "raw": self.raw, "method": self.method,
            "n_splits": self.n_splits, "seed": self.seed,
            "dropped": [int(i) for i in self.dropped],
        }


def _clamp(raw: float, d: int) -> float:
    return max(float(raw), 1e-12 * d)


@dataclass(frozen=True)
class SplitPlan:
    """Index halves and per-half residual projectors for repeated splits."""

    halves: tuple  # ((A, Ac), ...) sorted index arrays of equal length h
    projectors: tuple  # ((M_A, M_Ac), ...) residual projectors of X_A, X_Ac
    dropped: tuple  # index left out per split when n is odd, else ()
    h: int
    p: int
    seed: int

    @property
    def n_splits(self) -> int:
        return len(self.halves)

    @property
    def dof(self) -> int:
        return self.h - self.p

    def estimate_each(self, Y: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_splits)
        for s, ((A, Ac), (MA, MAc)) in enumerate(zip(self.halves, self.projectors)):
            RA = MA @ Y[A]
            RAc = MAc @ Y[Ac]
            G = RA @ RAc.T
            out[s] = np.sum(G * G) / self.dof ** 2
        return out


def _well_conditioned(X: np.ndarray) -> bool:
    c = np.linalg.cond(X.T @ X)
    return bool(np.isfinite(c) and c <= COND_LIMIT)


def split_plan(X: np.ndarray, n_splits: int = 10, seed: int = 0) -> SplitPlan:
    """Draw ``n_splits`` random halvings of the rows of ``X``.

    Split ``s`` uses the stream ``(seed, "split", s, attempt)``; a split
    whose half-design is rank deficient is redrawn up to 50 times.  For
    odd ``n`` the last element of the shuffle (a uniformly chosen row) is
    left out.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    h = n // 2
    if n_splits < 1:
        raise ValidationError("n_splits must be at least 1")
    if p >= h:
        raise InfeasibleError(f"sample splitting needs p < n/2 (n={n}, p={p})")
    halves, projectors, dropped = [], [], []
    for s in range(n_splits):
        for attempt in range(MAX_SPLIT_ATTEMPTS):
            perm = rng_for(seed, "split", s, attempt).permutation(n)
            A = np.sort(perm[:h])
            Ac = np.sort(perm[h:2 * h])
            if _well_conditioned(X[A]) and _well_conditioned(X[Ac]):
                break
        else:
            raise InfeasibleError(
                f"split {s} has a rank-deficient half after {MAX_SPLIT_ATTEMPTS} draws", seed=seed)
        QA, QAc = _orth(X[A]), _orth(X[Ac])
        halves.append((A, Ac))
        projectors.append((np.eye(h) - QA @ QA.T, np.eye(h) - QAc @ QAc.T))
        if n % 2:
            dropped.append(int(perm[-1]))
    return SplitPlan(halves=tuple(halves), projectors=tuple(projectors),
                     dropped=tuple(dropped), h=h, p=p, seed=seed)


def split_estimator(data: RegressionData, n_splits: int = 10, seed: int = 0,
                    plan: SplitPlan | None = None) -> VarianceEstimate:
    """Average of ``tr(Sigma_A Sigma_Ac)`` over independent random splits."""
    if plan is None:
        plan = split_plan(data.X, n_splits, seed)
    each = plan.estimate_each(data.Y)
    raw = float(np.mean(each))
    return VarianceEstimate(value=_clamp(raw, data.d), raw=raw, method="split",
                            n_splits=plan.n_splits, seed=plan.seed,
                            per_split=tuple(float(v) for v in each), dropped=plan.dropped)


def oracle_estimator(V) -> VarianceEstimate:
    """``{n(n-1)}^-1 sum_{i != j} (V_i'V_j)^2`` from the true innovations."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    n = V.shape[0]
    if n < 2:
        raise ValidationError("oracle estimator needs at least two rows")
    G = V @ V.T
    raw = (float(np.sum(G * G)) - float(np.sum(np.diag(G) ** 2))) / (n * (n - 1))
    return VarianceEstimate(value=_clamp(raw, V.shape[1]), raw=raw, method="oracle")


def srivastava_estimator(V_hat, n: int, p: int) -> VarianceEstimate:
    """Gaussian-unbiased estimator built from full-model residuals."""
    if not n > p + 1:
        raise ValidationError("srivastava estimator needs n > p + 1")
    V_hat = np.asarray(V_hat, dtype=float)
    if V_hat.ndim == 1:
        V_hat = V_hat[:, None]
    k = n - p
    G = V_hat @ V_hat.T
    frob_sq = float(np.sum(G * G)) / k ** 2  # |Sigma_hat|_F^2
    tr = float(np.trace(G)) / k
    raw = k ** 2 / ((k + 2) * (k - 1)) * (frob_sq - tr ** 2 / k)
    return VarianceEstimate(value=_clamp(raw, V_hat.shape[1]), raw=raw, method="srivastava")


def srivastava_bias(moment_e0: float, sigma_sq: float, pbar1_diag, n: int, p: int) -> float:
    """``E(srivastava) - s^2`` given ``moment_e0 = Var(V_1'V_1)``.

    Vanishes for Gaussian errors, where ``Var(V_1'V_1) = 2 s^2``.
    """
    pbar1_diag = np.asarray(pbar1_diag, dtype=float)
    k = n - p
    return float(np.sum(pbar1_diag ** 2) / (k * (k + 2)) * (moment_e0 - 2.0 * sigma_sq))
