"""Critical values and p-values for the modified statistic.

All tests are one-sided: large values of the statistic reject.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from ._random import parallel_map, rng_for
from .errors import NumericError, ValidationError
from .model import ProjectionSet, RegressionData
from .stat import u_statistic, u_statistic_trace
from .theta import ThetaSystem
from .varest import SplitPlan, split_estimator, split_plan

SQRT2 = math.sqrt(2.0)
CONDCLT_THRESHOLD = 0.5


@dataclass(frozen=True)
class TestOutcome:
    u_n: float
    standardized: float | None
    method: str
    p_value: float
    critical_value: float | None
    alpha: float
    reject: bool
    b_draws: int = 0
    cond_clt: float | None = None
    varsigma_hat: float | None = None
    frob: float | None = None
    seed: int | None = None
    extra: dict | None = None

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        out = asdict(self)
        out["reject"] = bool(self.reject)
        if self.cond_clt is not None:
            out["normal_approx_doubtful"] = bool(self.cond_clt > CONDCLT_THRESHOLD)
        return out


def _check_alpha(alpha: float):
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")


def clt_pvalue(u_n: float, varsigma_hat: float, frob: float, alpha: float = 0.05,
               cond_clt: float | None = None) -> TestOutcome:
    """Normal calibration of ``u_n / (varsigma_hat |P_theta|_F sqrt 2)``."""
    _check_alpha(alpha)
    if not varsigma_hat > 0 or not frob > 0:
        raise ValidationError("varsigma_hat and frob must be positive")
    z = u_n / (varsigma_hat * frob * SQRT2)
    crit = float(stats.norm.ppf(1 - alpha))
    return TestOutcome(u_n=float(u_n), standardized=float(z), method="clt",
                       p_value=float(stats.norm.sf(z)), critical_value=crit,
                       alpha=alpha, reject=bool(z > crit), cond_clt=cond_clt,
                       varsigma_hat=float(varsigma_hat), frob=float(frob))


# -- Gaussian multiplier bootstrap ----------------------------------------

def _draw_multipliers(seed: int, draws: range, n: int) -> np.ndarray:
    return np.stack([rng_for(seed, "draw", b).standard_normal((n, n)) for b in draws])


def bootstrap_draws_gram(Omega: np.ndarray, G: np.ndarray, P_theta: np.ndarray,
                         plan: SplitPlan, dof: int) -> tuple[np.ndarray, np.ndarray]:
    """Bootstrap ``(U*, s*^2)`` for a stack of multiplier matrices.

    With ``V* = Omega Vhat / sqrt(dof)`` and ``G = Vhat Vhat'``, everything
    reduces to n x n products: ``U* = tr(Omega' P_theta Omega G) / dof``
    and each split's cross Gram is ``M_A Omega_A G Omega_Ac' M_Ac / dof``.
    Cost per draw is O(n^3) whatever the response dimension.
    """
    Omega = np.asarray(Omega, dtype=float)
    if Omega.ndim == 2:
        Omega = Omega[None]
    U = np.einsum("bij,bij->b", (P_theta @ Omega) @ G, Omega) / dof
    s2 = np.zeros(Omega.shape[0])
    scale = dof * plan.dof
    for (A, Ac), (MA, MAc) in zip(plan.halves, plan.projectors):
        WA = MA @ Omega[:, A, :]
        WAc = MAc @ Omega[:, Ac, :]
        T = (WA @ G) @ WAc.transpose(0, 2, 1)
        s2 += np.sum(T * T, axis=(1, 2)) / scale ** 2
    return U, s2 / plan.n_splits


def bootstrap_draws_direct(Omega: np.ndarray, Vhat: np.ndarray, ts: ThetaSystem,
                           plan: SplitPlan, dof: int) -> tuple[np.ndarray, np.ndarray]:
    """Same quantities as :func:`bootstrap_draws_gram`, via explicit ``V*``."""
    Omega = np.asarray(Omega, dtype=float)
    if Omega.ndim == 2:
        Omega = Omega[None]
    U = np.empty(Omega.shape[0])
    s2 = np.empty(Omega.shape[0])
    for b, W in enumerate(Omega):
        Vs = W @ Vhat / math.sqrt(dof)
        U[b] = u_statistic_trace(Vs, ts)
        s2[b] = float(np.mean(plan.estimate_each(Vs)))
    return U, s2


def multiplier_bootstrap(data: RegressionData, proj: ProjectionSet, ts: ThetaSystem,
                         B: int = 1000, alpha: float = 0.05, seed: int = 0,
                         n_splits: int = 10, plan: SplitPlan | None = None,
                         threads: int | None = 1, chunk: int = 25) -> TestOutcome:
    """Gaussian multiplier bootstrap test.

    Draw ``b`` uses multipliers from the stream ``(seed, "draw", b)``; the
    split halves (stream ``(seed, "split", s)``) are shared by the observed
    variance estimate and every bootstrap draw.  The p-value is
    ``(1 + #{T*_b >= T}) / (B + 1)`` and ``reject`` is ``T > c_{1-alpha}``.
    """
    _check_alpha(alpha)
    if B < 100:
        raise ValidationError("bootstrap needs B >= 100")
    n, p = data.n, data.p
    dof = n - p
    Vhat = proj.Pbar1 @ data.Y
    G = Vhat @ Vhat.T
    if np.linalg.norm(Vhat) <= 1e-10 * max(np.linalg.norm(data.Y), np.finfo(float).tiny):
        raise NumericError("residual matrix is identically zero; nothing to resample")
    if plan is None:
        plan = split_plan(data.X, n_splits, seed)

    u_n = u_statistic(data.Y, proj, ts)
    vs = split_estimator(data, plan=plan)
    frob = ts.frob
    t_obs = u_n / (vs.sd * frob * SQRT2)
    floor = 1e-12 * data.d

    def run(block: range) -> np.ndarray:
        Om = _draw_multipliers(seed, block, n)
        U, s2 = bootstrap_draws_gram(Om, G, ts.P_theta, plan, dof)
        return U / (np.sqrt(np.maximum(s2, floor)) * frob * SQRT2)

    blocks = [range(i, min(i + chunk, B)) for i in range(0, B, chunk)]
    t_star = np.concatenate(parallel_map(run, blocks, threads))
    crit = float(np.quantile(t_star, 1 - alpha))
    pval = (1 + int(np.sum(t_star >= t_obs))) / (B + 1)
    return TestOutcome(u_n=u_n, standardized=float(t_obs), method="bootstrap",
                       p_value=pval, critical_value=crit, alpha=alpha,
                       reject=bool(t_obs > crit), b_draws=B,
                       cond_clt=condclt_check(G, proj.m), varsigma_hat=vs.sd,
                       frob=frob, seed=seed)


# -- chi-square mixture oracle --------------------------------------------

def _grouped(values: np.ndarray, rel: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Distinct (up to ``rel``) non-zero values and their multiplicities."""
    values = np.sort(np.asarray(values, dtype=float))
    scale = np.abs(values).max() if values.size else 0.0
    if scale == 0:
        return np.array([]), np.array([], dtype=int)
    values = values[np.abs(values) > 1e-12 * scale]
    uniq, counts = [], []
    for v in values:
        if uniq and abs(v - uniq[-1]) <= rel * scale:
            counts[-1] += 1
        else:
            uniq.append(v)
            counts.append(1)
    return np.array(uniq), np.array(counts)


def mixture_oracle_quantile(ts: ThetaSystem, Sigma, alpha: float = 0.05,
                            draws: int = 100_000, seed: int = 0,
                            max_block: int = 4_000_000) -> float:
    """``(1 - alpha)`` quantile of the standardized Gaussian analogue.

    The Gaussian analogue is ``sum_k sum_i lam_k(Sigma) mu_i(P_theta)
    (eta_ik - 1)`` with independent chi-square(1) ``eta``; tied
    eigenvalues are merged into chi-square variables with more degrees of
    freedom.  ``Sigma`` may be a covariance matrix or a vector of its
    eigenvalues.
    """
    _check_alpha(alpha)
    if draws < 100_000:
        raise ValidationError("mixture oracle needs draws >= 1e5")
    Sigma = np.asarray(Sigma, dtype=float)
    lam = np.linalg.eigvalsh(Sigma) if Sigma.ndim == 2 else Sigma
    sigma_sq = float(np.sum(lam ** 2))
    if ts.frob_sq == 0 or sigma_sq == 0:
        return 0.0
    mu = np.linalg.eigvalsh(ts.P_theta)
    la, ca = _grouped(lam)
    ma, cm = _grouped(mu)
    w = np.outer(la, ma).ravel()
    df = np.outer(ca, cm).ravel()
    sd = math.sqrt(2.0 * ts.frob_sq * sigma_sq)

    rng = rng_for(seed, "mixture")
    ones = df == 1
    w1, wk, dfk = w[ones], w[~ones], df[~ones]
    block = max(1, min(draws, max_block // max(w.size, 1)))
    out = np.empty(draws)
    for start in range(0, draws, block):
        k = min(block, draws - start)
        g = np.zeros(k)
        if w1.size:
            z = rng.standard_normal((k, w1.size))
            g += (z * z - 1.0) @ w1
        if wk.size:
            g += (rng.chisquare(dfk, size=(k, wk.size)) - dfk) @ wk
        out[start:start + k] = g / sd
    return float(np.quantile(out, 1 - alpha))


def condclt_check(S, m: int) -> float:
    """``lam_1 / (|S|_F sqrt m)`` for a covariance estimate or Gram surrogate.

    Values near zero support the normal approximation; above 0.5 the
    normal critical value is doubtful.  The Gram matrix ``Vhat Vhat'``
    shares its non-zero spectrum with ``Vhat'Vhat`` and the ratio is
    scale free, so either can be passed.
    """
    S = np.asarray(S, dtype=float)
    lam = np.clip(np.linalg.eigvalsh(0.5 * (S + S.T)), 0.0, None)
    fro = math.sqrt(float(np.sum(lam ** 2)))
    if fro == 0:
        return float("nan")
    return float(lam[-1] / (fro * math.sqrt(m)))
