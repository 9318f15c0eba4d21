"""Per-feature linear regression tests with Holm step-down adjustment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from statsmodels.stats.multitest import multipletests

from .errors import NumericError, ValidationError
from .model import ContrastMatrix, RegressionData, build_projections


@dataclass(frozen=True)
class FeaturewiseReport:
    statistics: np.ndarray
    p_values: np.ndarray
    adjusted: np.ndarray
    discoveries: np.ndarray
    alpha: float
    df: tuple
    method: str = "holm"

    @property
    def n_discoveries(self) -> int:
        return int(self.discoveries.sum())

    def to_dict(self) -> dict:
        return {
            "method": self.method, "alpha": self.alpha, "df": list(self.df),
            "n_discoveries": self.n_discoveries,
            "discovered": np.flatnonzero(self.discoveries).tolist(),
            "statistics": self.statistics.tolist(),
            "p_values": self.p_values.tolist(),
            "adjusted": self.adjusted.tolist(),
        }


def holm(p_values, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Holm-Bonferroni adjusted p-values and rejection flags."""
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("p-values must be a non-empty vector")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValidationError("p-values must lie in [0, 1]")
    reject, adjusted, _, _ = multipletests(p, alpha=alpha, method="holm")
    return adjusted, reject


def featurewise_tests(data: RegressionData, contrast: ContrastMatrix,
                      alpha: float = 0.05) -> FeaturewiseReport:
    """F test of ``C b_j = 0`` for every response column ``j``.

    With one contrast row this is the two-sided t test (``F = t^2``).
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    proj = build_projections(data, contrast)
    m = contrast.m
    dof = data.n - data.p
    PY = proj.P @ data.Y
    R = proj.Pbar1 @ data.Y
    hyp = np.einsum("ij,ij->j", PY, PY) / m
    rss = np.einsum("ij,ij->j", R, R) / dof
    if np.any(rss <= 0):
        bad = int(np.flatnonzero(rss <= 0)[0])
        raise NumericError(f"feature {bad} is fitted exactly; residual variance is zero")
    F = hyp / rss
    p = stats.f.sf(F, m, dof)
    adjusted, reject = holm(p, alpha)
    return FeaturewiseReport(statistics=F, p_values=p, adjusted=adjusted,
                             discoveries=reject, alpha=alpha, df=(m, dof))
