"""K-sample tests: one-way MANOVA and its characteristic-function
(kernel) analogue for equality of distributions.

For the one-way layout the zero-diagonal weight matrix has closed-form
entries that depend only on the group sizes: ``P_{gg,K}`` for pairs
inside group ``g`` and ``P_{gh,K}`` for pairs across groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._random import parallel_map, rng_for
from .calibrate import TestOutcome, clt_pvalue
from .errors import ValidationError
from .model import RegressionData
from .varest import split_estimator


@dataclass(frozen=True)
class GroupedSample:
    groups: tuple

    def __post_init__(self):
        groups = []
        for g in self.groups:
            a = np.array(g, dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            if a.ndim != 2:
                raise ValidationError("each group must be a 2-d array")
            if not np.all(np.isfinite(a)):
                raise ValidationError("groups contain non-finite values")
            a.setflags(write=False)
            groups.append(a)
        if len(groups) < 2:
            raise ValidationError("need at least two groups")
        if len({a.shape[1] for a in groups}) != 1:
            raise ValidationError("all groups must share the same dimension")
        if min(a.shape[0] for a in groups) < 2:
            raise ValidationError("every group needs at least two observations")
        object.__setattr__(self, "groups", tuple(groups))

    @classmethod
    def from_labels(cls, Y, labels) -> "GroupedSample":
        """Group the rows of ``Y`` by ``labels`` (groups ordered by first appearance)."""
        Y = np.asarray(Y, dtype=float)
        labels = np.asarray(labels)
        if Y.ndim == 1:
            Y = Y[:, None]
        if labels.shape[0] != Y.shape[0]:
            raise ValidationError("labels and data have different lengths")
        _, first = np.unique(labels, return_index=True)
        order = labels[np.sort(first)]
        return cls(tuple(Y[labels == lab] for lab in order))

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([g.shape[0] for g in self.groups])

    @property
    def n(self) -> int:
        return int(self.sizes.sum())

    @property
    def n_min(self) -> int:
        return int(self.sizes.min())

    @property
    def d(self) -> int:
        return self.groups[0].shape[1]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All observations stacked, with integer group labels 0..K-1."""
        Y = np.vstack(self.groups)
        labels = np.repeat(np.arange(self.K), self.sizes)
        return Y, labels


@dataclass(frozen=True)
class KsampleCoefficients:
    diag: np.ndarray  # P_{gg,K}
    offdiag: np.ndarray  # K x K, P_{gh,K} off the diagonal, zero on it

    def pair_matrix(self) -> np.ndarray:
        """K x K coefficient matrix with ``P_{gg,K}`` on the diagonal."""
        return self.offdiag + np.diag(self.diag)


def ksample_coefficients(sizes) -> KsampleCoefficients:
    sizes = np.asarray(sizes, dtype=float)
    K = sizes.size
    if K < 2:
        raise ValidationError("need at least two groups")
    if np.any(sizes < 2):
        raise ValidationError("every group needs at least two observations")
    n = sizes.sum()
    c = (n + K - 2) / (n - 1)
    diag = (n / sizes - c) / (n - 2)
    off = (1 / sizes[:, None] + 1 / sizes[None, :] - c) / (n - 2)
    np.fill_diagonal(off, 0.0)
    return KsampleCoefficients(diag=diag, offdiag=off)


def frob_sq_oneway(sizes) -> float:
    """``|P_theta|_F^2`` of the one-way layout from group sizes alone."""
    sizes = np.asarray(sizes, dtype=float)
    co = ksample_coefficients(sizes)
    within = np.sum(co.diag ** 2 * sizes * (sizes - 1))
    across = np.sum(co.offdiag ** 2 * np.outer(sizes, sizes))
    return float(within + across)


def _u_from_sums(S: np.ndarray, sq: np.ndarray, co: KsampleCoefficients) -> float:
    # S: K x d group sums; sq: per-group sum of squared norms
    inner = S @ S.T
    within = float(np.sum(co.diag * (np.diag(inner) - sq)))
    across = float(np.sum(co.offdiag * inner))
    return within + across


def u_nk(sample: GroupedSample) -> float:
    """One-way MANOVA U statistic in O(n d + K^2 d) via group sums."""
    co = ksample_coefficients(sample.sizes)
    S = np.stack([g.sum(axis=0) for g in sample.groups])
    sq = np.array([np.sum(g * g) for g in sample.groups])
    return _u_from_sums(S, sq, co)


def two_sample_u(sample: GroupedSample) -> float:
    """Two-sample U statistic written in terms of between-group differences.

    Numerator ``sum_{i != j} sum_{k != l} (a_i - b_k)'(a_j - b_l)``,
    expanded into group sums rather than a quadruple loop, divided by
    ``(n - 1)(n - 2) n1 n2 / n``.
    """
    if sample.K != 2:
        raise ValidationError("two_sample_u needs exactly two groups")
    a, b = sample.groups
    n1, n2 = a.shape[0], b.shape[0]
    n = n1 + n2
    Sa, Sb = a.sum(axis=0), b.sum(axis=0)
    Wa = float(Sa @ Sa - np.sum(a * a))
    Wb = float(Sb @ Sb - np.sum(b * b))
    num = n2 * (n2 - 1) * Wa + n1 * (n1 - 1) * Wb - 2 * (n1 - 1) * (n2 - 1) * float(Sa @ Sb)
    return num / ((n - 1) * (n - 2) * n1 * n2 / n)


# -- kernels ----------------------------------------------------------------

KERNELS = ("laplace", "gaussian", "energy")


@dataclass(frozen=True)
class Kernel:
    """Translation-invariant kernel replacing the inner product.

    ``laplace``: ``exp(-kappa |x - y|)``; ``gaussian``: ``exp(-gamma |x - y|^2)``;
    ``energy``: ``-|x - y|``.  A missing ``kappa``/``gamma`` is set by the
    median heuristic (``kappa = 1/median distance``, ``gamma = kappa^2``).
    """

    kind: str = "laplace"
    kappa: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValidationError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        for name in ("kappa", "gamma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be positive")

    def resolved(self, dist: np.ndarray) -> "Kernel":
        if self.kind == "laplace" and self.kappa is None:
            return Kernel("laplace", kappa=1.0 / _median_distance(dist))
        if self.kind == "gaussian" and self.gamma is None:
            return Kernel("gaussian", gamma=1.0 / _median_distance(dist) ** 2)
        return self

    def apply(self, dist: np.ndarray) -> np.ndarray:
        if self.kind == "laplace":
            return np.exp(-self.kappa * dist)
        if self.kind == "gaussian":
            return np.exp(-self.gamma * dist ** 2)
        return -dist


def _median_distance(dist: np.ndarray) -> float:
    iu = np.triu_indices(dist.shape[0], k=1)
    med = float(np.median(dist[iu]))
    if med <= 0:
        raise ValidationError("median pairwise distance is zero; set the bandwidth explicitly")
    return med


def pairwise_distances(Y: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", Y, Y)
    D2 = sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T)
    np.fill_diagonal(D2, 0.0)
    return np.sqrt(np.maximum(D2, 0.0))


def _coefficient_form(Kmat: np.ndarray, labels: np.ndarray, co: KsampleCoefficients, K: int) -> float:
    # sum_{i != j} coef(g_i, g_j) Kmat_ij with Kmat's diagonal already zeroed
    Z = np.zeros((labels.size, K))
    Z[np.arange(labels.size), labels] = 1.0
    block = Z.T @ Kmat @ Z
    return float(np.sum(co.pair_matrix() * block))


def kernel_matrix(sample: GroupedSample, kernel: Kernel) -> tuple[np.ndarray, Kernel]:
    Y, _ = sample.stacked()
    dist = pairwise_distances(Y)
    kernel = kernel.resolved(dist)
    Kmat = kernel.apply(dist)
    np.fill_diagonal(Kmat, 0.0)
    return Kmat, kernel


def kernel_u_nk(sample: GroupedSample, kernel: Kernel | None = None) -> float:
    """Kernel analogue of :func:`u_nk`; O(n^2 d) for pairwise distances."""
    Kmat, _ = kernel_matrix(sample, kernel or Kernel())
    _, labels = sample.stacked()
    co = ksample_coefficients(sample.sizes)
    return _coefficient_form(Kmat, labels, co, sample.K)


def _oneway_design(labels: np.ndarray, K: int) -> np.ndarray:
    X = np.zeros((labels.size, K))
    X[np.arange(labels.size), labels] = 1.0
    return X


def oneway_contrast(K: int) -> np.ndarray:
    """``C = [1 | -I_{K-1}]``: all group means equal to the first."""
    return np.hstack([np.ones((K - 1, 1)), -np.eye(K - 1)])


def ksample_test(sample: GroupedSample, statistic: str | Kernel = "linear",
                 calibration: str = "permutation", B: int = 1000, alpha: float = 0.05,
                 seed: int = 0, n_splits: int = 10, threads: int | None = 1) -> TestOutcome:
    """Test equal means (``statistic="linear"``) or equal distributions (a :class:`Kernel`).

    ``calibration="permutation"`` re-randomizes group labels ``B`` times
    (stream ``(seed, "perm", b)``) and reports ``(1 + #{T_b >= T})/(B + 1)``.
    ``calibration="clt"`` is available for the linear statistic only and
    standardizes by the split estimate of ``tr(Sigma^2)`` under the one-way
    design.
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    is_kernel = isinstance(statistic, Kernel)
    if not is_kernel and statistic != "linear":
        raise ValidationError(f"unknown statistic {statistic!r}")
    Y, labels = sample.stacked()
    K = sample.K
    co = ksample_coefficients(sample.sizes)

    if calibration == "clt":
        if is_kernel:
            raise ValidationError("clt calibration is only available for the linear statistic")
        u = u_nk(sample)
        data = RegressionData(_oneway_design(labels, K), Y)
        vs = split_estimator(data, n_splits=n_splits, seed=seed)
        out = clt_pvalue(u, vs.sd, math.sqrt(frob_sq_oneway(sample.sizes)), alpha)
        return TestOutcome(**{**out.__dict__, "seed": seed})
    if calibration != "permutation":
        raise ValidationError(f"unknown calibration {calibration!r}")
    if B < 100:
        raise ValidationError("permutation calibration needs B >= 100")

    extra = None
    if is_kernel:
        Kmat, resolved = kernel_matrix(sample, statistic)
        extra = {"kernel": resolved.kind, "kappa": resolved.kappa, "gamma": resolved.gamma}

        def stat(lab: np.ndarray) -> float:
            return _coefficient_form(Kmat, lab, co, K)
    else:
        sq_rows = np.einsum("ij,ij->i", Y, Y)

        def stat(lab: np.ndarray) -> float:
            Z = np.zeros((lab.size, K))
            Z[np.arange(lab.size), lab] = 1.0
            return _u_from_sums(Z.T @ Y, Z.T @ sq_rows, co)

    observed = stat(labels)

    def one(b: int) -> float:
        return stat(labels[rng_for(seed, "perm", b).permutation(labels.size)])

    null = np.array(parallel_map(one, range(B), threads))
    pval = (1 + int(np.sum(null >= observed))) / (B + 1)
    return TestOutcome(u_n=observed, standardized=None, method="permutation",
                       p_value=pval, critical_value=float(np.quantile(null, 1 - alpha)),
                       alpha=alpha, reject=bool(pval <= alpha), b_draws=B, seed=seed,
                       extra=extra)
