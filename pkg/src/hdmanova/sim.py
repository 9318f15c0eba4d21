"""Innovation generators, frozen designs and the Monte Carlo experiment runner.

Every replicate ``r`` of an experiment draws from the stream
``(master_seed, "rep", r)``; the design matrix and coefficients come from
``(master_seed, "design")`` and ``(master_seed, "coef")`` and stay fixed
for the whole experiment.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal, stats

from ._random import as_rng, derive_seed, parallel_map, rng_for
from .calibrate import clt_pvalue, mixture_oracle_quantile, multiplier_bootstrap
from .errors import InfeasibleError, ValidationError
from .model import ContrastMatrix, RegressionData, build_projections
from .stat import u_statistic
from .theta import solve_theta
from .varest import oracle_estimator, split_estimator, split_plan, srivastava_estimator

KINDS = ("example3", "example1", "gaussian_ar1", "gaussian_identity", "gaussian_equicorr")
BASES = ("t5", "chi5")
METHODS = ("clt", "gmb", "mixture_oracle")
RESULT_COLUMNS = ("method", "n", "p", "m", "d", "design", "delta", "reps", "rejections", "rate", "se")

# fourth moment of one standardized base entry
_BASE_MU4 = {"t5": 9.0, "chi5": 5.4}


def _check_theta(theta: float, lo_closed: bool = False):
    ok = (0 <= theta < 1) if lo_closed else (0 < theta < 1)
    if not ok:
        raise ValidationError(f"theta must lie in {'[0, 1)' if lo_closed else '(0, 1)'}, got {theta}")


def ar1_sigma_sq(d: int, theta: float) -> float:
    """``tr(Sigma^2)`` for ``Sigma_ij = theta^|i-j|``."""
    k = np.arange(1, d)
    return float(d + 2.0 * np.sum((d - k) * theta ** (2 * k)))


def ar1_covariance(d: int, theta: float) -> np.ndarray:
    idx = np.arange(d)
    return theta ** np.abs(idx[:, None] - idx[None, :])


def ar1_rows(n: int, d: int, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Rows from ``N(0, Sigma_AR1)`` through the causal recursion, O(d) per row."""
    e = rng.standard_normal((n, d))
    s = math.sqrt(1.0 - theta ** 2)
    e[:, 0] /= s  # start the recursion in its stationary law
    return signal.lfilter([s], [1.0, -theta], e, axis=1)


def gen_example3(n: int, d: int, theta: float, seed, return_scale: bool = False):
    """Scale mixture ``nu xi + 3 (1 - nu) xi'`` of AR(1) Gaussians, ``P(nu = 1) = 0.9``.

    Only one of ``xi``, ``xi'`` is ever used per row, so a single AR(1)
    row is drawn and multiplied by 3 when ``nu = 0``.  With
    ``return_scale=True`` the per-row scale (1 or 3) is returned as well.
    """
    _check_theta(theta)
    rng = as_rng(seed)
    xi = ar1_rows(n, d, theta, rng)
    scale = np.where(rng.random(n) < 0.9, 1.0, 3.0)
    V = scale[:, None] * xi
    return (V, scale) if return_scale else V


def _standardized_base(shape, base: str, rng: np.random.Generator) -> np.ndarray:
    if base == "t5":
        return rng.standard_t(5, size=shape) * math.sqrt(3.0 / 5.0)
    if base == "chi5":
        return (rng.chisquare(5, size=shape) - 5.0) / math.sqrt(10.0)
    raise ValidationError(f"unknown base distribution {base!r}; choose from {BASES}")


def gen_example1(n: int, d: int, theta: float, base: str, seed) -> np.ndarray:
    """Common-factor rows ``sqrt(1 - theta) xi + sqrt(theta) xi0 * 1``."""
    _check_theta(theta, lo_closed=True)
    rng = as_rng(seed)
    z = _standardized_base((n, d + 1), base, rng)
    return math.sqrt(1.0 - theta) * z[:, :d] + math.sqrt(theta) * z[:, d:]


@dataclass(frozen=True)
class InnovationDesign:
    """Distribution of the innovation rows, with its exact moments."""

    kind: str
    d: int
    theta: float = 0.0
    base: str = "t5"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown design {self.kind!r}; choose from {KINDS}")
        if self.d < 1:
            raise ValidationError("d must be positive")
        if self.kind in ("example3", "gaussian_ar1"):
            _check_theta(self.theta)
        elif self.kind in ("example1", "gaussian_equicorr"):
            _check_theta(self.theta, lo_closed=True)
        if self.kind == "example1" and self.base not in BASES:
            raise ValidationError(f"unknown base distribution {self.base!r}")

    @property
    def label(self) -> str:
        if self.kind == "gaussian_identity":
            return self.kind
        if self.kind == "example1":
            return f"example1({self.base},{self.theta:g})"
        return f"{self.kind}({self.theta:g})"

    def sample(self, n: int, rng) -> np.ndarray:
        rng = as_rng(rng)
        if self.kind == "example3":
            return gen_example3(n, self.d, self.theta, rng)
        if self.kind == "example1":
            return gen_example1(n, self.d, self.theta, self.base, rng)
        if self.kind == "gaussian_ar1":
            return ar1_rows(n, self.d, self.theta, rng)
        z = rng.standard_normal((n, self.d + 1))
        if self.kind == "gaussian_identity":
            return z[:, :self.d]
        return math.sqrt(1.0 - self.theta) * z[:, :self.d] + math.sqrt(self.theta) * z[:, self.d:]

    def sigma(self) -> np.ndarray:
        d, t = self.d, self.theta
        if self.kind == "gaussian_identity":
            return np.eye(d)
        if self.kind in ("example1", "gaussian_equicorr"):
            return (1.0 - t) * np.eye(d) + t
        S = ar1_covariance(d, t)
        return 1.8 * S if self.kind == "example3" else S

    def eigenvalues(self) -> np.ndarray:
        d, t = self.d, self.theta
        if self.kind == "gaussian_identity":
            return np.ones(d)
        if self.kind in ("example1", "gaussian_equicorr"):
            lam = np.full(d, 1.0 - t)
            lam[-1] += t * d
            return lam
        return np.linalg.eigvalsh(self.sigma())

    @property
    def trace(self) -> float:
        return 1.8 * self.d if self.kind == "example3" else float(self.d)

    @property
    def sigma_sq(self) -> float:
        d, t = self.d, self.theta
        if self.kind == "gaussian_identity":
            return float(d)
        if self.kind in ("example1", "gaussian_equicorr"):
            return (1.0 - t + t * d) ** 2 + (d - 1) * (1.0 - t) ** 2
        s = ar1_sigma_sq(d, t)
        return 3.24 * s if self.kind == "example3" else s

    @property
    def moment_e0(self) -> float:
        """Exact ``Var(V_1'V_1)``."""
        d, t = self.d, self.theta
        if self.kind == "example3":
            # E s^4 = 0.9 + 0.1 * 81 = 9, E s^2 = 1.8
            s_ar = ar1_sigma_sq(d, t)
            return 9.0 * (d * d + 2.0 * s_ar) - (1.8 * d) ** 2
        if self.kind == "example1":
            excess = _BASE_MU4[self.base] - 3.0
            return 2.0 * self.sigma_sq + excess * (d * (1.0 - t) ** 2 + (t * d) ** 2)
        return 2.0 * self.sigma_sq


def gen_design_and_coefficients(n: int, p: int, m: int, delta: float, seed: int,
                                d: int) -> tuple[np.ndarray, np.ndarray]:
    """Intercept-plus-Gaussian design and a ``p x d`` coefficient matrix.

    Rows ``1..p-m`` of ``B`` are i.i.d. Uniform(1, 2); the last ``m`` rows
    are zero except the first of them, which is ``delta * 1``.
    """
    if not 1 <= m < p:
        raise ValidationError("need 1 <= m < p")
    if delta < 0:
        raise ValidationError("delta must be non-negative")
    X = np.hstack([np.ones((n, 1)), rng_for(seed, "design").standard_normal((n, p - 1))])
    B = np.zeros((p, d))
    B[:p - m] = rng_for(seed, "coef").uniform(1.0, 2.0, size=(p - m, d))
    B[p - m] = delta
    return X, B


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    p: int
    m: int
    design: InnovationDesign
    reps: int = 500
    B: int = 300
    alpha: float = 0.05
    methods: tuple = ("clt", "gmb")
    delta: float = 0.0
    master_seed: int = 0
    n_splits: int = 10
    mixture_draws: int = 100_000

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError("reps must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not 1 <= self.m < self.p < self.n:
            raise ValidationError("need 1 <= m < p < n")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValidationError(f"methods must be a non-empty subset of {METHODS}")
        if self.delta < 0:
            raise ValidationError("delta must be non-negative")
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def d(self) -> int:
        return self.design.d

    def to_dict(self) -> dict:
        out = asdict(self)
        out["d"] = self.d
        out["methods"] = list(self.methods)
        return out


_INT_KEYS = ("n", "p", "m", "d", "reps", "B", "seed", "n_splits", "mixture_draws")
_FLOAT_KEYS = ("alpha", "delta", "theta")
CONFIG_KEYS = _INT_KEYS + _FLOAT_KEYS + ("design", "base", "methods")


def parse_config(text: str) -> ExperimentConfig:
    """Build a config from ``key = value`` lines (``#`` starts a comment).

    Keys: n, p, m, d, design, theta, base, reps, B, alpha, methods
    (comma separated), delta, seed, n_splits, mixture_draws.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse config: {exc}") from exc
    raw = dict(cp["experiment"])
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for key in ("n", "p", "m", "d", "design"):
        if key not in raw:
            raise ValidationError(f"config is missing {key!r}")
    vals: dict = {}
    for key, value in raw.items():
        try:
            if key in _INT_KEYS:
                vals[key] = int(value)
            elif key in _FLOAT_KEYS:
                vals[key] = float(value)
            else:
                vals[key] = value.strip()
        except ValueError as exc:
            raise ValidationError(f"config key {key!r}: cannot parse {value!r}") from exc
    design = InnovationDesign(vals.pop("design"), vals.pop("d"), vals.pop("theta", 0.0),
                              vals.pop("base", "t5"))
    if "methods" in vals:
        vals["methods"] = tuple(s.strip() for s in vals["methods"].split(",") if s.strip())
    if "seed" in vals:
        vals["master_seed"] = vals.pop("seed")
    return ExperimentConfig(design=design, **vals)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    rejections: dict = field(repr=False)  # method -> bool array per replicate
    p_values: dict = field(repr=False)

    def rate(self, method: str) -> float:
        return float(np.mean(self.rejections[method]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "rows": self.rows}


class _Fixed:
    """Everything shared by all replicates of one experiment."""

    def __init__(self, config: ExperimentConfig):
        c = config
        self.X, self.B = gen_design_and_coefficients(c.n, c.p, c.m, c.delta, c.master_seed, c.d)
        self.mean = self.X @ self.B
        contrast = ContrastMatrix.last_k(c.p, c.m)
        self.data0 = RegressionData(self.X, np.zeros((c.n, 1)))
        self.proj = build_projections(self.data0, contrast)
        self.ts = solve_theta(self.proj)
        self.oracle_crit = None
        if "mixture_oracle" in c.methods:
            self.oracle_crit = mixture_oracle_quantile(
                self.ts, c.design.eigenvalues(), c.alpha, draws=c.mixture_draws,
                seed=derive_seed(c.master_seed, "mixture"))


def _replicate(config: ExperimentConfig, fx: _Fixed, r: int) -> dict:
    c = config
    V = c.design.sample(c.n, rng_for(c.master_seed, "rep", r))
    data = RegressionData(fx.X, fx.mean + V)
    rep_seed = derive_seed(c.master_seed, "rep", r, "calibrate")
    out = {}
    u = u_statistic(data.Y, fx.proj, fx.ts)
    plan = None
    if "clt" in c.methods or "gmb" in c.methods:
        plan = split_plan(fx.X, c.n_splits, rep_seed)
    if "clt" in c.methods:
        vs = split_estimator(data, plan=plan)
        o = clt_pvalue(u, vs.sd, fx.ts.frob, c.alpha)
        out["clt"] = (o.reject, o.p_value)
    if "gmb" in c.methods:
        o = multiplier_bootstrap(data, fx.proj, fx.ts, B=c.B, alpha=c.alpha, seed=rep_seed, plan=plan)
        out["gmb"] = (o.reject, o.p_value)
    if "mixture_oracle" in c.methods:
        z = u / (math.sqrt(2.0 * fx.ts.frob_sq * c.design.sigma_sq))
        out["mixture_oracle"] = (bool(z > fx.oracle_crit), float("nan"))
    return out


def _check_feasible(config: ExperimentConfig):
    if ("clt" in config.methods or "gmb" in config.methods) and config.p >= config.n // 2:
        raise InfeasibleError(
            f"split variance estimate needs p < n/2 (n={config.n}, p={config.p})",
            seed=config.master_seed)


def run_experiment(config: ExperimentConfig, threads: int | None = 1) -> ExperimentResult:
    """Empirical rejection frequency of each method over ``config.reps`` replicates."""
    _check_feasible(config)
    fx = _Fixed(config)
    reps = parallel_map(lambda r: _replicate(config, fx, r), range(config.reps), threads)
    rows, rej, pv = [], {}, {}
    for method in config.methods:
        flags = np.array([rep[method][0] for rep in reps], dtype=bool)
        rej[method] = flags
        pv[method] = np.array([rep[method][1] for rep in reps])
        k = int(flags.sum())
        rate = k / config.reps
        rows.append({
            "method": method, "n": config.n, "p": config.p, "m": config.m, "d": config.d,
            "design": config.design.label, "delta": config.delta, "reps": config.reps,
            "rejections": k, "rate": rate, "se": math.sqrt(rate * (1 - rate) / config.reps),
        })
    return ExperimentResult(config=config, rows=rows, rejections=rej, p_values=pv)


@dataclass(frozen=True)
class DensityTrace:
    values: np.ndarray
    skewness: float
    skewness_se: float

    def to_dict(self) -> dict:
        return {"skewness": self.skewness, "skewness_se": self.skewness_se,
                "values": self.values.tolist()}


def _skewness_se(k: int) -> float:
    return math.sqrt(6.0 * k * (k - 1) / ((k - 2) * (k + 1) * (k + 3)))


def density_trace(config: ExperimentConfig, reps: int | None = None,
                  threads: int | None = 1) -> DensityTrace:
    """Null draws of ``U_n / sqrt(2 |P_theta|_F^2 tr(Sigma^2))`` with the true ``tr(Sigma^2)``."""
    if config.delta != 0:
        raise ValidationError("density_trace needs a null configuration (delta = 0)")
    reps = config.reps if reps is None else reps
    if reps < 3:
        raise ValidationError("density_trace needs reps >= 3")
    fx = _Fixed(ExperimentConfig(**{**config.__dict__, "methods": ("clt",)}))
    scale = math.sqrt(2.0 * fx.ts.frob_sq * config.design.sigma_sq)

    def one(r: int) -> float:
        V = config.design.sample(config.n, rng_for(config.master_seed, "rep", r))
        return u_statistic(V, fx.proj, fx.ts) / scale

    values = np.array(parallel_map(one, range(reps), threads))
    return DensityTrace(values=values, skewness=float(stats.skew(values, bias=False)),
                        skewness_se=_skewness_se(reps))


def variance_study(design: InnovationDesign, n: int, p: int, reps: int = 200, seed: int = 0,
                   n_splits: int = 10, threads: int | None = 1) -> list[dict]:
    """Relative error ``|s_hat / s - 1|`` of the three ``tr(Sigma^2)`` estimators.

    The response is pure innovation noise on the frozen design (all three
    estimators are invariant to the mean ``X B``).  Returns one row per
    estimator with the mean relative error, its standard error, and the
    mean estimate.
    """
    if reps < 2:
        raise ValidationError("variance_study needs reps >= 2")
    X, _ = gen_design_and_coefficients(n, p, 1, 0.0, seed, 1)
    truth = design.sigma_sq

    def one(r: int) -> tuple[float, float, float]:
        V = design.sample(n, rng_for(seed, "rep", r))
        data = RegressionData(X, V)
        split = split_estimator(data, n_splits, derive_seed(seed, "rep", r, "split")).value
        oracle = oracle_estimator(V).value
        Q, _ = np.linalg.qr(X)
        Vhat = V - Q @ (Q.T @ V)
        sriv = srivastava_estimator(Vhat, n, p).value
        return split, oracle, sriv

    est = np.array(parallel_map(one, range(reps), threads))
    rows = []
    for j, name in enumerate(("split", "oracle", "srivastava")):
        err = np.abs(np.sqrt(est[:, j] / truth) - 1.0)
        rows.append({
            "method": name, "n": n, "p": p, "d": design.d, "design": design.label,
            "reps": reps, "truth": truth, "mean_estimate": float(est[:, j].mean()),
            "mean_abs_rel_error": float(err.mean()),
            "se": float(err.std(ddof=1) / math.sqrt(reps)),
        })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def rows_to_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=2)
