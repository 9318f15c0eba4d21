"""Command-line interface.

Subcommands: ``test``, ``ksample``, ``npksample``, ``simulate``,
``varest`` and ``featurewise``.  Results go to stdout or ``--output`` as
JSON (``"schema": 1``) or CSV.  Exit status is 0 on success, 2 for
invalid input and 3 for numerical or precondition failures; failures
print a JSON error object on stdout and never leave a partial output
file behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import clt_pvalue, condclt_check, multiplier_bootstrap
from .errors import LoadError, ManovaError, ValidationError
from .featurewise import featurewise_tests
from .ksample import GroupedSample, Kernel, ksample_test
from .model import (ContrastMatrix, RegressionData, build_projections, leverage_report,
                    load_csv, read_table, _to_matrix)
from .sim import density_trace, load_config, rows_to_csv, run_experiment, variance_study
from .stat import u_statistic
from .theta import solve_theta
from .varest import oracle_estimator, split_estimator, srivastava_estimator

SCHEMA = 1
log = logging.getLogger("hdmanova")


# -- output ------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _render(payload: dict, rows: list[dict] | None, fmt: str) -> str:
    if fmt == "csv":
        if rows is None:
            rows = [{k: v for k, v in payload.items() if not isinstance(v, (dict, list))}]
        return rows_to_csv([_jsonable(r) for r in rows])
    doc = {"schema": SCHEMA, "version": __version__,
           "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    doc.update(payload)
    return json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n"


def _write(text: str, output: str | None):
    if output is None:
        sys.stdout.write(text)
        return
    target = Path(output)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _emit_error(exc: Exception, code: int) -> int:
    err = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ManovaError):
        err["details"] = exc.details()
    sys.stdout.write(json.dumps(_jsonable({"schema": SCHEMA, "error": err}), indent=2) + "\n")
    return code


# -- input helpers ---------------------------------------------------------

def _transform(Y: np.ndarray, args) -> np.ndarray:
    if not args.log:
        return Y
    shifted = Y + args.pseudo
    if np.any(shifted <= 0):
        i, j = map(int, np.argwhere(shifted <= 0)[0])
        raise ValidationError(f"log transform of non-positive value at row {i + 1}, column {j + 1}; "
                              "raise --pseudo")
    return np.log(shifted)


def _load_regression(args) -> RegressionData:
    data = load_csv(args.design, args.response, intercept=args.intercept)
    if args.log:
        data = data.with_response(_transform(data.Y, args))
    return data


def _load_grouped(args) -> GroupedSample:
    header, rows = read_table(args.data)
    width = len(rows[0])
    col = args.group_col
    if col.isdigit():
        idx = int(col) - 1
    elif header is not None and col in header:
        idx = header.index(col)
    else:
        raise ValidationError(f"group column {col!r} not found")
    if not 0 <= idx < width:
        raise ValidationError(f"group column {col!r} is out of range (file has {width} columns)")
    first = 2 if header else 1
    for i, r in enumerate(rows):
        if len(r) != width:
            raise LoadError(f"ragged row: expected {width} cells, found {len(r)}",
                            path=args.data, row=i + first)
    labels = np.array([r[idx].strip() for r in rows])
    values = _to_matrix([r[:idx] + r[idx + 1:] for r in rows], args.data, first)
    if values.shape[1] == 0:
        raise ValidationError("data file has no feature columns besides the group column")
    values = _transform(values, args)
    if np.unique(labels).size < 2:
        raise ValidationError("need at least two groups")
    return GroupedSample.from_labels(values, labels)


# -- subcommands -------------------------------------------------------------

def cmd_test(args):
    data = _load_regression(args)
    contrast = ContrastMatrix.parse(args.contrast, data.p)
    proj = build_projections(data, contrast)
    lev = leverage_report(data, proj, args.varpi0, args.varpi1)
    ts = solve_theta(proj, args.varpi0, args.varpi1)
    u = u_statistic(data.Y, proj, ts)
    results = {}
    if args.method in ("clt", "both"):
        vs = split_estimator(data, args.n_splits, args.seed)
        Vhat = proj.Pbar1 @ data.Y
        cond = condclt_check(Vhat @ Vhat.T, proj.m)
        results["clt"] = {**clt_pvalue(u, vs.sd, ts.frob, args.alpha, cond).to_dict(),
                          "seed": args.seed}
    if args.method in ("gmb", "both"):
        results["gmb"] = multiplier_bootstrap(data, proj, ts, B=args.B, alpha=args.alpha,
                                              seed=args.seed, n_splits=args.n_splits,
                                              threads=args.threads).to_dict()
    payload = {"command": "test", "n": data.n, "p": data.p, "d": data.d, "m": proj.m,
               "statistic": u, "seed": args.seed, "leverage": lev.to_dict(), "results": results}
    rows = [{"method": k, **{f: v for f, v in r.items() if not isinstance(v, dict)}}
            for k, r in results.items()]
    return payload, rows


def _ksample_payload(name: str, sample: GroupedSample, outcome) -> tuple[dict, list]:
    out = outcome.to_dict()
    payload = {"command": name, "K": sample.K, "sizes": sample.sizes, "d": sample.d,
               "result": out}
    return payload, [{k: v for k, v in out.items() if not isinstance(v, dict)}]


def cmd_ksample(args):
    sample = _load_grouped(args)
    outcome = ksample_test(sample, "linear", args.calibration, B=args.B, alpha=args.alpha,
                           seed=args.seed, threads=args.threads)
    return _ksample_payload("ksample", sample, outcome)


def cmd_npksample(args):
    sample = _load_grouped(args)
    kernel = Kernel(args.kernel, kappa=args.kappa, gamma=args.gamma)
    outcome = ksample_test(sample, kernel, "permutation", B=args.B, alpha=args.alpha,
                           seed=args.seed, threads=args.threads)
    return _ksample_payload("npksample", sample, outcome)


def cmd_simulate(args):
    config = load_config(args.config)
    if args.reps is not None or args.seed is not None:
        fields = dict(config.__dict__)
        if args.reps is not None:
            fields["reps"] = args.reps
        if args.seed is not None:
            fields["master_seed"] = args.seed
        config = type(config)(**fields)
    if args.density:
        tr = density_trace(config, threads=args.threads)
        rows = [{"replicate": i, "standardized": float(v)} for i, v in enumerate(tr.values)]
        return {"command": "simulate", "config": config.to_dict(), "density": tr.to_dict()}, rows
    result = run_experiment(config, threads=args.threads)
    return {"command": "simulate", **result.to_dict()}, result.rows


def cmd_varest(args):
    if args.study:
        config = load_config(args.study)
        seed = config.master_seed if args.seed is None else args.seed
        rows = variance_study(config.design, config.n, config.p, reps=config.reps, seed=seed,
                              n_splits=args.n_splits, threads=args.threads)
        return {"command": "varest", "study": rows}, rows
    if args.response is None:
        raise ValidationError("varest needs --response (or --study CONFIG)")
    seed = 0 if args.seed is None else args.seed
    if args.method == "oracle":
        est = oracle_estimator(_read_response(args))
    else:
        if args.design is None:
            raise ValidationError(f"--method {args.method} needs --design")
        data = _load_regression(args)
        if args.method == "split":
            est = split_estimator(data, args.n_splits, seed)
        else:
            Q, _ = np.linalg.qr(data.X)
            Vhat = data.Y - Q @ (Q.T @ data.Y)
            est = srivastava_estimator(Vhat, data.n, data.p)
    out = est.to_dict()
    return {"command": "varest", "estimate": out}, [out]


def _read_response(args) -> np.ndarray:
    header, rows = read_table(args.response)
    return _transform(_to_matrix(rows, args.response, 2 if header else 1), args)


def cmd_featurewise(args):
    data = _load_regression(args)
    contrast = ContrastMatrix.parse(args.contrast, data.p)
    rep = featurewise_tests(data, contrast, args.alpha)
    rows = [{"feature": j + 1, "statistic": float(rep.statistics[j]),
             "p_value": float(rep.p_values[j]), "adjusted": float(rep.adjusted[j]),
             "discovered": bool(rep.discoveries[j])} for j in range(data.d)]
    return {"command": "featurewise", **rep.to_dict()}, rows


# -- parser ------------------------------------------------------------------

def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=_alpha, default=0.05)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: all cores); results do not depend on it")
    common.add_argument("--output", "-o", default=None, help="write here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--log-level", default="WARNING")

    transform = argparse.ArgumentParser(add_help=False)
    transform.add_argument("--log", action="store_true", help="log-transform responses")
    transform.add_argument("--pseudo", type=float, default=0.5,
                           help="pseudo-count added before --log (default 0.5)")

    regression = argparse.ArgumentParser(add_help=False)
    regression.add_argument("--design", required=True, help="design matrix CSV (n x p)")
    regression.add_argument("--response", required=True, help="response CSV (n x d)")
    regression.add_argument("--intercept", action="store_true", help="prepend a column of ones")
    regression.add_argument("--contrast", default="last-1",
                            help='"last-k" or a path to an m x p contrast CSV (default last-1)')

    grouped = argparse.ArgumentParser(add_help=False)
    grouped.add_argument("--data", required=True, help="CSV with one group-label column")
    grouped.add_argument("--group-col", default="1", help="name or 1-based index (default 1)")
    grouped.add_argument("--B", type=int, default=1000, help="permutations (default 1000)")
    grouped.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(prog="hdmanova",
                                     description="High-dimensional MANOVA and K-sample tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", parents=[common, transform, regression],
                       help="test C B = 0 in Y = X B + V")
    p.add_argument("--method", choices=("clt", "gmb", "both"), default="both")
    p.add_argument("--B", type=int, default=1000, help="bootstrap draws (default 1000)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-splits", type=_positive_int, default=10)
    p.add_argument("--varpi0", type=float, default=0.49)
    p.add_argument("--varpi1", type=float, default=0.49)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("ksample", parents=[common, transform, grouped],
                       help="equality of K mean vectors")
    p.add_argument("--calibration", choices=("permutation", "clt"), default="permutation")
    p.set_defaults(func=cmd_ksample)

    p = sub.add_parser("npksample", parents=[common, transform, grouped],
                       help="equality of K distributions (kernel statistic)")
    p.add_argument("--kernel", choices=("laplace", "gaussian", "energy"), default="laplace")
    p.add_argument("--kappa", type=float, default=None, help="Laplace rate (default: 1/median distance)")
    p.add_argument("--gamma", type=float, default=None, help="Gaussian rate (default: 1/median^2)")
    p.set_defaults(func=cmd_npksample)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo size/power table")
    p.add_argument("--config", required=True, help="key = value experiment file")
    p.add_argument("--reps", type=_positive_int, default=None, help="override reps")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--density", action="store_true",
                   help="emit standardized null statistics instead of rejection rates")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("varest", parents=[common, transform], help="estimate tr(Sigma^2)")
    p.add_argument("--method", choices=("split", "srivastava", "oracle"), default="split")
    p.add_argument("--design", default=None)
    p.add_argument("--response", default=None)
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--n-splits", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--study", default=None, metavar="CONFIG",
                   help="run the estimator comparison study for an experiment config")
    p.set_defaults(func=cmd_varest)

    p = sub.add_parser("featurewise", parents=[common, transform, regression],
                       help="per-feature tests with Holm adjustment")
    p.set_defaults(func=cmd_featurewise)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        payload, rows = args.func(args)
        text = _render(payload, rows, args.format)
        _write(text, args.output)
    except ManovaError as exc:
        log.debug("failed", exc_info=True)
        return _emit_error(exc, exc.exit_code)
    except OSError as exc:
        return _emit_error(exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
