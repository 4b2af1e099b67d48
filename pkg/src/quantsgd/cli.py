"""Command-line entry point.

Subcommands: ``estimate`` (stream numbers through SGD + KDE), ``oracle``
(stationary law and bound checks), and the ``coverage``, ``mse`` and
``normality`` Monte Carlo experiments. Exit status is 0 on success, 1 on a
usage error and 2 when a computation fails.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, oracle
from .core import RationalQuantile, SgdConfig
from .distributions import parse_distribution
from .inference import StreamingEstimator

OUTPUT_DIR_ENV = "QUANTSGD_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

CHECKS = ("balance", "drift", "mgf", "tail", "moments", "normality")
MGF_BETA = 3.5
TAIL_K0 = 5
DRIFT_EPS = 0.25
MOMENT_K = 10.0
KS_LIMIT = 0.05
CHUNK = 1 << 16


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _positive_float(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _add_model_flags(sp: argparse.ArgumentParser, eta_grid: bool = False) -> None:
    sp.add_argument("--tau", required=True, help="quantile level, e.g. 3/4 or 0.75")
    if eta_grid:
        sp.add_argument("--eta", required=True, help="learning rate(s), comma separated")
    else:
        sp.add_argument("--eta", required=True, type=_positive_float, help="learning rate")
    sp.add_argument("--theta0", type=float, default=0.0, help="initial iterate (default 0)")


def _add_experiment_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--dist", required=True, help="sampling law, e.g. beta:2,3 or cauchy:0,2")
    _add_model_flags(sp, eta_grid=True)
    sp.add_argument("--n", required=True, help="step count checkpoint(s), comma separated")
    sp.add_argument("--reps", type=int, default=500, help="Monte Carlo replications (default 500)")
    sp.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level (default 0.05)")
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--burn-in", type=int, default=0, help="SGD steps discarded before n counts")
    sp.add_argument("--workers", type=int, default=1, help="replication threads")
    sp.add_argument("--kernel", choices=("epanechnikov", "rectangle"), default="epanechnikov")
    sp.add_argument("--kde-point", choices=experiments.KDE_POINTS, default="iterate",
                    help="evaluate the density at the running iterate or at the true quantile")
    sp.add_argument("--randomized-init", action="store_true",
                    help="shift theta0 by a random multiple of eta/q per replication")
    sp.add_argument("--out", help=f"output file (relative paths resolve under ${OUTPUT_DIR_ENV})")
    sp.add_argument("--format", choices=experiments.FORMATS, default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quantsgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("estimate", help="online quantile estimate and interval from a data stream")
    _add_model_flags(sp)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--kernel", choices=("epanechnikov", "rectangle"), default="epanechnikov")
    sp.add_argument("--input", default="-", help="file with one number per line ('-' = stdin)")

    sp = sub.add_parser("oracle", help="stationary law of the iterate chain and bound checks")
    sp.add_argument("--dist", required=True)
    _add_model_flags(sp)
    sp.add_argument("--k-trunc", type=int, help="truncation half-width in lattice units")
    sp.add_argument("--checks", default="", help="'all' or a comma list of " + ",".join(CHECKS))
    sp.add_argument("--out", help="write the CSV here instead of stdout")

    for name, text in (("coverage", "empirical coverage of the online interval"),
                       ("mse", "mean squared error against the step count"),
                       ("normality", "standardized iterate histogram and KS distance")):
        sp = sub.add_parser(name, help=text)
        _add_experiment_flags(sp)
        if name == "normality":
            sp.add_argument("--bins", type=int, default=40)
    return parser


def _resolve_out(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _emit(text: str, out: Path | None, stdout) -> None:
    if out is None:
        stdout.write(text)
    else:
        out.write_text(text)


def _read_numbers(stream):
    """Yield float chunks from newline-delimited text, skipping blanks and ``#`` lines."""
    buf = []
    for lineno, line in enumerate(stream, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            buf.append(float(s))
        except ValueError:
            raise UsageError(f"line {lineno}: not a number: {s!r}") from None
        if len(buf) >= CHUNK:
            yield np.array(buf)
            buf = []
    if buf:
        yield np.array(buf)


def _parse_tau(text: str) -> RationalQuantile:
    try:
        return RationalQuantile.parse(text)
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise UsageError(f"bad --tau {text!r}: {exc}") from None


def _parse_dist(text: str):
    try:
        return parse_distribution(text)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad --dist {text!r}: {exc}") from None


def _cmd_estimate(args, stdin, stdout) -> int:
    quantile = _parse_tau(args.tau)
    if not (0 < args.alpha < 1):
        raise UsageError("--alpha must lie in (0, 1)")
    est = StreamingEstimator(SgdConfig(quantile, args.eta, (args.theta0,)), kernel=args.kernel)
    stream = stdin if args.input == "-" else open(args.input)
    try:
        for chunk in _read_numbers(stream):
            est.update(chunk)
    finally:
        if stream is not stdin:
            stream.close()
    if est.n == 0:
        raise ArithmeticError("no data read")
    ci = est.interval(args.alpha)
    doc = {"theta": est.theta, "f_hat": est.f_hat, "ci_lo": ci.lower, "ci_hi": ci.upper, "n": est.n}
    stdout.write(json.dumps(doc) + "\n")
    return EXIT_OK


def _parse_checks(text: str) -> list[str]:
    if not text:
        return []
    if text.strip() == "all":
        return list(CHECKS)
    names = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in names if c not in CHECKS]
    if bad:
        raise UsageError(f"unknown check(s) {bad}; choose from {CHECKS} or 'all'")
    return names


def _verdict(ok: bool) -> str:
    return "pass" if ok else "FAIL"


def oracle_report(dist, quantile, eta, checks, theta0=0.0, k_trunc=None):
    """Solve the chain and return ``(stationary law, verdict lines)``."""
    if k_trunc is None:
        target = float(dist.quantile(quantile.tau))
        k_trunc = oracle.default_truncation(quantile, eta, float(dist.pdf(target)))
        if "tail" in checks:
            k_trunc = max(k_trunc, oracle.tail_index(eta, quantile.q, TAIL_K0) + quantile.q)
    chain = oracle.build_chain(quantile, eta, dist, k_trunc=k_trunc, theta0=theta0)
    pi = oracle.stationary_solve(chain)
    q = quantile.q
    lines = []
    if "balance" in checks:
        r = oracle.balance_residual(pi, chain)
        lines.append(f"balance residual={r:.3e} limit=1e-10 {_verdict(r <= 1e-10)}")
    if "drift" in checks:
        rep = oracle.foster_drift_search(chain, DRIFT_EPS)
        lines.append(f"drift window=[{rep.window[0]},{rep.window[1]}] margin={rep.min_margin:.4f} "
                     f"epsilon={DRIFT_EPS} {_verdict(rep.min_margin <= -DRIFT_EPS)}")
    if "mgf" in checks:
        for d in (0, 1, 2):
            s, ok = oracle.mgf_bound_check(pi, MGF_BETA, d)
            lines.append(f"mgf beta={MGF_BETA} d={d} S={s:.4e} bound={q * q} {_verdict(ok)}")
    if "tail" in checks:
        t, ok = oracle.tail_bound_check(pi, TAIL_K0, MGF_BETA)
        n_idx = oracle.tail_index(eta, q, TAIL_K0)
        lines.append(f"tail K0={TAIL_K0} N={n_idx} mass={t:.4e} "
                     f"bound={q * q * eta ** (TAIL_K0 - MGF_BETA):.4e} {_verdict(ok)}")
    if "moments" in checks:
        m1, m2 = oracle.moment_check(pi)
        b1, b2 = MOMENT_K * math.log(1 / eta), MOMENT_K * math.log(eta) ** 2
        lines.append(f"moments m1={m1:.4f} bound={b1:.4f} m2={m2:.4f} bound={b2:.4f} "
                     f"{_verdict(m1 <= b1 and m2 <= b2)}")
    if "normality" in checks:
        ks = oracle.normality_check(pi, chain.density_at_quantile)
        _, m2 = oracle.moment_check(pi)
        ratio = m2 / oracle.asymptotic_variance(quantile, chain.density_at_quantile)
        lines.append(f"normality ks={ks:.4f} limit={KS_LIMIT} variance_ratio={ratio:.4f} "
                     f"{_verdict(ks < KS_LIMIT)}")
    lines.append(f"truncation mass<={pi.truncated_mass_bound:.3e} states={pi.pi.size}")
    return pi, lines


def _cmd_oracle(args, stdin, stdout) -> int:
    quantile = _parse_tau(args.tau)
    dist = _parse_dist(args.dist)
    checks = _parse_checks(args.checks)
    out = _resolve_out(args.out)
    pi, lines = oracle_report(dist, quantile, args.eta, checks, args.theta0, args.k_trunc)
    buf = io.StringIO()
    pi.to_csv(buf)
    _emit(buf.getvalue(), out, stdout)
    for line in lines:
        stdout.write("# " + line + "\n")
    return EXIT_OK


def _experiment_config(args) -> experiments.ExperimentConfig:
    return experiments.ExperimentConfig(
        distribution=_parse_dist(args.dist),
        quantile=_parse_tau(args.tau),
        eta_grid=experiments.parse_grid(args.eta, float),
        n_grid=experiments.parse_grid(args.n, int),
        replications=args.reps, alpha=args.alpha, seed=args.seed, burn_in=args.burn_in,
        output_path=args.out, format=args.format, theta0=args.theta0, kernel=args.kernel,
        kde_point=args.kde_point, randomized_init=args.randomized_init, workers=args.workers,
    )


def _cmd_experiment(args, stdin, stdout) -> int:
    try:
        config = _experiment_config(args)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    out = _resolve_out(config.output_path)
    if args.command == "coverage":
        report = experiments.coverage_experiment(config)
    elif args.command == "mse":
        report = experiments.mse_curve(config)
    else:
        report = experiments.normality_experiment(config, bins=args.bins)
    _emit(experiments.write_report(report, None, config.format), out, stdout)
    return EXIT_OK


_COMMANDS = {
    "estimate": _cmd_estimate,
    "oracle": _cmd_oracle,
    "coverage": _cmd_experiment,
    "mse": _cmd_experiment,
    "normality": _cmd_experiment,
}


def main(argv=None, stdin=None, stdout=None, stderr=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        stderr.write(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args, stdin, stdout)
    except UsageError as exc:
        stderr.write(f"quantsgd {args.command}: {exc}\n")
        return EXIT_USAGE
    except (ArithmeticError, ValueError, MemoryError) as exc:
        stderr.write(f"quantsgd {args.command}: {exc}\n")
        return EXIT_NUMERIC
    except OSError as exc:
        stderr.write(f"quantsgd {args.command}: {exc}\n")
        return EXIT_USAGE
