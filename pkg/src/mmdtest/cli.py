"""mmdtest command-line interface.

Subcommands: test, moments, null-quantile, power-sim, accuracy.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import null_approx as na
from . import simulation as sim
from .io import DataFormatError, read_csv, write_csv
from .kernel_core import GaussianParams, KernelConfig
from .normality import kernel_normality_test
from .statistic import DegenerateDataError, bandwidth_dim_power, bandwidth_median, sample_moments

log = logging.getLogger("mmdtest")

EXIT_OK, EXIT_ERROR, EXIT_REJECT = 0, 1, 2

ENGINE_NAMES = {
    "moment-chisq": "moment_chisq",
    "gram-chisq": "gram_chisq",
    "spec-sum": "spec_sum",
    "monte-carlo": "monte_carlo",
}
FAMILY_NAMES = {"gaussian": "gaussian", "uniform": "uniform_std", "exponential": "exponential_std"}
CORRELATION_NAMES = {"independent": "independent", "banded": "banded_geometric"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for rejection here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    command: str
    sigma_rule: str
    alpha: float = 0.05
    seed: int = 0
    output: str = "text"
    input_path: str | None = None
    engine: str | None = None
    knobs: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# argument helpers


def _sigma_spec(text: str) -> tuple[str, float | None]:
    text = text.strip()
    if text == "median":
        return ("median", None)
    rule, _, value = text.partition(":")
    if rule in ("dim-power", "explicit") and value:
        try:
            num = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad number in sigma rule {text!r}") from None
        if rule == "explicit" and not num > 0:
            raise argparse.ArgumentTypeError("explicit sigma must be positive")
        return (rule, num)
    raise argparse.ArgumentTypeError(f"sigma rule must be median, dim-power:E or explicit:S (got {text!r})")


def _alpha(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be a number, got {text!r}") from None
    if not 0.0 < val < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {val}")
    return val


def _positive_int(text: str) -> int:
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {val}")
    return val


def _resolve_sigma(rule, d, data=None) -> KernelConfig:
    kind, value = rule
    if kind == "median":
        if data is None:
            raise UsageError("--sigma median needs input data; use dim-power:E or explicit:S")
        return KernelConfig(bandwidth_median(data), "median_heuristic")
    if kind == "dim-power":
        return KernelConfig(bandwidth_dim_power(d, value), "dim_power", value)
    return KernelConfig(value, "explicit")


def _rule_text(rule):
    kind, value = rule
    return kind if value is None else f"{kind}:{value!r}"


def _default_seed():
    env = os.environ.get("MMDTEST_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MMDTEST_SEED must be an integer, got {env!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: $MMDTEST_SEED or 0)")
    common.add_argument("--alpha", type=_alpha, default=0.05, help="significance level (default 0.05)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads for simulations")
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="output", action="store_const", const="json", help="emit one JSON object")
    fmt.add_argument("--csv", dest="output", action="store_const", const="csv", help="emit flat CSV rows")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common.set_defaults(output="text")

    data = _Parser(add_help=False)
    data.add_argument("input", help="CSV file, one observation per row")
    data.add_argument("--header", action="store_true", help="skip the first line")
    data.add_argument("--transpose", action="store_true", help="file is features x samples")
    data.add_argument("--dump", metavar="PATH", help="write the parsed dataset back out as CSV")

    gram = _Parser(add_help=False)
    gram.add_argument("--l-gram", type=_positive_int, default=na.DEFAULT_L_GRAM, help="Gram size for gram-chisq")
    gram.add_argument("--l-spec", type=_positive_int, default=na.DEFAULT_L_SPEC, help="Gram size for spec-sum")
    gram.add_argument("--spec-draws", type=_positive_int, default=na.DEFAULT_SPEC_DRAWS, help="draws for spec-sum")

    parser = _Parser(prog="mmdtest", description="Kernel MMD test of multivariate normality.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("test", parents=[common, data, gram], help="test a dataset for normality")
    p.add_argument("--sigma", type=_sigma_spec, default=("median", None), help="median | dim-power:E | explicit:S")
    p.add_argument("--engine", choices=sorted(ENGINE_NAMES), default="moment-chisq", help="null approximation")
    p.add_argument("--iters", type=_positive_int, default=2000, help="Monte-Carlo iterations (monte-carlo engine)")
    p.add_argument("--exit-code", action="store_true", help="exit with status 2 when H0 is rejected")

    p = sub.add_parser("moments", parents=[common, data], help="null mean/variance and c*chi2_r fit for a dataset")
    p.add_argument("--sigma", type=_sigma_spec, default=("median", None), help="median | dim-power:E | explicit:S")

    p = sub.add_parser("null-quantile", parents=[common], help="Monte-Carlo null quantiles of n*Delta^2")
    p.add_argument("--d", type=_positive_int, help="dimension (reference N(0, I_d))")
    p.add_argument("--n", type=_positive_int, help="sample size (default: rows of --input)")
    p.add_argument("--input", help="CSV dataset; simulate under N(m_hat, S_hat) instead of N(0, I)")
    p.add_argument("--header", action="store_true", help="skip the first line of --input")
    p.add_argument("--transpose", action="store_true", help="--input is features x samples")
    p.add_argument("--sigma", type=_sigma_spec, default=("dim-power", 1.0), help="median | dim-power:E | explicit:S")
    p.add_argument("--iters", type=_positive_int, default=2000, help="Monte-Carlo iterations")
    p.add_argument("--samples", action="store_true", help="include the sorted simulated statistics")

    p = sub.add_parser("power-sim", parents=[common], help="power of the test against a standardized alternative")
    p.add_argument("--family", choices=sorted(FAMILY_NAMES), required=True)
    p.add_argument("--correlation", choices=sorted(CORRELATION_NAMES), default="independent")
    p.add_argument("--d", type=_positive_int, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--sigma", type=_sigma_spec, default=("dim-power", 1.0), help="dim-power:E | explicit:S")
    p.add_argument("--reps", type=_positive_int, default=200, help="alternative replications")
    p.add_argument("--null-iters", type=_positive_int, default=2000, help="Monte-Carlo null iterations")
    p.add_argument(
        "--threshold",
        choices=["monte-carlo", "moment-chisq"],
        default="monte-carlo",
        help="critical value: Monte-Carlo under N(0, I) or c*chi2_r per replication",
    )

    p = sub.add_parser("accuracy", parents=[common, gram], help="compare approximate critical points to Monte-Carlo")
    p.add_argument("--d", type=_positive_int, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--sigma", type=_sigma_spec, default=("dim-power", 1.0), help="dim-power:E | explicit:S")
    p.add_argument("--iters", type=_positive_int, default=2000, help="Monte-Carlo iterations for the reference")
    p.add_argument(
        "--engines",
        default="moment-chisq,gram-chisq,spec-sum",
        help="comma-separated subset of moment-chisq,gram-chisq,spec-sum (empty for none)",
    )
    p.add_argument("--timing", action="store_true", help="include wall-clock timings (not reproducible)")
    return parser


# --------------------------------------------------------------------------
# rendering


def _fmt(x):
    if isinstance(x, bool) or x is None:
        return str(x)
    if isinstance(x, (float, np.floating)):
        return f"{x:.6g}"
    return str(x)


def _table(headers, rows):
    cells = [[_fmt(h) for h in headers]] + [[_fmt(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _kv(pairs):
    width = max(len(k) for k, _ in pairs)
    return "\n".join(f"{k.ljust(width)}  {_fmt(v)}" for k, v in pairs)


def _csv_text(headers, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    for row in rows:
        writer.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in row])
    return buf.getvalue().rstrip("\n")


def _emit(config: RunConfig, result: dict, text: str, csv_headers, csv_rows):
    if config.output == "json":
        doc = {
            "command": config.command,
            "config": config.to_dict(),
            "result": result,
            "seed": config.seed,
            "version": __version__,
        }
        print(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False, default=_json_default))
    elif config.output == "csv":
        print(_csv_text(csv_headers, csv_rows))
    else:
        print(text)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


# --------------------------------------------------------------------------
# commands


def _load(args):
    data = read_csv(args.input, header=args.header, transpose=args.transpose)
    if getattr(args, "dump", None):
        write_csv(data, args.dump)
    return data


def cmd_test(args, config: RunConfig) -> int:
    data = _load(args)
    if args.sigma[0] == "median" and data.n < 2:
        raise UsageError("--sigma median needs at least two rows")
    kernel = _resolve_sigma(args.sigma, data.d, data)
    res = kernel_normality_test(
        data,
        sigma=kernel.sigma,
        engine=config.engine,
        alpha=config.alpha,
        seed=config.seed,
        iterations=args.iters,
        l_gram=args.l_gram,
        l_spec=args.l_spec,
        spec_draws=args.spec_draws,
        threads=args.threads,
    )
    result = res.to_dict()
    result["sigma_rule"] = kernel.rule
    text = _kv(
        [
            ("n", res.n),
            ("d", res.d),
            ("sigma", res.sigma),
            ("sigma rule", kernel.rule),
            ("n*Delta^2", res.statistic),
            ("engine", res.engine),
            (f"t_{res.alpha:g}", res.critical_value),
            ("p-value", res.p_value),
            ("reject H0", res.reject),
        ]
    )
    headers = list(result)
    _emit(config, result, text, headers, [[result[h] for h in headers]])
    if args.exit_code and res.reject:
        return EXIT_REJECT
    return EXIT_OK


def cmd_moments(args, config: RunConfig) -> int:
    data = _load(args)
    if args.sigma[0] == "median" and data.n < 2:
        raise UsageError("--sigma median needs at least two rows")
    kernel = _resolve_sigma(args.sigma, data.d, data)
    params = sample_moments(data)
    moments = na.null_moments(params, kernel.sigma)
    e_z, v_z = moments.e_z, moments.v_z
    degenerate = v_z == 0.0
    if degenerate:
        log.warning("sample covariance is (numerically) zero; the c*chi2_r fit is degenerate")
        c = r = t = None
    else:
        fit = na.fit_chisq(moments)
        c, r, t = fit.c, fit.r, na.chisq_quantile(fit, config.alpha)
    result = {
        "n": data.n,
        "d": data.d,
        "sigma": kernel.sigma,
        "sigma_rule": kernel.rule,
        "e_z": e_z,
        "v_z": v_z,
        "c": c,
        "r": r,
        "alpha": config.alpha,
        "critical_value": t,
        "degenerate": degenerate,
    }
    text = _kv(
        [
            ("n", data.n),
            ("d", data.d),
            ("sigma", kernel.sigma),
            ("E[Z]", e_z),
            ("V[Z]", v_z),
            ("c", c),
            ("r", r),
            (f"t_{config.alpha:g}", t),
        ]
    )
    if degenerate:
        text += "\nwarning: sample covariance is zero; null distribution is degenerate at 0"
    headers = list(result)
    _emit(config, result, text, headers, [[result[h] for h in headers]])
    return EXIT_OK


def cmd_null_quantile(args, config: RunConfig) -> int:
    data = None
    if args.input:
        data = read_csv(args.input, header=args.header, transpose=args.transpose)
        reference = sample_moments(data)
        d = data.d
        if args.d is not None and args.d != d:
            raise UsageError(f"--d {args.d} conflicts with the {d} columns of --input")
        n = args.n or data.n
    else:
        if args.d is None or args.n is None:
            raise UsageError("null-quantile needs --d and --n (or --input)")
        d, n = args.d, args.n
        reference = GaussianParams.standard(d)
    if args.iters < 100:
        raise UsageError("--iters must be at least 100")
    kernel = _resolve_sigma(args.sigma, d, data)
    sims = na.monte_carlo_null(reference, n, kernel.sigma, args.iters, config.seed, args.threads)
    alphas = sorted({*sim.ALPHAS, config.alpha}, reverse=True)
    quantiles = {str(a): na.upper_quantile(sims, a) for a in alphas}
    result = {
        "d": d,
        "n": n,
        "sigma": kernel.sigma,
        "sigma_rule": kernel.rule,
        "iterations": args.iters,
        "reference": "sample" if data is not None else "standard",
        "alpha": config.alpha,
        "quantile": quantiles[str(config.alpha)],
        "quantiles": quantiles,
        "mean": float(sims.mean()),
        "variance": float(sims.var(ddof=1)),
    }
    if args.samples:
        result["samples"] = sims.tolist()
    rows = [[a, quantiles[str(a)]] for a in alphas]
    text = f"d={d}  n={n}  sigma={kernel.sigma:.6g}  iterations={args.iters}\n" + _table(["alpha", "t_alpha"], rows)
    _emit(config, result, text, ["alpha", "t_alpha"], rows)
    return EXIT_OK


def cmd_power_sim(args, config: RunConfig) -> int:
    if args.sigma[0] == "median":
        raise UsageError("power-sim needs --sigma dim-power:E or explicit:S")
    if args.reps < 100:
        raise UsageError("--reps must be at least 100")
    if args.threshold == "monte-carlo" and args.null_iters < 100:
        raise UsageError("--null-iters must be at least 100")
    kernel = _resolve_sigma(args.sigma, args.d)
    spec = sim.AlternativeSpec(FAMILY_NAMES[args.family], args.d, CORRELATION_NAMES[args.correlation])
    report = sim.power_experiment(
        spec,
        args.n,
        kernel.sigma,
        replications=args.reps,
        null_iterations=args.null_iters,
        seed=config.seed,
        alpha=config.alpha,
        threshold=None if args.threshold == "monte-carlo" else "moment_chisq",
        threads=args.threads,
        sigma_rule=_rule_text(args.sigma),
    )
    result = report.to_dict()
    if result["threshold"] != result["threshold"]:  # NaN: per-replication thresholds
        result["threshold"] = None
    headers = ["family", "correlation", "d", "n", "sigma", "power", "rejections", "replications"]
    row = [result[h] for h in headers]
    _emit(config, result, _table(headers, [row]), list(result), [[result[h] for h in result]])
    return EXIT_OK


def cmd_accuracy(args, config: RunConfig) -> int:
    if args.sigma[0] == "median":
        raise UsageError("accuracy needs --sigma dim-power:E or explicit:S")
    if args.iters < 500:
        raise UsageError("--iters must be at least 500 for the reference quantiles")
    names = [e.strip() for e in args.engines.split(",") if e.strip()]
    bad = [e for e in names if e not in ENGINE_NAMES or e == "monte-carlo"]
    if bad:
        raise UsageError(f"unknown engine(s) {bad}; choose from moment-chisq, gram-chisq, spec-sum")
    engines = [ENGINE_NAMES[e] for e in names]
    kernel = _resolve_sigma(args.sigma, args.d)
    report = sim.accuracy_experiment(
        args.d,
        args.n,
        kernel.sigma,
        engines=engines,
        iterations=args.iters,
        l_ii=args.l_gram,
        l_spec=args.l_spec,
        seed=config.seed,
        spec_draws=args.spec_draws,
        threads=args.threads,
        timing_repeats=3 if args.timing else 1,
    )
    result = report.to_dict(timing=args.timing)
    result["sigma_rule"] = _rule_text(args.sigma)
    headers = ["alpha", "monte_carlo"] + engines
    rows = [[a, report.reference[a]] + [report.quantiles[e][a] for e in engines] for a in sim.ALPHAS]
    text = f"d={args.d}  n={args.n}  sigma={kernel.sigma:.6g}  iterations={args.iters}\n" + _table(headers, rows)
    if engines:
        text += "\n" + _kv([(f"D({e})", report.d_metric[e]) for e in engines])
        if args.timing:
            text += "\n" + _kv([(f"time({e}) [s]", report.timing[e]) for e in engines])
    _emit(config, result, text, headers, rows)
    return EXIT_OK


COMMANDS = {
    "test": cmd_test,
    "moments": cmd_moments,
    "null-quantile": cmd_null_quantile,
    "power-sim": cmd_power_sim,
    "accuracy": cmd_accuracy,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        seed = args.seed if args.seed is not None else _default_seed()
        knobs = {
            k: (_rule_text(v) if k == "sigma" else v)
            for k, v in sorted(vars(args).items())
            if k not in ("command", "seed", "alpha", "output", "input", "engine", "verbose")
        }
        config = RunConfig(
            command=args.command,
            sigma_rule=knobs.pop("sigma"),
            alpha=args.alpha,
            seed=seed,
            output=args.output,
            input_path=getattr(args, "input", None),
            engine=ENGINE_NAMES[args.engine] if getattr(args, "engine", None) else None,
            knobs=knobs,
        )
        return COMMANDS[args.command](args, config)
    except (UsageError, DataFormatError, DegenerateDataError, ValueError, ArithmeticError) as exc:
        print(f"mmdtest {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
