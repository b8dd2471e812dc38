"""Command-line driver: ``robust-rzf <command> SCENARIO [options]``.

``SCENARIO`` is a TOML scenario file, or ``table1:<csit>:<accuracy>`` for a
built-in isotropic setting (``csit`` in fully_distributed, dcsit,
centralized; ``accuracy`` in symmetric, asymmetric). Results are CSV on
stdout or in ``--out``.
"""

import argparse
import logging
import sys

import numpy as np

from .detequiv import mu_from_per_tx_power, sinr_det_equiv, theorem_terms
from .exceptions import (
    DegenerateChannelError,
    FixedPointError,
    OptimizationError,
    PowerConstraintError,
    ScenarioError,
    SingularSystemError,
    SpecializationError,
)
from .experiments import RUNNERS, ExperimentSpec, metadata, write_csv
from .optimizer import joint_optimize, naive_alphas, optimize_common_alpha, optimize_per_tx_alpha, optimize_power
from .precoding import PrecoderParams, monte_carlo
from .scenario import load_scenario, table_one

log = logging.getLogger("robust_rzf")

_FAILURES = (
    ScenarioError,
    FixedPointError,
    SingularSystemError,
    PowerConstraintError,
    SpecializationError,
    OptimizationError,
    DegenerateChannelError,
    ValueError,
    OSError,
)


def resolve_scenario(arg):
    if arg.startswith("table1:"):
        parts = arg.split(":")
        if len(parts) != 3:
            raise ScenarioError(f"expected table1:<csit>:<accuracy>, got {arg!r}")
        return table_one(parts[1], parts[2])
    return load_scenario(arg)


def _vec(text):
    return [float(x) for x in text.split(",")]


def _alpha(args, s):
    if args.alpha is None:
        return naive_alphas(s, force_general=args.force_general_path)[0]
    a = np.asarray(args.alpha, dtype=float)
    if a.size == 1:
        return np.full(s.n, a[0])
    if a.size != s.n:
        raise ValueError(f"--alpha needs 1 or {s.n} values, got {a.size}")
    return a


def _mu(args, s, alpha):
    terms = theorem_terms(s, alpha, force_general=args.force_general_path)
    if args.mu is None:
        return terms, mu_from_per_tx_power(s.per_tx_power, s, terms=terms)
    mu = np.asarray(args.mu, dtype=float)
    if mu.size != s.n:
        raise ValueError(f"--mu needs {s.n} values, got {mu.size}")
    return terms, mu


def _fmt(v):
    return " ".join(repr(float(x)) for x in np.atleast_1d(v))


def _spec(args, s, command):
    return ExperimentSpec(
        scenario=s,
        command=command,
        var=getattr(args, "var", "rho"),
        start=getattr(args, "start", 0.0),
        stop=getattr(args, "stop", 1.0),
        steps=getattr(args, "steps", 1),
        trials=args.trials,
        seed=args.seed,
        out=args.out,
        force_general=args.force_general_path,
        renormalize=args.renormalize_per_draw,
        mode=getattr(args, "mode", "per_tx"),
        monte_carlo=getattr(args, "mc", False),
        workers=args.workers,
        scenario_path=args.scenario,
        warm_start=getattr(args, "warm_start", False),
    )


def cmd_detequiv(args, s):
    alpha = _alpha(args, s)
    terms, mu = _mu(args, s, alpha)
    report = sinr_det_equiv(s, PrecoderParams(alpha, mu), terms=terms)
    rows = [[k, float(a), float(b)] for k, (a, b) in enumerate(zip(report.sinr_o, report.i_o))]
    meta = metadata(_spec(args, s, "detequiv"), alpha=_fmt(alpha), mu=_fmt(mu), sum_rate_det=repr(report.sum_rate_o))
    return write_csv(args.out, ["k", "sinr_det", "interference_det"], rows, meta)


def cmd_montecarlo(args, s):
    alpha = _alpha(args, s)
    _, mu = _mu(args, s, alpha)
    spec = _spec(args, s, "montecarlo")
    est = monte_carlo(
        s, PrecoderParams(alpha, mu), args.trials, spec.seed, renormalize=args.renormalize_per_draw, workers=args.workers
    )
    rows = [[k, float(v)] for k, v in enumerate(est.per_user_sinr_mean)]
    meta = metadata(
        spec,
        alpha=_fmt(alpha),
        mu=_fmt(mu),
        sum_rate_mc=repr(est.sum_rate),
        stderr=repr(est.std_error),
        resampled=est.resampled,
    )
    return write_csv(args.out, ["k", "sinr_mc_mean"], rows, meta)


def cmd_optimize_alpha(args, s):
    fg = args.force_general_path
    spec = _spec(args, s, "optimize-alpha")
    if args.mode == "naive":
        alpha, methods = naive_alphas(s, force_general=fg)
        extra = {"naive_method": " ".join(methods)}
    elif args.mode == "common":
        a, _ = optimize_common_alpha(s, force_general=fg)
        alpha, extra = np.full(s.n, a), {}
    else:
        alpha, trace = optimize_per_tx_alpha(s, force_general=fg)
        extra = {"sweeps": len(trace.records) - 1, "converged": trace.converged}
    terms = theorem_terms(s, alpha, force_general=fg)
    mu = mu_from_per_tx_power(s.per_tx_power, s, terms=terms)
    rows = [[j, float(alpha[j]), float(mu[j])] for j in range(s.n)]
    meta = metadata(spec, sum_rate_det=repr(terms.sum_rate(mu)), **extra)
    return write_csv(args.out, ["tx", "alpha", "mu"], rows, meta)


def _trace_csv(args, spec, trace, **more):
    names = sorted({k for r in trace.records for k in r[2]})
    rows = [[it, obj, *[_fmt(var[n]) if n in var else "" for n in names]] for it, obj, var in trace.records]
    meta = metadata(spec, converged=trace.converged, **more)
    return write_csv(args.out, ["iteration", "objective", *names], rows, meta)


def cmd_optimize_power(args, s):
    alpha = _alpha(args, s)
    terms = theorem_terms(s, alpha, force_general=args.force_general_path)
    mu, trace = optimize_power(s, alpha, terms=terms)
    spec = _spec(args, s, "optimize-power")
    return _trace_csv(args, spec, trace, alpha=_fmt(alpha), mu=_fmt(mu), sum_rate_det=repr(terms.sum_rate(mu)))


def cmd_joint(args, s):
    alpha, mu, trace = joint_optimize(s, args.mode, force_general=args.force_general_path)
    spec = _spec(args, s, "joint")
    rate = theorem_terms(s, alpha, force_general=args.force_general_path).sum_rate(mu)
    return _trace_csv(args, spec, trace, alpha=_fmt(alpha), mu=_fmt(mu), sum_rate_det=repr(rate))


def cmd_sweep(args, s):
    spec = _spec(args, s, "sweep")
    return RUNNERS[args.var](spec)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="TOML file or table1:<csit>:<accuracy>")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: the scenario's)")
    common.add_argument("--out", default=None, help="output CSV path (default: stdout)")
    common.add_argument("--trials", type=int, default=1000)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--force-general-path", action="store_true", help="skip the isotropic closed forms")
    common.add_argument("--renormalize-per-draw", action="store_true", help="rescale each draw's precoder to power P")
    common.add_argument("-v", "--verbose", action="count", default=0)

    params = argparse.ArgumentParser(add_help=False)
    params.add_argument("--alpha", type=_vec, default=None, help="comma-separated, 1 or n values (default: naive)")
    params.add_argument("--mu", type=_vec, default=None, help="comma-separated n values (default: per-TX budgets)")

    parser = argparse.ArgumentParser(prog="robust-rzf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("detequiv", parents=[common, params], help="deterministic SINR per user").set_defaults(fn=cmd_detequiv)
    sub.add_parser("montecarlo", parents=[common, params], help="simulated SINR and sum rate").set_defaults(
        fn=cmd_montecarlo
    )
    p = sub.add_parser("optimize-alpha", parents=[common], help="regularization design")
    p.add_argument("--mode", choices=["common", "per-tx", "naive"], default="common")
    p.set_defaults(fn=cmd_optimize_alpha)
    p = sub.add_parser("optimize-power", parents=[common, params], help="power allocation at fixed alpha")
    p.set_defaults(fn=cmd_optimize_power)
    p = sub.add_parser("joint", parents=[common], help="alternating alpha/power optimization")
    p.add_argument("--mode", choices=["common", "per-tx"], default="per-tx")
    p.set_defaults(fn=cmd_joint)
    p = sub.add_parser("sweep", parents=[common], help="rho, power or system-size sweep")
    p.add_argument("--var", choices=["rho", "power_db", "k_users"], required=True)
    p.add_argument("--from", dest="start", type=float, required=True)
    p.add_argument("--to", dest="stop", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--mc", action="store_true", help="add Monte-Carlo rates to rho/power sweeps")
    p.add_argument("--warm-start", action="store_true", help="seed each rho/power point with the previous optimum")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        s = resolve_scenario(args.scenario)
        text = args.fn(args, s)
    except _FAILURES as exc:
        print(f"robust-rzf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if args.out is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
