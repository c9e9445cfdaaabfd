"""Command-line interface: ``mmot <subcommand> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure. Errors are
printed to stderr as one JSON line ``{"error": <type>, "message": <text>}``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import _kernels
from .exceptions import MMOTError, NumericalError, ValidationError
from .grid import Grid, make_uniform
from .hedging import build_policy, simulate_hedge, write_errors
from .incremental import IncrementalConfig, append_period
from .marginals import (
    CalibrationConfig,
    MarginalSequence,
    ModelParams,
    calibrate,
    generate,
    read_quotes,
)
from .oracle import TinyInstance, lp_bounds
from .pricing import (
    PayoffSpec,
    PriceBounds,
    TransactionCostSpec,
    price_bounds,
    widen_calibration,
    widen_transaction,
)
from .reference import build_reference
from .solver import (
    ChainParts,
    CostSpec,
    SolverConfig,
    load_solution,
    save_solution,
    solve,
)
from .studies import STUDIES, dump_summary


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


def _grid(args) -> Grid:
    return make_uniform(args.lo, args.hi, args.m)


def _times(args):
    if args.times:
        return np.array(_floats(args.times))
    return np.linspace(0.0, args.horizon, args.n_steps + 1)


def _cost(spec: str, grid: Grid, n_steps: int) -> CostSpec:
    name, _, arg = spec.partition(":")
    if name == "abs":
        return CostSpec.pairwise_abs(grid, n_steps)
    if name == "square":
        return CostSpec.pairwise_square(grid, n_steps)
    if name == "zero":
        return CostSpec.zero(grid, n_steps)
    if name == "forward_start":
        return CostSpec.forward_start_call(grid, n_steps, float(arg or 1.0))
    raise ValidationError(f"unknown cost {spec!r} (abs, square, zero, forward_start:K)")


def _payoff(spec: str) -> PayoffSpec:
    name, _, arg = spec.partition(":")
    try:
        if name in ("asian_call", "forward_start"):
            return getattr(PayoffSpec, name)(float(arg or 1.0))
        if name == "vanilla_call":
            k, _, t = arg.partition("@")
            return PayoffSpec.vanilla_call(float(k or 1.0), int(t) if t else None)
        if name == "linear":
            return PayoffSpec.linear()
        if name == "constant":
            return PayoffSpec.constant(float(arg or 1.0))
        if name == "spread_abs":
            return PayoffSpec.spread_abs()
    except ValueError as exc:
        raise ValidationError(f"bad payoff argument in {spec!r}") from exc
    raise ValidationError(f"unknown payoff {spec!r}")


def _config(args, cls=SolverConfig, **extra):
    return cls(epsilon=args.epsilon, tol=args.tol, max_iters=args.max_iters, record_history=False, **extra)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, allow_nan=False, default=_json_default))


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v).__name__)


def _clean(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    params = ModelParams(model=args.model, spot=args.spot, vol=args.vol, horizon=float(_times(args)[-1]),
                         paths=args.paths, seed=args.seed)
    seq = generate(params, _times(args), _grid(args))
    seq.save(args.out)
    _emit({"out": args.out, "n_steps": seq.n_steps, "m": seq.grid.size, "means": seq.means().tolist()})


def cmd_calibrate(args):
    quotes = read_quotes(args.quotes)
    cfg = CalibrationConfig(tv_weight=args.tv_weight, alpha=args.alpha)
    res = calibrate(quotes, _grid(args), args.forward, cfg)
    obj = res.marginals.to_json()
    obj["deltas"] = res.deltas.tolist()
    with open(args.out, "w") as fh:
        json.dump(obj, fh)
    _emit({"out": args.out, "deltas": res.deltas.tolist(), "max_repricing_error": max(res.residuals)})


def _load_marginals(path) -> MarginalSequence:
    return MarginalSequence.load(path)


def cmd_solve(args):
    seq = _load_marginals(args.marginals)
    N = seq.n_steps
    cost = _cost(args.cost, seq.grid, N)
    ref = build_reference(seq.grid, seq.times, sigma=args.sigma_ref)
    warm = None
    if args.warm:
        warm, wgrid, _ = load_solution(args.warm)
        if wgrid != seq.grid:
            raise ValidationError("warm start solution lives on a different grid")
    pot, plan, rep = solve(seq, ref, cost, _config(args), warm=warm)
    save_solution(args.out, pot, seq.grid, rep, marginals=seq,
                  extra={"cost": args.cost, "sigma_ref": args.sigma_ref})
    _emit(_clean({"out": args.out, **_summary(rep)}))


def _summary(rep):
    obj = rep.to_json()
    obj.pop("per_iter_error", None)
    obj.pop("change_history", None)
    return obj


def cmd_append(args):
    prev, grid, obj = load_solution(args.prev)
    if "marginals" not in obj:
        raise ValidationError(f"{args.prev}: solution carries no marginals")
    old = MarginalSequence.from_json(obj["marginals"])
    new = _load_marginals(args.new)
    if new.grid != grid:
        raise ValidationError("new marginal lives on a different grid")
    cost_name = args.cost or obj.get("cost", "abs")
    sigma = args.sigma_ref if args.sigma_ref is not None else obj.get("sigma_ref", 0.2)
    t_new = float(new.times[-1])
    if not t_new > float(old.times[-1]):
        raise ValidationError(f"new maturity {t_new} must come after {float(old.times[-1])}")
    times = np.r_[old.times, t_new]
    ref = build_reference(grid, times, sigma=sigma)
    parts = ChainParts(_cost(cost_name, grid, old.n_steps + 1).tables)
    cfg = _config(args, IncrementalConfig, k_warm=args.k_warm, k_refine=args.k_refine)
    pot, plan, rep = append_period(prev, old, new[new.n_steps], t_new, ref, parts, cfg)
    seq = old.append(new[new.n_steps], t_new)
    save_solution(args.out, pot, grid, rep, marginals=seq, extra={"cost": cost_name, "sigma_ref": sigma})
    _emit(_clean({"out": args.out, **_summary(rep)}))


def cmd_price(args):
    if args.bounds:
        lo, hi = _floats(args.bounds)
        bounds = PriceBounds(lo, hi)
        plan = None
        n_steps = None
    else:
        if not args.marginals:
            raise ValidationError("price needs --marginals or --bounds")
        seq = _load_marginals(args.marginals)
        ref = build_reference(seq.grid, seq.times, sigma=args.sigma_ref)
        pay = _payoff(args.payoff)
        res = price_bounds(seq, ref, pay, _config(args))
        bounds = PriceBounds(res.lower, res.upper)
        plan = res.plans[0] if res.plans[0].markov else None
        n_steps = seq.n_steps
    if args.gamma is not None or args.delta is not None:
        bounds = PriceBounds(bounds.lower, bounds.upper, args.gamma or 0.0, args.delta or 0.0)
    if args.tc_rate:
        if plan is None:
            raise ValidationError("transaction-cost widening needs a Markov plan (pairwise payoff)")
        bounds = widen_transaction(bounds, plan, TransactionCostSpec.flat(args.tc_rate, n_steps))
    if args.calibration:
        with open(args.calibration) as fh:
            deltas = json.load(fh).get("deltas")
        if deltas is None:
            raise ValidationError(f"{args.calibration}: no 'deltas' entry")
        if args.bounds:
            raise ValidationError("calibration widening needs the solved problem, not --bounds")
        L = _payoff(args.payoff).lipschitz(seq.grid)
        bounds = widen_calibration(bounds, deltas, max(L, 1e-300), args.epsilon, seq.grid.diameter(), L)
    _emit(_clean(bounds.to_json()))


def cmd_hedge(args):
    seq = _load_marginals(args.marginals)
    ref = build_reference(seq.grid, seq.times, sigma=args.sigma_ref)
    pay = _payoff(args.payoff)
    res = price_bounds(seq, ref, pay, _config(args))
    plan = res.plans[0 if args.plan == "lower" else 1]
    policy = build_policy(plan, pay)
    rep = simulate_hedge(plan, policy, pay, args.paths, args.seed, constant=args.constant)
    write_errors(args.out, rep.errors)
    _emit(_clean({"out": args.out, **rep.to_json(), "delta_lipschitz": policy.delta_lipschitz}))


def _parse_params(items):
    out = {}
    for it in items or []:
        key, sep, val = it.partition("=")
        if not sep:
            raise ValidationError(f"--param expects key=value, got {it!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
        if isinstance(out[key], list):
            out[key] = tuple(out[key])
    return out


def cmd_study(args):
    fn = STUDIES[args.kind]
    params = _parse_params(args.param)
    if args.kind in ("convergence", "stability"):
        params.setdefault("seed", args.seed)
    try:
        report = fn(**params)
    except TypeError as exc:
        raise ValidationError(f"study {args.kind}: {exc}") from exc
    if args.out:
        report.write_csv(args.out)
    if args.gnuplot:
        with open(args.gnuplot, "w", newline="") as fh:
            fh.write(report.gnuplot(args.out or f"{args.kind}.csv"))
    print(dump_summary(report))


def cmd_oracle(args):
    seq = _load_marginals(args.marginals)
    N = seq.n_steps
    cost = _cost(args.cost, seq.grid, N)
    inst = TinyInstance.from_pairwise(seq, cost.tables)
    res = lp_bounds(inst)
    _emit({"min": res.min_value, "max": res.max_value})


# ---------------------------------------------------------------------------


def _grid_args(p):
    p.add_argument("--lo", type=float, default=0.4)
    p.add_argument("--hi", type=float, default=2.0)
    p.add_argument("--m", type=int, default=100, help="number of grid points")


def _solver_args(p):
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--sigma-ref", type=float, default=0.2, help="reference chain volatility")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmot", description="Entropic multi-period martingale transport.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None, help="worker cap (default: $MMOT_THREADS)")
    sub = parser.add_subparsers(dest="cmd", required=True, metavar="{gen,calibrate,solve,append,price,hedge,study}")

    p = sub.add_parser("gen", help="synthetic marginals")
    p.add_argument("--model", default="gbm", choices=["gbm", "merton", "heston"])
    p.add_argument("--spot", type=float, default=1.0)
    p.add_argument("--vol", type=float, default=0.2)
    p.add_argument("--times", default=None, help="comma-separated monitoring times")
    p.add_argument("--n-steps", type=int, default=5)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=20_000)
    _grid_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("calibrate", help="fit marginals to call quotes")
    p.add_argument("--quotes", required=True, help="CSV with maturity,strike,mid,spread")
    p.add_argument("--forward", type=float, required=True)
    p.add_argument("--tv-weight", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=0.05)
    _grid_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("solve", help="solve for the optimal plan")
    p.add_argument("--marginals", required=True)
    p.add_argument("--cost", default="abs")
    p.add_argument("--warm", default=None, help="solution JSON to start from")
    _solver_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("append", help="add one maturity to a solution")
    p.add_argument("--prev", required=True, help="solution JSON from solve or append")
    p.add_argument("--new", required=True, help="marginals JSON whose last row is appended")
    p.add_argument("--cost", default=None)
    p.add_argument("--k-warm", type=int, default=500)
    p.add_argument("--k-refine", type=int, default=5000)
    _solver_args(p)
    p.set_defaults(sigma_ref=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_append)

    p = sub.add_parser("price", help="price bounds with optional widening")
    p.add_argument("--marginals", default=None)
    p.add_argument("--payoff", default="forward_start:1.0")
    p.add_argument("--bounds", default=None, help="skip solving: 'lower,upper'")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--tc-rate", type=float, default=0.0, help="proportional cost per rebalance")
    p.add_argument("--calibration", default=None, help="calibrate output with per-maturity deltas")
    _solver_args(p)
    p.set_defaults(fn=cmd_price)

    p = sub.add_parser("hedge", help="simulate the plan-implied delta hedge")
    p.add_argument("--marginals", required=True)
    p.add_argument("--payoff", default="vanilla_call:1.0")
    p.add_argument("--plan", choices=["lower", "upper"], default="lower")
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--constant", type=float, default=1.0, help="bound constant C")
    _solver_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_hedge)

    p = sub.add_parser("study", help="run a numerical study")
    p.add_argument("kind", choices=sorted(STUDIES))
    p.add_argument("--out", default=None, help="CSV rows")
    p.add_argument("--gnuplot", default=None, help="write a gnuplot script")
    p.add_argument("--param", action="append", help="study keyword as key=value (JSON values)")
    p.set_defaults(fn=cmd_study)

    p = sub.add_parser("oracle", help=argparse.SUPPRESS)
    p.add_argument("--marginals", required=True)
    p.add_argument("--cost", default="abs")
    p.set_defaults(fn=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("MMOT_THREADS"):
        try:
            threads = int(os.environ["MMOT_THREADS"])
        except ValueError:
            threads = None
    if threads:
        _kernels.set_threads(threads)
    try:
        args.fn(args)
    except (ValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        _fail(exc, 2)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        _fail(exc, 3)
        return 3
    except MMOTError as exc:
        _fail(exc, 2)
        return 2
    return 0


def _fail(exc, code):
    msg = " ".join(str(exc).split())
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "code": code, "message": msg}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
