"""Command-line interface for the clipped zeroth-order toolkit."""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import diagnostics, harness, oracles, optimizer, planner, rng


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker hint; execution is vectorized single-process")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zoclip",
        description="Scalar-clipped zeroth-order optimization benchmark suite",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single configuration cell")
    _add_common(p)
    p.add_argument("--method", default="scalar_clip",
                   choices=("raw", "vector_clip", "scalar_clip", "scalar_clip_momentum"))
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--tau", type=float)
    p.add_argument("--rvec", type=float)
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--M0", type=int, default=256)
    p.add_argument("--tau0", type=float)
    p.add_argument("--T", type=int)

    for name, help_text in (
        ("tune", "grid-search hyperparameters on the validation seeds"),
        ("rep", "representative benchmark: tune, evaluate, write artifacts"),
        ("sweep-dim", "dimension sweep"),
        ("sweep-tail", "tail-exponent sweep"),
        ("momentum-m1", "momentum with running batch size 1 vs base at equal budget"),
        ("plan", "print theory-prescribed parameters"),
        ("check", "run the analytic-bound check suite and write checks.csv"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "plan":
            p.add_argument("--beta", type=float, help="momentum parameter in [1/2, 1)")
            p.add_argument("--mu", type=float,
                           help="smoothing radius; default eps/(4 L d)")
        if name == "check":
            p.add_argument("--samples", type=int, default=1_000_000)
    return parser


def load_config(args) -> harness.ExperimentConfig:
    config = harness.parse_config(args.config) if args.config else harness.ExperimentConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, output_dir=args.out)
    return config


def _emit(rows, path, columns, fmt):
    if fmt == "jsonl":
        path = os.path.splitext(path)[0] + ".jsonl"
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps({c: _jsonable(row[c]) for c in columns}) + "\n")
        return path
    return harness.emit_csv(rows, path, columns)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _print_summary(rows):
    for row in rows:
        print(
            f"{row['cell_id']} {row['method']}: median_final={row['median_final']:.4g} "
            f"success_rate={row['success_rate']:.0%} queries={row['total_queries']}"
        )


def cmd_run(args) -> int:
    config = load_config(args)
    problem = harness.make_problem(config)
    T = args.T if args.T is not None else config.iter_budget
    s = harness.scalar_scale(config, problem)
    common = dict(mu=config.mu, M=config.M, T=T)
    if args.method == "scalar_clip_momentum":
        cell = optimizer.MomentumConfig(
            alpha=args.alpha, mode="scalar_clip", tau=args.tau or s,
            beta=args.beta, M0=args.M0, tau0=args.tau0 or args.tau or s, **common,
        )
    elif args.method == "scalar_clip":
        cell = optimizer.BaseConfig(alpha=args.alpha, mode="scalar_clip",
                                    tau=args.tau or s, **common)
    elif args.method == "vector_clip":
        cell = optimizer.BaseConfig(alpha=args.alpha, mode="vector_clip",
                                    vec_radius=args.rvec or 1.0, **common)
    else:
        cell = optimizer.BaseConfig(alpha=args.alpha, mode="raw", **common)
    result = optimizer.run_cells(problem, [cell], harness.seed_key(config.master_seed, 0),
                                 record=True)[0]
    os.makedirs(config.output_dir, exist_ok=True)
    path = _emit(harness.record_rows([result]),
                 os.path.join(config.output_dir, "records.csv"),
                 harness.RECORD_COLUMNS, args.format)
    print(f"final_grad_norm={result.final_grad_norm:.17g} queries={result.queries} "
          f"diverged={result.diverged}")
    print(f"wrote {path}")
    return 0


def cmd_tune(args) -> int:
    config = load_config(args)
    tuned = harness.tune(config)
    for method in sorted(tuned.by_method):
        tm = tuned.by_method[method]
        if tm.untunable:
            print(f"{method}: untunable (all cells diverged)")
            continue
        extra = ""
        if tm.cell.threshold is not None:
            extra = f" threshold={tm.cell.threshold:.6g}"
        print(f"{method}: alpha={tm.cell.alpha:g}{extra} "
              f"validation_median={tm.validation_median:.6g}")
    return 0


def cmd_rep(args) -> int:
    config = load_config(args)
    out = harness.run_representative(config)
    _print_summary(out["summary"])
    if args.format == "jsonl":
        _emit(out["summary"], os.path.join(config.output_dir, "summary.csv"),
              harness.SUMMARY_COLUMNS, "jsonl")
    print(f"artifacts in {config.output_dir}/")
    return 0


def cmd_sweep(args, dimension: bool) -> int:
    config = load_config(args)
    rows = (harness.sweep_dimension(config) if dimension else harness.sweep_tail(config))
    _print_summary(rows)
    return 0


def cmd_momentum(args) -> int:
    config = load_config(args)
    out = harness.run_momentum_smallbatch(config)
    plan = out["plan"]
    print(f"theory 1-beta={plan.theory_w:.6g} theory T={plan.theory_T} "
          f"(capped={plan.capped})")
    print(f"running: beta={plan.beta:.6g} alpha={plan.alpha:.6g} T={plan.T} "
          f"tau={plan.tau:.6g} M0={plan.M0}")
    _print_summary(out["summary"])
    return 0


def cmd_plan(args) -> int:
    config = load_config(args)
    problem = harness.make_problem(config)
    inputs = planner.PlannerInputs(
        L=problem.L, Delta0=problem.delta0, sigma=config.sigma_scale,
        p=config.p, d=config.d, eps=config.eps, delta=config.delta,
        mu=args.mu if getattr(args, "mu", None) is not None else "auto",
        beta=getattr(args, "beta", None),
    )
    plan = (planner.plan_momentum(inputs, m_ceiling=2**80) if inputs.beta is not None
            else planner.plan_base(inputs, m_ceiling=2**80))
    for f in dataclasses.fields(plan):
        print(f"{f.name} = {getattr(plan, f.name)}")
    for k, v in planner.predicted_complexity(plan, inputs).items():
        print(f"{k} = {v}")
    return 0


def cmd_check(args) -> int:
    config = load_config(args)
    n = args.samples
    reports = []
    d = config.d
    for p in (1.2, 1.5, 1.8):
        spec = oracles.NoiseModelSpec(family="sparse_pareto", p=p)
        x = np.zeros(d)
        x[0] = config.x0_norm
        problem = oracles.QuadraticProblem(d=d, noise=spec, x0=x)
        S = diagnostics.directional_scale(problem, x, config.mu)
        taus = [4 * S, 8 * S, 16 * S]
        key = rng.derive_key(config.master_seed, "check", format(p, ".17g"))

        def sampler(m, k, _prob=problem, _x=x):
            return diagnostics.sample_directional(_prob, _x, config.mu, m, k)

        reports += diagnostics.check_clipping_bias(sampler, S, p, taus, n=n, rng_key=key)
        reports += diagnostics.check_clipped_second_moment(
            sampler, S, p, taus, n=n, rng_key=rng.derive_key(key, "second"))
        reports += diagnostics.check_weak_tail(
            spec, p, config.sigma_scale, [1.0, 2.0, 5.0, 10.0], n=n, d=d,
            rng_key=rng.derive_key(key, "tail"))

    weak = oracles.NoiseModelSpec(family="weakL2_infinite_variance")
    reports += diagnostics.check_weak_tail(
        weak, 2.0, 1.0, [1.0, 2.0, 5.0, 10.0], n=n, d=d,
        rng_key=rng.derive_key(config.master_seed, "check", "weakL2"))

    clean = oracles.QuadraticProblem(d=10, noise=oracles.NoiseModelSpec(family="none"),
                                     x0=np.ones(10))
    reports += diagnostics.check_smoothing_bias(
        clean, [np.ones(10), np.zeros(10)], [0.01, 0.1],
        n=min(n, 200_000), rng_key=rng.derive_key(config.master_seed, "check", "smooth"))

    os.makedirs(config.output_dir, exist_ok=True)
    path = os.path.join(config.output_dir, "checks.csv")
    if args.format == "jsonl":
        rows = [{"lemma_id": r.lemma_id, "empirical_lhs": r.empirical_lhs,
                 "bound_rhs": r.bound_rhs, "n_samples": r.n_samples,
                 "passed": r.passed, "margin": r.margin} for r in reports]
        path = _emit(rows, path, harness.CHECK_COLUMNS, "jsonl")
    else:
        harness.emit_checks(reports, path)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.lemma_id}: "
              f"lhs={r.empirical_lhs:.6g} rhs={r.bound_rhs:.6g}")
    print(f"wrote {path}; {len(reports) - len(failed)}/{len(reports)} passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "tune": cmd_tune,
        "rep": cmd_rep,
        "sweep-dim": lambda a: cmd_sweep(a, dimension=True),
        "sweep-tail": lambda a: cmd_sweep(a, dimension=False),
        "momentum-m1": cmd_momentum,
        "plan": cmd_plan,
        "check": cmd_check,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
