"""Experiment harness: tuning protocol, benchmark sweeps, and CSV/plot artifacts.

The benchmark compares the three estimator modes on the heavy-tailed quadratic
under a matched query budget.  Stepsizes (and the clip threshold or radius)
are tuned per method on validation seeds, then everything is re-run on a
disjoint set of evaluation seeds; all reported numbers come from the
evaluation seeds only.

Seed hygiene: run seeds are derived as (master_seed, "seed", offset) with
validation offsets 0..v-1 and evaluation offsets v..v+e-1, so the two pools
are disjoint by construction.  Every derived seed consulted during tuning is
logged so tests can assert no evaluation seed leaks into tuning.
"""

from __future__ import annotations

import dataclasses
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics, estimator, optimizer, planner, rng
from .errors import ConfigError
from .oracles import NoiseModelSpec, QuadraticProblem

METHODS = ("raw", "vector_clip", "scalar_clip", "scalar_clip_momentum")

RECORD_COLUMNS = (
    "method", "seed", "t", "grad_norm", "cosine",
    "outlier_log_ratio", "clipped_fraction", "queries",
)
SUMMARY_COLUMNS = (
    "cell_id", "method", "d", "p", "M",
    "median_final", "success_rate", "median_cosine", "total_queries",
)
CHECK_COLUMNS = ("lemma_id", "empirical_lhs", "bound_rhs", "n_samples", "passed", "margin")


@dataclass
class ExperimentConfig:
    d: int = 100
    p: float = 1.5
    noise_family: str = "sparse_pareto"
    sigma_scale: float = 1.0
    methods: tuple = ("raw", "vector_clip", "scalar_clip")
    M: int = 256
    eps: float = 0.1
    iter_budget: int = 1000
    mu: float = 1e-3
    x0_norm: float = 3.0
    # tau_grid entries multiply the problem's scalar noise scale S_mu, so one
    # dimensionless grid covers every (d, p) cell; stepsize and radius grids
    # are absolute.
    stepsize_grid: tuple = (0.005, 0.01, 0.02, 0.05, 0.1, 0.2)
    tau_grid: tuple = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    rvec_grid: tuple = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
    validation_seeds: int = 6
    evaluation_seeds: int = 20
    master_seed: int = 0
    delta: float = 0.05
    output_dir: str = "results"

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for name in ("stepsize_grid", "tau_grid", "rvec_grid"):
            grid = getattr(self, name)
            if self._consumes(name) and (not grid or any(not v > 0 for v in grid)):
                raise ConfigError(f"{name} must be a nonempty list of positive reals")
        if self.validation_seeds < 1 or self.evaluation_seeds < 1:
            raise ConfigError("need at least one validation and one evaluation seed")

    def _consumes(self, grid_name: str) -> bool:
        if grid_name == "tau_grid":
            return any(m.startswith("scalar_clip") for m in self.methods)
        if grid_name == "rvec_grid":
            return "vector_clip" in self.methods
        return True

    @property
    def validation_offsets(self) -> range:
        return range(self.validation_seeds)

    @property
    def evaluation_offsets(self) -> range:
        return range(self.validation_seeds, self.validation_seeds + self.evaluation_seeds)


def seed_key(master_seed: int, offset: int) -> int:
    return rng.derive_key(int(master_seed), "seed", int(offset))


def make_problem(config: ExperimentConfig, d: int | None = None, p: float | None = None) -> QuadraticProblem:
    d = config.d if d is None else d
    p = config.p if p is None else p
    if config.noise_family == "sparse_pareto":
        noise = NoiseModelSpec(family="sparse_pareto", p=p, sigma_scale=config.sigma_scale)
    else:
        noise = NoiseModelSpec(family=config.noise_family, sigma_scale=config.sigma_scale)
    x0 = np.zeros(d)
    x0[0] = config.x0_norm
    return QuadraticProblem(d=d, noise=noise, x0=x0)


def scalar_scale(config: ExperimentConfig, problem: QuadraticProblem) -> float:
    """Directional noise scale S_mu of the problem; the tau grid is in these units."""
    bar = planner.bar_delta0(problem.L, problem.delta0, config.mu)
    return planner.s_mu(problem.L, bar, config.sigma_scale, problem.d, config.mu)


def method_grid(config: ExperimentConfig, problem: QuadraticProblem, method: str) -> list:
    """All tuning cells of one method, sharing (mu, M, T) so they batch together."""
    common = dict(mu=config.mu, M=config.M, T=config.iter_budget)
    if method == "raw":
        return [optimizer.BaseConfig(alpha=a, mode="raw", **common) for a in config.stepsize_grid]
    if method == "vector_clip":
        return [
            optimizer.BaseConfig(alpha=a, mode="vector_clip", vec_radius=r, **common)
            for a in config.stepsize_grid
            for r in config.rvec_grid
        ]
    if method == "scalar_clip":
        s = scalar_scale(config, problem)
        return [
            optimizer.BaseConfig(alpha=a, mode="scalar_clip", tau=m * s, **common)
            for a in config.stepsize_grid
            for m in config.tau_grid
        ]
    raise ConfigError(f"no tuning grid for method {method!r}")


@dataclass
class TunedMethod:
    method: str
    cell: optimizer.BaseConfig | None
    validation_median: float
    untunable: bool = False


@dataclass
class TuneResult:
    by_method: dict
    consulted_offsets: list


def tune(config: ExperimentConfig, problem: QuadraticProblem | None = None) -> TuneResult:
    """Grid search on the validation seeds only.

    Selects, per method, the cell minimizing the median final gradient norm;
    ties break toward the smaller stepsize, then the smaller threshold/radius.
    A method whose every cell diverged on every seed is marked untunable.
    """
    problem = make_problem(config) if problem is None else problem
    offsets = list(config.validation_offsets)
    by_method = {}
    for method in config.methods:
        if method == "scalar_clip_momentum":
            continue  # planned, not grid-tuned; see run_momentum_smallbatch
        cells = method_grid(config, problem, method)
        finals = np.empty((len(offsets), len(cells)))
        all_diverged = np.ones(len(cells), dtype=bool)
        for i, off in enumerate(offsets):
            results = optimizer.run_cells(problem, cells, seed_key(config.master_seed, off))
            finals[i] = [r.final_grad_norm for r in results]
            all_diverged &= np.array([r.diverged for r in results])
        medians = np.median(finals, axis=0)
        usable = ~all_diverged & np.isfinite(medians)
        if not np.any(usable):
            by_method[method] = TunedMethod(method, None, math.inf, untunable=True)
            continue
        order = sorted(
            np.flatnonzero(usable),
            key=lambda j: (medians[j], cells[j].alpha, cells[j].threshold or 0.0),
        )
        best = order[0]
        by_method[method] = TunedMethod(method, cells[best], float(medians[best]))
    return TuneResult(by_method=by_method, consulted_offsets=offsets)


def evaluate(
    config: ExperimentConfig,
    problem: QuadraticProblem,
    tuned: TuneResult,
    record: bool = True,
) -> list[optimizer.RunResult]:
    """Re-run every tuned method on the evaluation seeds; seed field = offset."""
    results = []
    for off in config.evaluation_offsets:
        key = seed_key(config.master_seed, off)
        for method in sorted(tuned.by_method):
            tm = tuned.by_method[method]
            if tm.untunable:
                continue
            out = optimizer.run_cells(problem, [tm.cell], key, record=record)[0]
            out.seed = off
            if out.series is not None:
                out.series.seed = off
            results.append(out)
    return results


def direction_diagnostic(
    config: ExperimentConfig,
    problem: QuadraticProblem,
    tuned: TuneResult,
    stride: int = 10,
) -> dict:
    """Cosine alignment of each estimator with the true gradient, on matched batches.

    Batches are drawn at iterates sampled along the tuned raw run (the shared
    operating regime), and all modes aggregate the same directional scalars, so
    differences isolate the aggregation rule: vector clipping only rescales the
    raw aggregate and therefore shares its cosine exactly.
    """
    ref = tuned.by_method.get("raw") or next(
        tm for tm in tuned.by_method.values() if not tm.untunable
    )
    if ref is None or ref.untunable:
        raise ValueError("direction diagnostic needs at least one tuned method")
    thresholds = {
        m: tm.cell.threshold
        for m, tm in tuned.by_method.items()
        if not tm.untunable
    }
    cosines = {m: [] for m in thresholds}
    for off in config.evaluation_offsets:
        key = seed_key(config.master_seed, off)
        state = optimizer.OptimizerState(t=0, x=np.asarray(problem.x0, float).copy())
        for t in range(config.iter_budget):
            if t % stride == 0:
                dkey = rng.derive_key(key, "diag", t)
                y, U = estimator.directional_batch(
                    problem, state.x, config.mu, config.M, dkey
                )
                g_true = problem.true_gradient(state.x)
                for m, thr in thresholds.items():
                    g = estimator.aggregate(y, U, m, thr).g
                    cosines[m].append(diagnostics.cosine_alignment(g, g_true))
            state, _ = optimizer.base_step(
                state, problem, ref.cell, optimizer.iter_key(key, t)
            )
    return {m: np.asarray(v) for m, v in cosines.items()}


def _cell_id(d: int, p: float, M: int, suffix: str = "") -> str:
    return f"d{d}_p{p:g}_M{M}" + (f"_{suffix}" if suffix else "")


def summarize_cell(
    config: ExperimentConfig,
    results: list,
    d: int,
    p: float,
    cell_suffix: str = "",
    cosine_override: dict | None = None,
) -> list[dict]:
    """summary.csv rows for one benchmark cell, sorted by method."""
    metrics = diagnostics.aggregate_metrics(results, config.eps)
    queries = {}
    for r in results:
        queries[r.method] = queries.get(r.method, 0) + r.queries
    rows = []
    for method in sorted(metrics):
        med_cos = metrics[method]["median_cosine"]
        if cosine_override and method in cosine_override:
            c = np.asarray(cosine_override[method])
            med_cos = float(np.median(c[np.isfinite(c)]))
        rows.append({
            "cell_id": _cell_id(d, p, config.M, cell_suffix),
            "method": method,
            "d": d,
            "p": p,
            "M": config.M,
            "median_final": metrics[method]["median_final"],
            "success_rate": metrics[method]["success_rate"],
            "median_cosine": med_cos,
            "total_queries": queries[method],
        })
    return rows


def record_rows(results: list) -> list[dict]:
    """Flatten recorded run series into records.csv rows, sorted (method, seed, t)."""
    rows = []
    for r in sorted(results, key=lambda r: (r.method, r.seed)):
        if r.series is None:
            continue
        s = r.series
        for i in range(len(s.t)):
            rows.append({
                "method": r.method,
                "seed": r.seed,
                "t": int(s.t[i]),
                "grad_norm": float(s.grad_norm[i]),
                "cosine": float(s.cosine[i]),
                "outlier_log_ratio": float(s.outlier_log_ratio[i]),
                "clipped_fraction": float(s.clipped_fraction[i]),
                "queries": int(s.queries[i]),
            })
    return rows


def run_representative(config: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Tune and evaluate all configured modes on the main benchmark cell.

    Writes records.csv, summary.csv and plot-data files; returns the tuned
    cells, evaluation results, summary rows and the direction diagnostic.
    """
    problem = make_problem(config)
    tuned = tune(config, problem)
    results = evaluate(config, problem, tuned, record=True)
    cosines = direction_diagnostic(config, problem, tuned)
    summary = summarize_cell(config, results, config.d, config.p, cosine_override=cosines)
    out_dir = config.output_dir if out_dir is None else out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        emit_csv(record_rows(results), os.path.join(out_dir, "records.csv"), RECORD_COLUMNS)
        emit_csv(summary, os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS)
        emit_plotdata(results, cosines, out_dir)
    return {
        "tuned": tuned,
        "results": results,
        "summary": summary,
        "cosines": cosines,
    }


def _sweep(config: ExperimentConfig, cells: list, out_name: str, out_dir: str | None) -> list[dict]:
    rows = []
    for d, p, suffix in cells:
        problem = make_problem(config, d=d, p=p)
        tuned = tune(config, problem)
        results = evaluate(config, problem, tuned, record=False)
        rows.extend(summarize_cell(config, results, d, p, cell_suffix=suffix))
    out_dir = config.output_dir if out_dir is None else out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        emit_csv(rows, os.path.join(out_dir, out_name), SUMMARY_COLUMNS)
    return rows


def sweep_dimension(
    config: ExperimentConfig, d_list=(25, 50, 100, 200), out_dir: str | None = None
) -> list[dict]:
    """Tune-then-evaluate at each dimension; p fixed by the config."""
    return _sweep(config, [(d, config.p, "") for d in d_list], "sweep_dimension.csv", out_dir)


def sweep_tail(
    config: ExperimentConfig, p_list=(1.2, 1.5, 1.8, 2.5), out_dir: str | None = None
) -> list[dict]:
    """Tune-then-evaluate at each tail exponent; p >= 2 cells are outside the
    heavy-tailed regime the method targets and are labeled as sanity checks."""
    cells = [(config.d, p, "sanity" if p >= 2.0 else "") for p in p_list]
    return _sweep(config, cells, "sweep_tail.csv", out_dir)


def smallbatch_configs(
    config: ExperimentConfig, t_cap: int = 200_000, m0_cap: int = 4096
) -> tuple[optimizer.MomentumConfig, optimizer.BaseConfig, planner.SmallBatchPlan]:
    """Planner-driven M = 1 momentum cell plus a base contrast cell.

    The contrast arm runs the base method at its theory stepsize 1/(4L) with
    M = 1 and the same clip threshold, stretched to the same total query count.
    """
    problem = make_problem(config)
    inputs = planner.PlannerInputs(
        L=problem.L,
        Delta0=problem.delta0,
        sigma=config.sigma_scale,
        p=config.p,
        d=config.d,
        eps=config.eps,
        delta=config.delta,
        mu="auto",  # plan at the theory radius; the run keeps config.mu
    )
    plan = planner.plan_momentum_smallbatch(inputs, t_cap=t_cap, m0_cap=m0_cap)
    mom = optimizer.MomentumConfig(
        alpha=plan.alpha,
        mu=config.mu,
        M=1,
        T=plan.T,
        mode="scalar_clip",
        tau=plan.tau,
        beta=plan.beta,
        M0=plan.M0,
        tau0=plan.tau0,
    )
    base_T = plan.M0 + plan.T - 1  # 2*M0 + 2*(T-1) queries at M = 1
    base = optimizer.BaseConfig(
        alpha=1.0 / (4.0 * problem.L),
        mu=config.mu,
        M=1,
        T=base_T,
        mode="scalar_clip",
        tau=plan.tau,
    )
    return mom, base, plan


def run_momentum_smallbatch(
    config: ExperimentConfig, out_dir: str | None = None, t_cap: int = 200_000
) -> dict:
    """Momentum with a running batch of 1 versus the base method at equal budget."""
    problem = make_problem(config)
    mom, base, plan = smallbatch_configs(config, t_cap=t_cap)
    results = []
    for off in config.evaluation_offsets:
        key = seed_key(config.master_seed, off)
        for cfg, name in ((mom, "scalar_clip_momentum"), (base, "scalar_clip_base_m1")):
            r = optimizer.run_cells(problem, [cfg], key)[0]
            r.method = name
            r.seed = off
            results.append(r)
    metrics = diagnostics.aggregate_metrics(results, config.eps)
    rows = []
    for method in sorted(metrics):
        rows.append({
            "cell_id": _cell_id(config.d, config.p, 1, "smallbatch"),
            "method": method,
            "d": config.d,
            "p": config.p,
            "M": 1,
            "median_final": metrics[method]["median_final"],
            "success_rate": metrics[method]["success_rate"],
            "median_cosine": float("nan"),
            "total_queries": sum(r.queries for r in results if r.method == method),
        })
    out_dir = config.output_dir if out_dir is None else out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        emit_csv(rows, os.path.join(out_dir, "momentum_smallbatch.csv"), SUMMARY_COLUMNS)
    return {"plan": plan, "momentum_config": mom, "base_config": base,
            "results": results, "summary": rows}


def _format_value(v) -> str:
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(rows: list[dict], path: str, columns) -> str:
    """Write rows in the given column order; floats carry 17 significant digits."""
    try:
        with open(path, "w") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_format_value(row[c]) for c in columns) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


_CSV_PARSERS = {
    "method": str, "cell_id": str, "lemma_id": str,
    "seed": int, "t": int, "queries": int, "d": int, "M": int,
    "total_queries": int, "n_samples": int,
    "passed": lambda s: s == "true",
}


def parse_csv(path: str) -> list[dict]:
    """Read back a file written by emit_csv with exact types."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    columns = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append({
            c: _CSV_PARSERS.get(c, float)(v) for c, v in zip(columns, parts)
        })
    return rows


def emit_checks(reports, path: str) -> str:
    rows = [{
        "lemma_id": r.lemma_id,
        "empirical_lhs": r.empirical_lhs,
        "bound_rhs": r.bound_rhs,
        "n_samples": r.n_samples,
        "passed": r.passed,
        "margin": r.margin,
    } for r in reports]
    return emit_csv(rows, path, CHECK_COLUMNS)


def emit_plotdata(results: list, cosines: dict | None, out_dir: str) -> list[str]:
    """Per-method curve files (iteration, median, quartiles of grad_norm across
    seeds) and histogram files for the cosine and outlier diagnostics; renders
    a log-scale SVG of the curves when matplotlib is available."""
    written = []
    by_method = {}
    for r in results:
        if r.series is not None and len(r.series.t):
            by_method.setdefault(r.method, []).append(r.series)
    for method in sorted(by_method):
        series = by_method[method]
        n = min(len(s.t) for s in series)
        stack = np.stack([s.grad_norm[:n] for s in series])
        rows = [{
            "iteration": int(t),
            "median": float(np.median(stack[:, t])),
            "q25": float(np.quantile(stack[:, t], 0.25)),
            "q75": float(np.quantile(stack[:, t], 0.75)),
        } for t in range(n)]
        path = os.path.join(out_dir, f"curve_{method}.csv")
        written.append(emit_csv(rows, path, ("iteration", "median", "q25", "q75")))

        out = np.concatenate([s.outlier_log_ratio for s in series])
        written.append(_emit_histogram(out, os.path.join(out_dir, f"hist_outlier_{method}.csv")))
    if cosines:
        for method in sorted(cosines):
            written.append(_emit_histogram(
                np.asarray(cosines[method]),
                os.path.join(out_dir, f"hist_cosine_{method}.csv"),
            ))
    written = [p for p in written if p]
    if by_method:
        svg = _render_curves_svg(by_method, os.path.join(out_dir, "curves.svg"))
        if svg:
            written.append(svg)
    if not by_method:
        warnings.warn("no recorded series; no curve files written")
    return written


def _emit_histogram(values: np.ndarray, path: str, bins: int = 40) -> str | None:
    values = values[np.isfinite(values)]
    if values.size == 0:
        warnings.warn(f"empty diagnostic series; skipping {path}")
        return None
    counts, edges = np.histogram(values, bins=bins)
    rows = [{
        "bin_left": float(edges[i]),
        "bin_right": float(edges[i + 1]),
        "count": int(counts[i]),
    } for i in range(len(counts))]
    return emit_csv(rows, path, ("bin_left", "bin_right", "count"))


def _render_curves_svg(by_method: dict, path: str) -> str | None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in sorted(by_method):
        series = by_method[method]
        n = min(len(s.t) for s in series)
        stack = np.stack([s.grad_norm[:n] for s in series])
        ax.plot(np.arange(n), np.median(stack, axis=0), label=method)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("gradient norm")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


_LIST_FIELDS = {"methods", "stepsize_grid", "tau_grid", "rvec_grid"}


def parse_config(path: str) -> ExperimentConfig:
    """Flat key = value config file; keys mirror ExperimentConfig fields.

    Lists are comma-separated; '#' starts a comment; unknown keys are errors.
    """
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw, path, lineno)
    return ExperimentConfig(**values)


def _parse_value(key: str, raw: str, path: str, lineno: int):
    items = [s.strip() for s in raw.split(",")] if key in _LIST_FIELDS else [raw]
    if key == "methods":
        return tuple(items)
    if key in _LIST_FIELDS:
        try:
            return tuple(float(s) for s in items)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad number in {key}") from exc
    target = {
        "d": int, "M": int, "iter_budget": int, "validation_seeds": int,
        "evaluation_seeds": int, "master_seed": int,
        "noise_family": str, "output_dir": str,
    }.get(key, float)
    try:
        return target(raw)
    except ValueError as exc:
        raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
