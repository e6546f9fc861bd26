"""The clipped zeroth-order optimizer loop: base and momentum variants.

Both variants share one skeleton.  The base method updates directly with the
batched estimate g_t; the momentum method warm-starts its buffer from a
separate large batch at x_0 and then averages, m_t = beta*m_{t-1} +
(1-beta)*g_t.  The unclipped and vector-clipped baselines are aggregation
modes of the same loop, so every comparison runs under an identical update
rule and query budget.

Per-iteration randomness is keyed by (master_seed, "iter", t) with the warm
start on (master_seed, "warm"); replaying a seed reproduces the trajectory
bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import estimator, rng
from .diagnostics import cosine_alignment, outlier_ratio_rows

DIVERGENCE_NORM = 1e9


@dataclass(frozen=True)
class BaseConfig:
    alpha: float
    mu: float
    M: int
    T: int
    mode: str = "scalar_clip"
    tau: float | None = None
    vec_radius: float | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("stepsize must be nonnegative")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.M < 1:
            raise ValueError("batch size M must be >= 1")
        if self.T < 0:
            raise ValueError("iteration budget must be >= 0")
        if self.mode not in estimator.MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "scalar_clip" and not (self.tau and self.tau > 0):
            raise ValueError("scalar_clip requires tau > 0")
        if self.mode == "vector_clip" and not (self.vec_radius and self.vec_radius > 0):
            raise ValueError("vector_clip requires vec_radius > 0")

    @property
    def threshold(self) -> float | None:
        if self.mode == "scalar_clip":
            return self.tau
        if self.mode == "vector_clip":
            return self.vec_radius
        return None


@dataclass(frozen=True)
class MomentumConfig(BaseConfig):
    beta: float = 0.9
    M0: int = 1
    tau0: float | None = None

    def __post_init__(self):
        super().__post_init__()
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("beta must lie in [0, 1)")
        if self.M0 < 1:
            raise ValueError("warm-start batch size M0 must be >= 1")
        if self.mode == "scalar_clip" and not (self.tau0 and self.tau0 > 0):
            raise ValueError("momentum scalar_clip requires tau0 > 0")

    @property
    def warm_threshold(self) -> float | None:
        if self.mode == "scalar_clip":
            return self.tau0
        return self.threshold


@dataclass
class OptimizerState:
    t: int
    x: np.ndarray
    m: np.ndarray | None = None
    queries: int = 0


@dataclass
class RunSeries:
    """Per-iteration metrics of one run, as column arrays.

    Row t describes optimization step t: the gradient estimate was formed at
    the pre-step iterate, so `cosine`, `outlier_log_ratio` and
    `clipped_fraction` refer to that batch, while `grad_norm` is the true
    gradient norm at the iterate the step produced.  The last row's grad_norm
    is therefore the run's final stationarity measure.
    """

    method: str
    seed: int
    t: np.ndarray
    grad_norm: np.ndarray
    cosine: np.ndarray
    outlier_log_ratio: np.ndarray
    clipped_fraction: np.ndarray
    queries: np.ndarray


@dataclass
class RunResult:
    method: str
    seed: int
    final_grad_norm: float
    queries: int
    diverged: bool
    series: RunSeries | None = None

    @property
    def cosine(self):
        return self.series.cosine if self.series is not None else None


def iter_key(master_seed: int, t: int) -> int:
    return rng.derive_key(int(master_seed), "iter", t)


def warm_key(master_seed: int) -> int:
    return rng.derive_key(int(master_seed), "warm")


def base_step(
    state: OptimizerState, oracle, config: BaseConfig, rng_key
) -> tuple[OptimizerState, estimator.GradientEstimate]:
    """One estimator call and iterate update; advances queries by 2M."""
    est = estimator.estimate_gradient(
        oracle, state.x, config.mu, config.M, config.mode, config.threshold, rng_key
    )
    x_new = state.x - config.alpha * est.g
    new = OptimizerState(
        t=state.t + 1, x=x_new, m=state.m, queries=state.queries + 2 * config.M
    )
    return new, est


def warm_start(
    x0: np.ndarray, oracle, config: MomentumConfig, rng_key
) -> tuple[OptimizerState, estimator.GradientEstimate]:
    """Momentum initialization: m0 = g0 from an M0-sized batch, x1 = x0 - alpha*g0."""
    est = estimator.estimate_gradient(
        oracle, x0, config.mu, config.M0, config.mode, config.warm_threshold, rng_key
    )
    x1 = np.asarray(x0, dtype=np.float64) - config.alpha * est.g
    return OptimizerState(t=1, x=x1, m=est.g.copy(), queries=2 * config.M0), est


def momentum_step(
    state: OptimizerState, oracle, config: MomentumConfig, rng_key
) -> tuple[OptimizerState, estimator.GradientEstimate]:
    """m_t = beta*m_{t-1} + (1-beta)*g_t; x_{t+1} = x_t - alpha*m_t."""
    if state.m is None:
        raise ValueError("momentum step requires a warm-started state")
    est = estimator.estimate_gradient(
        oracle, state.x, config.mu, config.M, config.mode, config.threshold, rng_key
    )
    m_new = config.beta * state.m + (1.0 - config.beta) * est.g
    x_new = state.x - config.alpha * m_new
    new = OptimizerState(
        t=state.t + 1, x=x_new, m=m_new, queries=state.queries + 2 * config.M
    )
    return new, est


def run(
    problem,
    config: BaseConfig,
    master_seed: int,
    record: bool = True,
    oracle=None,
    method_name: str | None = None,
) -> RunResult:
    """Execute T steps from problem.x0 and collect per-iteration diagnostics.

    `oracle` overrides the evaluation channel (e.g. a counting wrapper or an
    external oracle); the true-gradient diagnostics always come from `problem`.
    """
    oracle = problem if oracle is None else oracle
    momentum = isinstance(config, MomentumConfig)
    method = method_name or (
        "scalar_clip_momentum" if momentum and config.mode == "scalar_clip" else config.mode
    )
    x0 = np.asarray(problem.x0, dtype=np.float64)
    state = OptimizerState(t=0, x=x0.copy(), queries=0)
    rows_t, rows_gn, rows_cos, rows_out, rows_cf, rows_q = [], [], [], [], [], []
    diverged = False

    for t in range(config.T):
        x_before = state.x
        if momentum and t == 0:
            state, est = warm_start(x_before, oracle, config, warm_key(master_seed))
            batch_m = config.M0
        elif momentum:
            state, est = momentum_step(state, oracle, config, iter_key(master_seed, t))
            batch_m = config.M
        else:
            state, est = base_step(state, oracle, config, iter_key(master_seed, t))
            batch_m = config.M

        if not np.all(np.isfinite(state.x)) or np.linalg.norm(state.x) > DIVERGENCE_NORM:
            diverged = True
            state = replace_state_x(state, x_before)  # keep last finite iterate
        if record:
            grad_true = problem.true_gradient(x_before)
            rows_t.append(t)
            rows_gn.append(float(np.linalg.norm(problem.true_gradient(state.x))))
            rows_cos.append(cosine_alignment(est.g, grad_true))
            rows_out.append(
                float(outlier_ratio_rows(np.abs(est.raw_scalars)[None, :])[0])
            )
            rows_cf.append(est.clipped_count / batch_m)
            rows_q.append(state.queries)
        if diverged:
            break

    series = None
    if record:
        series = RunSeries(
            method=method,
            seed=int(master_seed),
            t=np.asarray(rows_t, dtype=np.int64),
            grad_norm=np.asarray(rows_gn),
            cosine=np.asarray(rows_cos),
            outlier_log_ratio=np.asarray(rows_out),
            clipped_fraction=np.asarray(rows_cf),
            queries=np.asarray(rows_q, dtype=np.int64),
        )
    final = float(np.linalg.norm(problem.true_gradient(state.x)))
    return RunResult(
        method=method,
        seed=int(master_seed),
        final_grad_norm=final,
        queries=state.queries,
        diverged=diverged,
        series=series,
    )


def replace_state_x(state: OptimizerState, x: np.ndarray) -> OptimizerState:
    return OptimizerState(t=state.t, x=x.copy(), m=state.m, queries=state.queries)


def _fast_directional(problem, X: np.ndarray, U: np.ndarray, noise_keys: np.ndarray):
    """Y[c, l] for every cell iterate X[c] against shared directions U.

    Exact two-point algebra of the quadratic sample objective:
    Y = <x, u> + <zeta(key), u>.  Falls back to explicit two-point oracle
    evaluation for problems without the fast structure.
    """
    if hasattr(problem, "noise_inner"):
        signal = X @ U.T
        noise = problem.noise_inner(U, noise_keys)
        return signal + noise[None, :]
    raise NotImplementedError("batched runs need a problem with noise_inner")


def run_cells(
    problem,
    configs: list[BaseConfig],
    master_seed: int,
    record: bool = False,
) -> list[RunResult]:
    """Run many grid cells against one seed with shared per-iteration draws.

    All configs must share (mu, M, T) and variant kind; alpha, mode and
    thresholds may differ per cell.  Directions and noise samples at iteration
    t depend only on (seed, t, l), never on the trajectory, so cells legally
    share them; this is what makes grid tuning affordable on one core.
    """
    n = len(configs)
    momentum = isinstance(configs[0], MomentumConfig)
    for c in configs:
        if (c.mu, c.M, c.T) != (configs[0].mu, configs[0].M, configs[0].T):
            raise ValueError("run_cells requires shared (mu, M, T)")
        if isinstance(c, MomentumConfig) != momentum:
            raise ValueError("run_cells cannot mix base and momentum cells")
    mu, M, T = configs[0].mu, configs[0].M, configs[0].T
    d = problem.d
    x0 = np.asarray(problem.x0, dtype=np.float64)
    X = np.tile(x0, (n, 1))
    Mom = np.zeros((n, d)) if momentum else None
    alphas = np.asarray([c.alpha for c in configs])
    alive = np.ones(n, dtype=bool)
    queries = np.zeros(n, dtype=np.int64)
    diverged = np.zeros(n, dtype=bool)
    recs = [
        {"t": [], "grad_norm": [], "cosine": [], "outlier": [], "clipfrac": [], "queries": []}
        for _ in range(n)
    ]

    for t in range(T):
        warm = momentum and t == 0
        key = warm_key(master_seed) if warm else iter_key(master_seed, t)
        m_batch = configs[0].M0 if warm else M
        if warm:
            for c in configs:
                if c.M0 != configs[0].M0:
                    raise ValueError("run_cells requires shared M0")
        dir_keys, noise_keys = estimator.batch_keys(key, m_batch)
        U = estimator.sphere_block(dir_keys, d)
        Y = _fast_directional(problem, X, U, noise_keys)  # (n, m_batch)

        G = np.empty((n, d))
        clipped = np.zeros(n)
        scale = d / m_batch
        for i, c in enumerate(configs):
            if not alive[i]:
                continue
            thr = c.warm_threshold if (warm and momentum) else c.threshold
            if c.mode == "raw":
                G[i] = scale * (Y[i] @ U)
            elif c.mode == "scalar_clip":
                w = estimator.psi_tau_vec(Y[i], thr)
                G[i] = scale * (w @ U)
                clipped[i] = np.count_nonzero(np.abs(Y[i]) > thr)
            else:
                g_raw = scale * (Y[i] @ U)
                G[i] = estimator.vector_clip(g_raw, thr)
                clipped[i] = float(np.linalg.norm(g_raw) > thr)

        X_prev = X.copy()
        upd = alive.nonzero()[0]
        if momentum:
            if warm:
                Mom[upd] = G[upd]
            else:
                for i in upd:
                    Mom[i] = configs[i].beta * Mom[i] + (1 - configs[i].beta) * G[i]
            X[upd] = X[upd] - alphas[upd, None] * Mom[upd]
        else:
            X[upd] = X[upd] - alphas[upd, None] * G[upd]
        queries[upd] += 2 * m_batch

        norms = np.linalg.norm(X, axis=1)
        blew = alive & (~np.isfinite(norms) | (norms > DIVERGENCE_NORM))
        if np.any(blew):
            X[blew] = X_prev[blew]  # keep last finite iterate
            diverged |= blew

        if record:
            out_row = outlier_ratio_rows(np.abs(Y))
            for i in upd:
                grad_true = problem.true_gradient(X_prev[i])
                recs[i]["t"].append(t)
                recs[i]["grad_norm"].append(
                    float(np.linalg.norm(problem.true_gradient(X[i])))
                )
                recs[i]["cosine"].append(cosine_alignment(G[i], grad_true))
                recs[i]["outlier"].append(float(out_row[i]))
                recs[i]["clipfrac"].append(float(clipped[i]) / m_batch)
                recs[i]["queries"].append(int(queries[i]))
        alive &= ~blew
        if not np.any(alive):
            break

    results = []
    for i, c in enumerate(configs):
        method = (
            "scalar_clip_momentum"
            if momentum and c.mode == "scalar_clip"
            else c.mode
        )
        series = None
        if record:
            r = recs[i]
            series = RunSeries(
                method=method,
                seed=int(master_seed),
                t=np.asarray(r["t"], dtype=np.int64),
                grad_norm=np.asarray(r["grad_norm"]),
                cosine=np.asarray(r["cosine"]),
                outlier_log_ratio=np.asarray(r["outlier"]),
                clipped_fraction=np.asarray(r["clipfrac"]),
                queries=np.asarray(r["queries"], dtype=np.int64),
            )
        results.append(
            RunResult(
                method=method,
                seed=int(master_seed),
                final_grad_norm=float(np.linalg.norm(problem.true_gradient(X[i]))),
                queries=int(queries[i]),
                diverged=bool(diverged[i]),
                series=series,
            )
        )
    return results
