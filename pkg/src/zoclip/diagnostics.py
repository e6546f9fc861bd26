"""Estimator-quality diagnostics and empirical checkers for the tail/bias bounds.

The checkers Monte-Carlo the left side of each closed-form inequality and
compare against the analytic right side.  Slack policy: 3 Monte Carlo standard
errors on the empirical side, zero slack on the bound.  These are mathematical
inequalities on the package's own noise models, so a failing check indicates an
implementation bug, not an unlucky draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .estimator import psi_tau_vec, sphere_block
from .oracles import NoiseModelSpec, QuadraticProblem, _sparse_params, _weakl2_params


def cosine_alignment(g: np.ndarray, grad_true: np.ndarray) -> float:
    """Cosine of the angle between g and the true gradient; NaN if either is zero."""
    g = np.asarray(g, dtype=np.float64)
    grad_true = np.asarray(grad_true, dtype=np.float64)
    ng = np.linalg.norm(g)
    nt = np.linalg.norm(grad_true)
    if ng == 0.0 or nt == 0.0:
        return float("nan")
    return float(np.clip((g @ grad_true) / (ng * nt), -1.0, 1.0))


def lower_median(values: np.ndarray) -> float:
    """Median with the lower-median convention for even lengths."""
    values = np.asarray(values, dtype=np.float64)
    k = (values.shape[-1] - 1) // 2
    return float(np.partition(values, k, axis=-1)[..., k])


def outlier_ratio(raw_scalars) -> float:
    """log10(max|Y_l| / median|Y_l|) of one batch; NaN when the median is zero."""
    a = np.abs(np.asarray(raw_scalars, dtype=np.float64))
    if a.size == 0:
        raise ValueError("empty batch")
    med = lower_median(a)
    if med == 0.0:
        return float("nan")
    return float(np.log10(a.max() / med))


def outlier_ratio_rows(abs_scalars: np.ndarray) -> np.ndarray:
    """Row-wise outlier ratio for a (..., M) array of |Y_l| values."""
    m = abs_scalars.shape[-1]
    k = (m - 1) // 2
    med = np.partition(abs_scalars, k, axis=-1)[..., k]
    mx = abs_scalars.max(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(med > 0.0, np.log10(mx / np.where(med > 0, med, 1.0)), np.nan)


@dataclass(frozen=True)
class LemmaCheckReport:
    lemma_id: str
    empirical_lhs: float
    bound_rhs: float
    n_samples: int
    passed: bool
    margin: float  # bound_rhs + slack - empirical_lhs; positive means headroom


def _report(lemma_id, lhs, rhs, n, slack):
    return LemmaCheckReport(
        lemma_id=lemma_id,
        empirical_lhs=float(lhs),
        bound_rhs=float(rhs),
        n_samples=int(n),
        passed=bool(lhs <= rhs + slack),
        margin=float(rhs + slack - lhs),
    )


def directional_scale(problem: QuadraticProblem, x: np.ndarray, mu: float) -> float:
    """Scalar scale S controlling the two-point estimator tails at a localized x.

    S = (sqrt(L * gap_bound) + sigma)/sqrt(d) + L*mu with gap_bound = f(x) - f_*
    inflated to the localization level 4*(f(x)-f_*) used by the tail bound.
    """
    sigma = problem.noise.sigma_scale if problem.noise.family != "none" else 0.0
    bar = problem.f(x)  # f_* = 0 for the quadratic
    return (math.sqrt(problem.L * bar) + sigma) / math.sqrt(problem.d) + problem.L * mu


def sample_directional(
    problem: QuadraticProblem, x: np.ndarray, mu: float, n: int, rng_key
) -> np.ndarray:
    """n i.i.d. two-point directional scalars Y at the point x (vectorized)."""
    x = np.asarray(x, dtype=np.float64)
    idx = np.arange(n)
    dir_keys = rng.derive_keys(int(rng_key), "diag-dir", index=idx)
    noise_keys = rng.derive_keys(int(rng_key), "diag-noise", index=idx)
    chunk = 50_000
    out = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        U = sphere_block(dir_keys[lo:hi], problem.d)
        pts_p = x + mu * U
        pts_m = x - mu * U
        fp = problem.evaluate_batch(pts_p, noise_keys[lo:hi])
        fm = problem.evaluate_batch(pts_m, noise_keys[lo:hi])
        out[lo:hi] = (fp - fm) / (2.0 * mu)
    return out


def directional_gradient_mc(
    problem: QuadraticProblem, x: np.ndarray, mu: float, n: int, rng_key
) -> tuple[np.ndarray, float]:
    """Monte Carlo of d*E[D_mu f(x,u) u] and the total standard error of its norm.

    Returns (gradient estimate, sqrt(sum of per-component MC variances)).
    """
    x = np.asarray(x, dtype=np.float64)
    d = problem.d
    idx = np.arange(n)
    dir_keys = rng.derive_keys(int(rng_key), "diag-dir", index=idx)
    noise_keys = rng.derive_keys(int(rng_key), "diag-noise", index=idx)
    chunk = 100_000
    acc = np.zeros(d)
    acc_sq = np.zeros(d)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        U = sphere_block(dir_keys[lo:hi], d)
        fp = problem.evaluate_batch(x + mu * U, noise_keys[lo:hi])
        fm = problem.evaluate_batch(x - mu * U, noise_keys[lo:hi])
        y = (fp - fm) / (2.0 * mu)
        terms = d * y[:, None] * U
        acc += terms.sum(axis=0)
        acc_sq += (terms**2).sum(axis=0)
    grad_mc = acc / n
    comp_var = acc_sq / n - grad_mc**2
    se = math.sqrt(max(float(comp_var.sum()), 0.0) / n)
    return grad_mc, se


def _noise_magnitudes(spec: NoiseModelSpec, d: int, n: int, rng_key) -> np.ndarray:
    keys = rng.derive_keys(int(rng_key), "noise-mag", index=np.arange(n))
    if spec.family == "sparse_pareto":
        a, _, _ = _sparse_params(spec, d, keys)
        return a
    if spec.family == "weakL2_infinite_variance":
        return np.abs(_weakl2_params(keys))
    raise ValueError("noise family has no magnitude distribution")


def check_clipping_bias(
    sampler, S: float, p: float, tau_grid, n: int = 1_000_000, rng_key: int = 0
) -> list[LemmaCheckReport]:
    """E|Z - psi_tau(Z)| <= (2^(2p+1)/(p-1)) * S^p * tau^(1-p) for tau >= 4S.

    `sampler(n, key)` draws n i.i.d. copies of the scalar Z whose tail obeys
    P(|Z| > t) <= 2^(2p+1) S^p t^(-p) for t >= 4S.
    """
    reports = []
    z = np.abs(np.asarray(sampler(n, rng_key), dtype=np.float64))
    for tau in tau_grid:
        if tau < 4.0 * S:
            raise ValueError(f"tau={tau} below the bound's validity range 4S={4*S}")
        excess = np.maximum(z - tau, 0.0)
        lhs = excess.mean()
        se = excess.std(ddof=1) / math.sqrt(n)
        rhs = (2.0 ** (2 * p + 1) / (p - 1.0)) * S**p * tau ** (1.0 - p)
        reports.append(_report(f"clipping-bias(tau={tau:g})", lhs, rhs, n, 3 * se))
    return reports


def check_clipped_second_moment(
    sampler, S: float, p: float, tau_grid, n: int = 1_000_000, rng_key: int = 0
) -> list[LemmaCheckReport]:
    """E[psi_tau(Z)^2] <= 64 * S^p * tau^(2-p) * (1 + log(tau/S)) for tau >= 4S."""
    reports = []
    z = np.asarray(sampler(n, rng_key), dtype=np.float64)
    for tau in tau_grid:
        if tau < 4.0 * S:
            raise ValueError(f"tau={tau} below the bound's validity range 4S={4*S}")
        sq = psi_tau_vec(z, tau) ** 2
        lhs = sq.mean()
        se = sq.std(ddof=1) / math.sqrt(n)
        rhs = 64.0 * S**p * tau ** (2.0 - p) * (1.0 + math.log(tau / S))
        reports.append(_report(f"clipped-second-moment(tau={tau:g})", lhs, rhs, n, 3 * se))
    return reports


def check_smoothing_bias(
    problem: QuadraticProblem,
    x_grid,
    mu_grid,
    n: int = 200_000,
    rng_key: int = 0,
) -> list[LemmaCheckReport]:
    """|f_mu(x) - f(x)| <= L*mu^2/2 and ||grad f_mu(x) - grad f(x)|| <= L*mu.

    Requires the noiseless problem.  The value side is Monte Carlo with a CLT
    band; the gradient side uses d*E[D_mu f(x,u) u] against the exact gradient
    (equal for the quadratic, so the check is at Monte Carlo resolution).
    """
    if problem.noise.family != "none":
        raise ValueError("smoothing-bias check needs a noiseless problem")
    from .estimator import smoothed_value_mc

    reports = []
    for xi, x in enumerate(x_grid):
        x = np.asarray(x, dtype=np.float64)
        for mu in mu_grid:
            key = rng.derive_key(int(rng_key), "smooth", xi, format(mu, ".17g"))
            est = smoothed_value_mc(problem.f_batch, x, mu, n, key)
            gap = abs(est - problem.f(x))
            # CLT band on the MC estimate of f_mu: the sampled values spread as
            # mu*||grad f(x)|| to first order plus an O(L mu^2) curvature term
            grad_norm = float(np.linalg.norm(problem.true_gradient(x)))
            se = mu * (grad_norm + problem.L * mu) / math.sqrt(n)
            rhs = problem.L * mu**2 / 2.0
            reports.append(
                _report(f"smoothing-bias-value(x{xi}|mu={mu:g})", gap, rhs, n, 3 * se)
            )

            grad_mc, se_grad = directional_gradient_mc(
                problem, x, mu, n, rng.derive_key(key, "grad")
            )
            grad_gap = float(np.linalg.norm(grad_mc - problem.true_gradient(x)))
            reports.append(
                _report(
                    f"smoothing-bias-grad(x{xi}|mu={mu:g})",
                    grad_gap,
                    0.0,  # exact equality for the quadratic; allow 5 SE
                    n,
                    5 * se_grad,
                )
            )
    return reports


def check_weak_tail(
    spec: NoiseModelSpec,
    p: float,
    sigma: float,
    t_grid,
    n: int = 1_000_000,
    d: int = 100,
    rng_key: int = 0,
) -> list[LemmaCheckReport]:
    """Empirical P(||noise|| > t) against the (sigma/t)^p tail bound."""
    mags = _noise_magnitudes(spec, d, n, rng_key)
    reports = []
    for t in t_grid:
        freq = float(np.mean(mags > t))
        rhs = min(1.0, (sigma / t) ** p)
        se = math.sqrt(max(freq * (1 - freq), 1.0 / n) / n)
        reports.append(_report(f"weak-tail(t={t:g})", freq, rhs, n, 3 * se))
    return reports


def aggregate_metrics(results, eps: float) -> dict:
    """Per-method summary over evaluation seeds.

    `results` is an iterable with attributes method, seed, final_grad_norm and
    optionally per-iteration cosine arrays.  Returns, per method: median final
    stationarity, success rate (final <= eps), median cosine over all recorded
    iterations of all seeds.
    """
    by_method: dict[str, dict] = {}
    for r in sorted(results, key=lambda r: (r.method, r.seed)):
        slot = by_method.setdefault(r.method, {"finals": [], "cosines": []})
        slot["finals"].append(float(r.final_grad_norm))
        cos = getattr(r, "cosine", None)
        if cos is not None:
            c = np.asarray(cos, dtype=np.float64)
            slot["cosines"].append(c[np.isfinite(c)])
    summary = {}
    for method, slot in sorted(by_method.items()):
        finals = np.asarray(slot["finals"])
        cos_all = (
            np.concatenate(slot["cosines"]) if slot["cosines"] else np.asarray([])
        )
        summary[method] = {
            "median_final": float(np.median(finals)),
            "success_rate": float(np.mean(finals <= eps)),
            "median_cosine": float(np.median(cos_all)) if cos_all.size else float("nan"),
            "n_seeds": int(finals.size),
        }
    return summary
