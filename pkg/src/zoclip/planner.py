"""Theory-prescribed parameter planning for the clipped zeroth-order methods.

Given problem constants (L, initial gap, noise scale and tail exponent,
dimension, target accuracy, failure probability) the planner computes the
stepsize, horizon, clip thresholds and the smallest batch sizes meeting the
high-probability deviation target, and reports the predicted query complexity.

Batch sizes are resolved exactly: the deviation level

    eta0(M) = C_p * d * S_mu * r^((p-1)/p) * sqrt(1 + log(1/r)),   r = ratio/M

is driven below eps/4 - L*mu by linear scan up to the ratio where eta0 becomes
provably monotone, then doubling and bisection.  All logarithms are natural.

Momentum plans reuse the base deviation constant C_p; the momentum theory only
fixes its constants up to p-dependent factors, so momentum batch sizes are
order-correct rather than constant-exact ("constant-approximate" plans).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InfeasiblePlanError

SQRT3 = math.sqrt(3.0)
DEFAULT_M_CEILING = 2**40


@dataclass(frozen=True)
class PlannerInputs:
    L: float
    Delta0: float
    sigma: float
    p: float
    d: int
    eps: float
    delta: float
    mu: float | str = "auto"  # "auto" = eps / (4 L d)
    beta: float | None = None

    def __post_init__(self):
        if not (self.L > 0 and self.Delta0 > 0 and self.sigma > 0):
            raise ValueError("L, Delta0, sigma must be positive")
        if not (1.0 < self.p <= 2.0):
            raise ValueError("tail exponent p must lie in (1, 2]")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not (self.eps > 0 and 0 < self.delta <= 1):
            raise ValueError("need eps > 0 and delta in (0, 1]")
        if self.mu != "auto" and not (isinstance(self.mu, (int, float)) and self.mu > 0):
            raise ValueError("mu must be positive or 'auto'")

    @property
    def mu_value(self) -> float:
        if self.mu == "auto":
            return self.eps / (4.0 * self.L * self.d)
        return float(self.mu)


@dataclass(frozen=True)
class PlannedParams:
    variant: str  # "base" | "momentum"
    bar_Delta0: float
    S_mu: float
    C_p: float
    alpha: float
    T: int
    lam: float
    tau: float
    M_required: int
    eta0: float
    eta: float
    predicted_queries: int
    trivial_regime_flag: bool
    mu: float
    lam0: float | None = None
    tau0: float | None = None
    M0_required: int | None = None
    beta: float | None = None
    constant_approximate: bool = False


def c_p(p: float) -> float:
    return 120.0 + 2.0 ** (4.0 - p) / (p - 1.0)


def bar_delta0(L: float, Delta0: float, mu: float) -> float:
    return Delta0 + L * mu * mu / 2.0


def s_mu(L: float, bar_d0: float, sigma: float, d: int, mu: float) -> float:
    return (math.sqrt(L * bar_d0) + sigma) / math.sqrt(d) + L * mu


def _eta0(M: float, ratio: float, p: float, scale: float) -> float:
    """scale * (ratio/M)^((p-1)/p) * sqrt(1 + log(M/ratio)); needs M >= ratio."""
    r = ratio / M
    return scale * r ** ((p - 1.0) / p) * math.sqrt(1.0 + math.log(1.0 / r))


def _smallest_batch(
    ratio: float, p: float, scale: float, target: float, ceiling: int
) -> int:
    """Smallest integer M >= ratio with eta0(M) <= target."""
    if target <= 0:
        raise InfeasiblePlanError(
            "deviation target is nonpositive (L*mu already exceeds eps/4)",
            limiting_eta=math.inf,
        )
    a = (p - 1.0) / p
    m_lo = max(1, math.ceil(ratio))
    # eta0 is decreasing once log(M/ratio) > 1/(2a) - 1; scan the head range
    m_mono = max(m_lo, math.ceil(ratio * math.exp(max(0.0, 1.0 / (2.0 * a) - 1.0))))
    for m in range(m_lo, min(m_mono, ceiling) + 1):
        if _eta0(m, ratio, p, scale) <= target:
            return m
    # doubling past the monotone knee, then bisection
    lo = max(m_mono, m_lo)
    hi = lo
    while _eta0(hi, ratio, p, scale) > target:
        if hi >= ceiling:
            raise InfeasiblePlanError(
                f"no batch size below ceiling {ceiling} meets the deviation target",
                limiting_eta=_eta0(ceiling, ratio, p, scale),
            )
        hi = min(2 * hi, ceiling)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _eta0(mid, ratio, p, scale) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def plan_base(inputs: PlannerInputs, m_ceiling: int = DEFAULT_M_CEILING) -> PlannedParams:
    """Base-variant schedule: alpha = 1/(4L), horizon, threshold and batch size."""
    if inputs.beta is not None:
        raise ValueError("plan_base takes no momentum parameter")
    mu = inputs.mu_value
    bar = bar_delta0(inputs.L, inputs.Delta0, mu)
    smu = s_mu(inputs.L, bar, inputs.sigma, inputs.d, mu)
    cp = c_p(inputs.p)
    alpha = 1.0 / (4.0 * inputs.L)
    T = max(3, math.ceil(32.0 * inputs.L * bar / inputs.eps**2))
    lam = math.log(T / inputs.delta)
    scale = cp * inputs.d * smu
    target = inputs.eps / 4.0 - inputs.L * mu
    M = _smallest_batch(lam, inputs.p, scale, target, m_ceiling)
    eta0 = _eta0(M, lam, inputs.p, scale)
    tau = 8.0 * smu * (M / lam) ** (1.0 / inputs.p)
    return PlannedParams(
        variant="base",
        bar_Delta0=bar,
        S_mu=smu,
        C_p=cp,
        alpha=alpha,
        T=T,
        lam=lam,
        tau=tau,
        M_required=M,
        eta0=eta0,
        eta=eta0 + inputs.L * mu,
        predicted_queries=2 * M * T,
        trivial_regime_flag=inputs.eps**2 > 32.0 * inputs.L * bar,
        mu=mu,
    )


def plan_momentum(
    inputs: PlannerInputs, m_ceiling: int = DEFAULT_M_CEILING
) -> PlannedParams:
    """Momentum-variant schedule for beta in [1/2, 1); constant-approximate."""
    beta = inputs.beta
    if beta is None:
        raise ValueError("plan_momentum requires beta")
    if not (0.5 <= beta < 1.0):
        raise ValueError("momentum theory requires beta in [1/2, 1)")
    return _plan_momentum_w(inputs, 1.0 - beta, m_ceiling)


def _plan_momentum_w(
    inputs: PlannerInputs, w: float, m_ceiling: int
) -> PlannedParams:
    """Momentum schedule parameterized by the averaging weight w = 1 - beta.

    Working in w directly keeps weights below float epsilon representable;
    beta = 1 - w rounds to 1.0 there and is reported as such.
    """
    mu = inputs.mu_value
    if mu > inputs.eps / (4.0 * inputs.L * inputs.d) * (1.0 + 1e-12):
        raise ValueError("momentum theory requires mu <= eps / (4 L d)")
    bar = bar_delta0(inputs.L, inputs.Delta0, mu)
    smu = s_mu(inputs.L, bar, inputs.sigma, inputs.d, mu)
    cp = c_p(inputs.p)
    alpha = w / (16.0 * SQRT3 * inputs.L)
    T = math.ceil(512.0 * SQRT3 * inputs.L * bar / (w * inputs.eps**2)) + 2
    lam = math.log(2.0 * T / inputs.delta)
    lam0 = math.log(2.0 / inputs.delta)
    scale = cp * inputs.d * smu
    target = inputs.eps / 4.0 - inputs.L * mu
    M = _smallest_batch(w * lam, inputs.p, scale, target, m_ceiling)
    M0 = _smallest_batch(lam0, inputs.p, scale, target, m_ceiling)
    eta0 = _eta0(M, w * lam, inputs.p, scale)
    tau = 8.0 * smu * (M / (w * lam)) ** (1.0 / inputs.p)
    tau0 = 8.0 * smu * (M0 / lam0) ** (1.0 / inputs.p)
    return PlannedParams(
        variant="momentum",
        bar_Delta0=bar,
        S_mu=smu,
        C_p=cp,
        alpha=alpha,
        T=T,
        lam=lam,
        tau=tau,
        M_required=M,
        eta0=eta0,
        eta=eta0 + inputs.L * mu,
        predicted_queries=2 * M0 + 2 * M * (T - 1),
        trivial_regime_flag=inputs.eps**2 > 32.0 * inputs.L * bar,
        mu=mu,
        lam0=lam0,
        tau0=tau0,
        M0_required=M0,
        beta=1.0 - w,
        constant_approximate=True,
    )


def solve_smallbatch_w(
    inputs: PlannerInputs, m_ceiling: int = DEFAULT_M_CEILING
) -> float:
    """The averaging weight w = 1 - beta whose momentum plan needs only M = 1.

    The running-batch requirement shrinks with w, so this is the largest such
    w in (0, 1/2]; found by bisection on log(w).  Returned as the weight rather
    than beta because the solution is often below float epsilon, where 1 - w
    is not representable.
    """
    def m_req(w: float) -> int:
        return _plan_momentum_w(inputs, w, m_ceiling).M_required

    if m_req(0.5) <= 1:
        return 0.5
    lo, hi = math.log(1e-60), math.log(0.5)  # log(w)
    if m_req(math.exp(lo)) > 1:
        raise InfeasiblePlanError(
            "no momentum weight above 1e-60 reaches a unit running batch",
            limiting_eta=math.inf,
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if m_req(math.exp(mid)) <= 1:
            lo = mid
        else:
            hi = mid
    return math.exp(lo)


@dataclass(frozen=True)
class SmallBatchPlan:
    """M = 1 momentum plan: the theory solution plus a desk-scale budget plan.

    The theory beta drives the horizon far beyond any desk-scale budget (its
    deviation constants are worst-case).  When theory_T exceeds the iteration
    cap, `beta`, `alpha`, `tau` are re-solved against the capped horizon:
    beta from alpha * t_cap = decay_target (enough contraction within budget)
    and tau at the calibrated multiple of the scalar scale S_mu that minimizes
    the empirical stationarity floor on the heavy-tailed quadratics.
    """

    theory_w: float
    theory_T: int
    theory_M0: int
    capped: bool
    beta: float
    alpha: float
    T: int
    tau: float
    tau0: float
    M0: int
    S_mu: float


def plan_momentum_smallbatch(
    inputs: PlannerInputs,
    t_cap: int = 200_000,
    m0_cap: int = 4096,
    decay_target: float = 8.0,
    tau_scale: float = 0.6,
    m_ceiling: int = 2**80,
) -> SmallBatchPlan:
    theory_w = solve_smallbatch_w(inputs, m_ceiling=m_ceiling)
    theory = _plan_momentum_w(inputs, theory_w, m_ceiling)
    capped = theory.T > t_cap
    if not capped:  # pragma: no cover - not reachable at desk scale
        return SmallBatchPlan(
            theory_w=theory_w,
            theory_T=theory.T,
            theory_M0=theory.M0_required,
            capped=False,
            beta=1.0 - theory_w,
            alpha=theory.alpha,
            T=theory.T,
            tau=theory.tau,
            tau0=theory.tau0,
            M0=min(theory.M0_required, m0_cap),
            S_mu=theory.S_mu,
        )
    w = min(0.5, 16.0 * SQRT3 * inputs.L * decay_target / t_cap)
    alpha = w / (16.0 * SQRT3 * inputs.L)
    tau = tau_scale * theory.S_mu
    lam0 = math.log(2.0 / inputs.delta)
    m0 = min(theory.M0_required, m0_cap)
    tau0 = 8.0 * theory.S_mu * (m0 / lam0) ** (1.0 / inputs.p)
    return SmallBatchPlan(
        theory_w=theory_w,
        theory_T=theory.T,
        theory_M0=theory.M0_required,
        capped=True,
        beta=1.0 - w,
        alpha=alpha,
        T=t_cap,
        tau=tau,
        tau0=tau0,
        M0=m0,
        S_mu=theory.S_mu,
    )


def predicted_complexity(params: PlannedParams, inputs: PlannerInputs) -> dict:
    """Query count plus the accuracy/dimension exponents for the given tail index."""
    p = inputs.p
    eps_exp = (3.0 * p - 2.0) / (p - 1.0)
    d_exp = p / (2.0 * (p - 1.0))
    return {
        "variant": params.variant,
        "predicted_queries": params.predicted_queries,
        "eps_exponent": eps_exp,
        "d_exponent": d_exp,
        "near_singular": p <= 1.05,
    }
