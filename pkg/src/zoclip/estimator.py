"""Scalar clipping, sphere sampling, and two-point directional gradient estimates.

The estimator takes a batch of M random unit directions, measures a two-point
finite difference along each (both evaluations sharing one noise sample), and
aggregates the scalars into a d-vector.  Three aggregation modes:

  raw          g = (d/M) sum_l Y_l u_l
  scalar_clip  g = (d/M) sum_l psi_tau(Y_l) u_l   (clip each scalar first)
  vector_clip  the raw aggregate rescaled to norm <= r

All randomness flows through counter-based keys (see rng.py); identical inputs
give bit-identical estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import NonFiniteValueError

MODES = ("raw", "vector_clip", "scalar_clip")


@dataclass(frozen=True)
class Direction:
    """Unit vector in R^d."""

    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        if abs(np.linalg.norm(u) - 1.0) > 1e-12:
            raise ValueError("direction is not unit length")
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class DirectionalSample:
    """One two-point directional estimate and the key of its noise sample."""

    direction: Direction
    sample_key: int
    y: float


@dataclass(frozen=True)
class SmoothingConfig:
    mu: float

    def __post_init__(self):
        if not (self.mu > 0):
            raise ValueError("smoothing radius mu must be positive")


@dataclass
class GradientEstimate:
    g: np.ndarray
    mode: str
    batch_size: int
    clipped_count: int
    raw_scalars: np.ndarray = field(repr=False)


def psi_tau(z: float, tau: float) -> float:
    """Scalar clip z -> z * min(1, tau/|z|); odd, 1-Lipschitz, |result| <= tau."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    z = float(z)
    if not np.isfinite(z):
        raise NonFiniteValueError("non-finite scalar reached psi_tau")
    if abs(z) <= tau:
        return z
    return tau if z > 0 else -tau


def psi_tau_vec(z: np.ndarray, tau: float) -> np.ndarray:
    return np.clip(z, -tau, tau)


def vector_clip(v: np.ndarray, r: float) -> np.ndarray:
    """Rescale v onto the radius-r ball; direction preserved exactly."""
    if not r > 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFiniteValueError("non-finite vector reached vector_clip")
    norm = np.linalg.norm(v)
    if norm <= r:
        return v
    return (r / norm) * v


def sample_sphere(d: int, rng_key) -> Direction:
    """Uniform direction on S^{d-1}: normalized standard normal vector."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    key = int(rng_key)
    for _ in range(8):
        z = rng.normals(key, d)
        norm = np.linalg.norm(z)
        if norm > 0:
            return Direction(z / norm)
        key = rng.derive_key(key, "resample")  # pragma: no cover
    raise RuntimeError("sphere sampling failed")  # pragma: no cover


def sphere_block(keys: np.ndarray, d: int) -> np.ndarray:
    """(len(keys), d) matrix of unit directions, row k from stream keys[k]."""
    z = rng.normals_block(keys, d)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    # an exactly-zero normal draw has probability zero; perturb rather than divide by 0
    bad = norms[..., 0] == 0.0
    if np.any(bad):  # pragma: no cover
        z[bad] = 1.0 / np.sqrt(d)
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / norms


def _eval_oracle(oracle, points: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Evaluate F(point; key) per row, using the oracle's batch path if it has one."""
    batch = getattr(oracle, "evaluate_batch", None)
    if batch is not None:
        vals = np.asarray(batch(points, keys), dtype=np.float64)
    else:
        vals = np.array(
            [oracle.evaluate(points[i], int(keys[i])) for i in range(len(keys))],
            dtype=np.float64,
        )
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NonFiniteValueError(
            "oracle returned a non-finite value", sample_key=int(keys[bad])
        )
    return vals


def two_point_directional(
    oracle, x: np.ndarray, direction: Direction, mu: float, sample_key
) -> DirectionalSample:
    """Y = (F(x+mu*u; xi) - F(x-mu*u; xi)) / (2*mu), same xi at both points."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    x = np.asarray(x, dtype=np.float64)
    u = direction.u
    key = int(sample_key)
    pts = np.stack([x + mu * u, x - mu * u])
    fp, fm = _eval_oracle(oracle, pts, np.array([key, key], dtype=np.uint64))
    y = (fp - fm) / (2.0 * mu)
    if not np.isfinite(y):
        raise NonFiniteValueError("non-finite directional estimate", sample_key=key)
    return DirectionalSample(direction=direction, sample_key=key, y=float(y))


def batch_keys(rng_key, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample (direction, noise) key streams for a batch of size m."""
    idx = np.arange(m)
    dir_keys = rng.derive_keys(int(rng_key), "dir", index=idx)
    noise_keys = rng.derive_keys(int(rng_key), "noise", index=idx)
    return dir_keys, noise_keys


def directional_batch(
    oracle, x: np.ndarray, mu: float, m: int, rng_key, directions: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """All M two-point scalars of one batch: returns (Y values, directions U)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    dir_keys, noise_keys = batch_keys(rng_key, m)
    if directions is None:
        U = sphere_block(dir_keys, d)
    else:
        U = np.asarray(directions, dtype=np.float64)
        if U.shape != (m, d):
            raise ValueError("directions must have shape (M, d)")
    pts = np.concatenate([x + mu * U, x - mu * U])
    keys2 = np.concatenate([noise_keys, noise_keys])
    vals = _eval_oracle(oracle, pts, keys2)
    y = (vals[:m] - vals[m:]) / (2.0 * mu)
    return y, U


def aggregate(
    y: np.ndarray, U: np.ndarray, mode: str, threshold: float | None
) -> GradientEstimate:
    """Fold a batch of directional scalars into a gradient estimate."""
    m, d = U.shape
    if mode == "raw":
        g = (d / m) * (y @ U)
        clipped = 0
    elif mode == "scalar_clip":
        if threshold is None or not threshold > 0:
            raise ValueError("scalar_clip requires a positive threshold")
        w = psi_tau_vec(y, threshold)
        g = (d / m) * (w @ U)
        clipped = int(np.count_nonzero(np.abs(y) > threshold))
    elif mode == "vector_clip":
        if threshold is None or not threshold > 0:
            raise ValueError("vector_clip requires a positive radius")
        g_raw = (d / m) * (y @ U)
        g = vector_clip(g_raw, threshold)
        clipped = int(np.linalg.norm(g_raw) > threshold)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return GradientEstimate(
        g=g, mode=mode, batch_size=m, clipped_count=clipped, raw_scalars=y
    )


def estimate_gradient(
    oracle,
    x: np.ndarray,
    mu: float,
    m: int,
    mode: str,
    threshold: float | None,
    rng_key,
    directions: np.ndarray | None = None,
) -> GradientEstimate:
    """One batched gradient estimate; uses exactly 2*M oracle evaluations.

    `directions` overrides sphere sampling (tests only); noise keys are
    unaffected by the override.
    """
    if m < 1:
        raise ValueError("batch size M must be >= 1")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    y, U = directional_batch(oracle, x, mu, m, rng_key, directions=directions)
    return aggregate(y, U, mode, threshold)


def smoothed_value_mc(f, x: np.ndarray, mu: float, n_mc: int, rng_key) -> float:
    """Monte Carlo estimate of the ball-average of f at radius mu around x.

    f is the noiseless objective; it may accept either a single point or an
    (n, d) batch of points.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    key = int(rng_key)
    dir_keys = rng.derive_keys(key, "ball-dir", index=np.arange(n_mc))
    U = sphere_block(dir_keys, d)
    radii = rng.uniforms(rng.derive_key(key, "ball-radius"), n_mc) ** (1.0 / d)
    pts = x + mu * radii[:, None] * U
    try:
        vals = np.asarray(f(pts), dtype=np.float64)
        if vals.shape != (n_mc,):
            raise TypeError
    except TypeError:
        vals = np.array([float(f(p)) for p in pts])
    return float(np.mean(vals))
