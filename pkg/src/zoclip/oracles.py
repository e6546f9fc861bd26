"""Objective oracles: synthetic heavy-tailed quadratics and an external-process oracle.

The synthetic problem is f(x) = 0.5*||x||^2 observed through
F(x; zeta) = 0.5*||x||^2 + <zeta, x>, where zeta is drawn deterministically
from the query's sample key.  Two evaluations with the same key therefore share
the same noise realization, which is the shared-randomness contract the
two-point estimator relies on.

Noise families:
  none                  zeta = 0
  sparse_pareto         zeta = s * A * e_J  (random sign, Pareto amplitude,
                        uniformly random coordinate); tail exponent p > 1
  weakL2_infinite_variance
                        zeta = Z * e_1 with P(|Z| > t) = t^{-2} for t >= 1;
                        infinite variance despite the p = 2 tail
"""

from __future__ import annotations

import math
import os
import select
import shlex
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import (
    MalformedReplyError,
    NonFiniteValueError,
    OracleError,
    OracleTimeoutError,
)

FAMILIES = ("none", "sparse_pareto", "weakL2_infinite_variance")


@dataclass(frozen=True)
class NoiseModelSpec:
    family: str = "none"
    p: float = 1.5
    sigma_scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == "sparse_pareto" and not self.p > 1:
            raise ValueError("sparse_pareto requires tail exponent p > 1")
        if not self.sigma_scale > 0:
            raise ValueError("sigma_scale must be positive")


@dataclass(frozen=True)
class OracleQuery:
    x: np.ndarray
    sample_key: int


def pareto_amplitude(p: float, rng_key) -> float:
    """A = U^{-1/p}; P(A > t) = t^{-p} for t >= 1."""
    if not p > 1:
        raise ValueError("p must be > 1")
    u = rng.uniforms(int(rng_key), 1)[0]
    return float(u ** (-1.0 / p))


def pareto_amplitudes(p: float, keys: np.ndarray) -> np.ndarray:
    u = rng.uniforms_block(keys, 1)[..., 0]
    return u ** (-1.0 / p)


def sample_sparse_noise(d: int, spec: NoiseModelSpec, rng_key) -> np.ndarray:
    """One draw of zeta = sigma_scale * s * A * e_J as a full d-vector."""
    if spec.family != "sparse_pareto":
        raise ValueError("sample_sparse_noise requires a sparse_pareto spec")
    a, s, j = _sparse_params(spec, d, np.asarray([int(rng_key)], dtype=np.uint64))
    zeta = np.zeros(d)
    zeta[int(j[0])] = s[0] * a[0]
    return zeta


def sample_weakL2_noise(rng_key) -> float:
    """Z with P(|Z| > t) = t^{-2} for t >= 1, symmetric sign; E[Z^2] = inf."""
    z, = _weakl2_params(np.asarray([int(rng_key)], dtype=np.uint64))
    return float(z)


def _sparse_params(spec: NoiseModelSpec, d: int, keys: np.ndarray):
    """Per-key (amplitude, sign, coordinate) of the sparse Pareto noise."""
    u = rng.uniforms_block(keys, 3)
    a = spec.sigma_scale * u[..., 0] ** (-1.0 / spec.p)
    s = np.where(u[..., 1] < 0.5, 1.0, -1.0)
    j = np.minimum((u[..., 2] * d).astype(np.int64), d - 1)
    return a, s, j


def _weakl2_params(keys: np.ndarray) -> np.ndarray:
    u = rng.uniforms_block(keys, 2)
    mag = u[..., 0] ** -0.5
    sign = np.where(u[..., 1] < 0.5, 1.0, -1.0)
    return sign * mag


@dataclass(frozen=True)
class QuadraticProblem:
    """f(x) = 0.5*||x||^2 with key-seeded linear noise; L = 1, f_* = 0."""

    d: int
    noise: NoiseModelSpec = field(default_factory=NoiseModelSpec)
    x0: np.ndarray | None = None
    L: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=np.float64)
            if x0.shape != (self.d,):
                raise ValueError("x0 dimension mismatch")
            object.__setattr__(self, "x0", x0)

    @property
    def delta0(self) -> float:
        if self.x0 is None:
            raise ValueError("problem has no initial point")
        return 0.5 * float(self.x0 @ self.x0)

    def f(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * float(x @ x)

    def f_batch(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return 0.5 * np.einsum("...d,...d->...", pts, pts)

    def true_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).copy()

    def noise_inner(self, pts: np.ndarray, keys: np.ndarray) -> np.ndarray:
        """<zeta(key), point> per row, without materializing zeta vectors."""
        keys = np.asarray(keys, dtype=np.uint64)
        if self.noise.family == "none":
            return np.zeros(keys.shape)
        if self.noise.family == "sparse_pareto":
            a, s, j = _sparse_params(self.noise, self.d, keys)
            picked = np.take_along_axis(pts, j[..., None], axis=-1)[..., 0]
            return s * a * picked
        z = _weakl2_params(keys)
        return z * pts[..., 0]

    def evaluate(self, x: np.ndarray, sample_key: int) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise OracleError("query dimension mismatch", sample_key=sample_key)
        keys = np.asarray([int(sample_key)], dtype=np.uint64)
        return self.f(x) + float(self.noise_inner(x[None, :], keys)[0])

    def evaluate_batch(self, pts: np.ndarray, keys: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        if pts.shape[-1] != self.d:
            raise OracleError("query dimension mismatch")
        return self.f_batch(pts) + self.noise_inner(pts, keys)


class CountingOracle:
    """Wraps an oracle and counts single evaluations; used for query accounting."""

    def __init__(self, inner):
        self.inner = inner
        self.count = 0

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def evaluate(self, x, sample_key):
        self.count += 1
        return self.inner.evaluate(x, sample_key)

    def evaluate_batch(self, pts, keys):
        self.count += int(np.asarray(keys).shape[-1] * np.prod(np.asarray(keys).shape[:-1], dtype=int))
        return self.inner.evaluate_batch(pts, keys)


@dataclass(frozen=True)
class ExternalOracleSpec:
    command: str
    timeout: float = 10.0
    protocol_version: int = 1

    def __post_init__(self):
        if not self.command:
            raise ValueError("command must be non-empty")


class ExternalOracle:
    """Black-box oracle over a line protocol on a child process's stdio.

    Request:  "EVAL <sample_key> <x_1> ... <x_d>\\n"  (decimals, 17 sig digits)
    Reply:    one line containing a single decimal value.

    The same sample key is sent for both points of a two-point pair, so shared
    randomness is delegated to the external program.
    """

    def __init__(self, spec: ExternalOracleSpec):
        self.spec = spec
        self._proc = subprocess.Popen(
            shlex.split(spec.command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            bufsize=0,
        )
        self._buf = b""

    def close(self):
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:  # pragma: no cover
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _read_line(self, deadline: float, sample_key: int) -> str:
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleTimeoutError(
                    f"external oracle timed out after {self.spec.timeout}s",
                    sample_key=sample_key,
                )
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 4096)
            if chunk == b"":
                raise OracleError("external oracle closed its output", sample_key=sample_key)
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode()

    def evaluate(self, x: np.ndarray, sample_key: int) -> float:
        x = np.asarray(x, dtype=np.float64)
        if self._proc.poll() is not None:
            raise OracleError("external oracle process has exited", sample_key=sample_key)
        coords = " ".join(format(v, ".17g") for v in x)
        try:
            self._proc.stdin.write(f"EVAL {int(sample_key)} {coords}\n".encode())
            self._proc.stdin.flush()
        except BrokenPipeError as exc:
            raise OracleError("external oracle pipe closed", sample_key=sample_key) from exc
        line = self._read_line(time.monotonic() + self.spec.timeout, sample_key)
        parts = line.split()
        if len(parts) != 1:
            raise MalformedReplyError(
                f"expected one decimal, got {line!r}", sample_key=sample_key
            )
        try:
            value = float(parts[0])
        except ValueError as exc:
            raise MalformedReplyError(
                f"unparsable reply {line!r}", sample_key=sample_key
            ) from exc
        if not math.isfinite(value):
            raise NonFiniteValueError(
                f"external oracle returned {value}", sample_key=sample_key
            )
        return value


def eval_external(spec: ExternalOracleSpec, query: OracleQuery) -> float:
    """One-shot evaluation against a freshly spawned external oracle."""
    with ExternalOracle(spec) as oracle:
        return oracle.evaluate(query.x, query.sample_key)
