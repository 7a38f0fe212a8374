"""Scalar numerical primitives: scaled Bessel I0, Poisson utilities, RNG streams."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

# Below this the power series is summed; above it the asymptotic series.
# At x = 30 the asymptotic remainder is ~e^-60, and the power series still
# needs under 120 positive terms.
BESSEL_CROSSOVER = 30.0
_SERIES_TERMS = 120
_ASYMPTOTIC_TERMS = 30


def bessel_i0_scaled(x):
    """Return exp(-x) * I0(x) for x >= 0 (scalar or array).

    Power series sum_k (x/2)^(2k) / (k!)^2 below ``BESSEL_CROSSOVER``,
    Hankel's asymptotic expansion above it.
    """
    xa = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xa)) or np.any(xa < 0):
        raise ValueError("bessel_i0_scaled requires finite x >= 0")
    out = np.empty_like(xa)
    small = xa < BESSEL_CROSSOVER

    xs = xa[small]
    if xs.size:
        q = 0.25 * xs * xs
        term = np.ones_like(xs)
        total = np.ones_like(xs)
        for k in range(1, _SERIES_TERMS):
            term = term * q / (k * k)
            total += term
        out[small] = total * np.exp(-xs)

    xl = xa[~small]
    if xl.size:
        term = np.ones_like(xl)
        total = np.ones_like(xl)
        for k in range(1, _ASYMPTOTIC_TERMS):
            term = term * (2 * k - 1) ** 2 / (8.0 * k * xl)
            total += term
        out[~small] = total / np.sqrt(2.0 * np.pi * xl)

    return float(out) if np.ndim(x) == 0 else out


def poisson_cdf(gamma: int, mean):
    """P(q <= gamma) for q ~ Poisson(mean); ``mean`` may be an array.

    Terms are accumulated by the recursion t_w = t_{w-1} * mean / w in log
    space, so neither w! nor exp(-mean) overflows or underflows.
    """
    m = np.asarray(mean, dtype=float)
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValueError("Poisson mean must be finite and non-negative")
    if gamma < 0:
        return 0.0 if m.ndim == 0 else np.zeros_like(m)
    total = np.zeros_like(m)
    zero = m == 0
    with np.errstate(divide="ignore"):
        log_m = np.where(zero, 0.0, np.log(np.where(zero, 1.0, m)))
    log_t = -m
    total += np.exp(log_t)
    for w in range(1, int(gamma) + 1):
        log_t = log_t + log_m - math.log(w)
        total += np.where(zero, 0.0, np.exp(log_t))
    total = np.minimum(total, 1.0)
    return float(total) if m.ndim == 0 else total


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream addressed by (seed, stream_id, path).

    Backed by the counter-based Philox generator through ``SeedSequence``, so
    a stream depends only on its address, never on how work is scheduled.
    """

    seed: int = 0
    stream_id: int = 0
    path: tuple = ()

    def substream(self, i: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + (int(i),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id) & (2**64 - 1), *self.path),
        )
        return np.random.Generator(np.random.Philox(ss))


INVERSION_LIMIT = 30.0


def poisson_sample(mean, size=None, rng=None):
    """Exact Poisson variates.

    Sequential-search inversion for mean < 30; Hormann's transformed
    rejection (PTRS) above.  ``rng`` is an ``RngStream`` or a numpy
    ``Generator``.
    """
    if not math.isfinite(mean) or mean < 0:
        raise ValueError("Poisson mean must be finite and non-negative")
    gen = rng.generator() if isinstance(rng, RngStream) else (rng or np.random.default_rng())
    n = 1 if size is None else int(np.prod(size))
    if mean == 0:
        out = np.zeros(n, dtype=np.int64)
    elif mean < INVERSION_LIMIT:
        out = _poisson_inversion(mean, n, gen)
    else:
        out = _poisson_ptrs(mean, n, gen)
    if size is None:
        return int(out[0])
    return out.reshape(size)


def _poisson_inversion(lam: float, n: int, gen: np.random.Generator) -> np.ndarray:
    u = gen.random(n)
    k = np.zeros(n, dtype=np.int64)
    p = math.exp(-lam)
    cdf = p
    active = u > cdf
    w = 0
    while active.any():
        w += 1
        p *= lam / w
        cdf += p
        k[active] = w
        active &= u > cdf
        if p < 1e-300 and w > lam:
            # cdf has saturated below u by rounding; stop at the current tail
            break
    return k


def _poisson_ptrs(lam: float, n: int, gen: np.random.Generator) -> np.ndarray:
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2)

    out = np.empty(n, dtype=np.int64)
    todo = np.arange(n)
    while todo.size:
        m = todo.size
        u = gen.random(m) - 0.5
        v = gen.random(m)
        us = 0.5 - np.abs(u)
        k = np.floor((2 * a / us + b) * u + lam + 0.43)
        quick = (us >= 0.07) & (v <= vr)
        bad = (k < 0) | ((us < 0.013) & (v > us))
        kk = np.maximum(k, 0)
        lgam = gammaln(kk + 1)
        slow = (~quick) & (~bad) & (
            np.log(v) + math.log(inv_alpha) - np.log(a / (us * us) + b) <= -lam + kk * loglam - lgam
        )
        accept = quick | slow
        out[todo[accept]] = k[accept].astype(np.int64)
        todo = todo[~accept]
    return out
