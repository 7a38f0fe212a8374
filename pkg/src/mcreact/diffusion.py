"""Free-space diffusion over one step as two dense kernel products.

The 3D Gaussian propagator in (rho, z) separates into a z factor and a
radial factor containing I0(rho * rho' / (2 D dt)).  Writing

    exp(-(rho^2 + rho'^2) / 4Ddt) I0(x) = exp(-(rho - rho')^2 / 4Ddt) * i0e(x)

keeps every factor in range.  Both kernels are Nystrom discretisations with
quadrature weights folded in.  Two refinements keep the radial kernel
accurate when the kernel width is only a few grid cells:

* near the axis the entries coupling to the first few nodes are re-fitted
  so that the discrete kernel reproduces the exact radial moments
  int K(rho, r) r^(2p) r dr for p = 0..2 (bounded least squares keeps them
  non-negative);
* both kernels are scaled symmetrically so every row carries its exact
  truncated mass.  A uniform field then stays uniform in the interior, and
  because the scaling keeps the kernels symmetric the same holds for the
  weighted column sums, so mass is conserved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import lsq_linear
from scipy.special import erf

from .core import SPECIES, ConcentrationField, CylGrid, Species
from .numerics import bessel_i0_scaled

AXIS_COLUMNS = 4
AXIS_MOMENTS = 3
AXIS_REACH = 12.0  # rows within this many kernel widths of the corrected columns
_GAUSS_POINTS = 16
_MOMENT_WEIGHT = 1e8
# Entries this far below their row maximum are zeroed: they are below the
# rounding level of any row sum, and as subnormals they slow BLAS down badly.
KERNEL_FLUSH = 1e-30


class KernelResolutionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionKernels:
    """Kernel pair for one species: out = krho @ C @ kz.T."""

    grid: CylGrid
    D: float
    dt: float
    kz: np.ndarray
    krho: np.ndarray

    def __post_init__(self):
        for name in ("kz", "krho"):
            getattr(self, name).setflags(write=False)


def _radial_kernel(rho, rho_t, D, dt):
    """2 pi / (4 pi D dt) * exp(-(rho - rho')^2 / 4Ddt) * i0e(rho rho' / 2Ddt)."""
    a = 4.0 * D * dt
    x = np.multiply.outer(rho, rho_t) / (2.0 * D * dt)
    g = np.exp(-np.subtract.outer(rho, rho_t) ** 2 / a)
    return (2.0 * math.pi / (math.pi * a)) * g * bessel_i0_scaled(x)


def _gauss_nodes(edges):
    x, w = leggauss(_GAUSS_POINTS)
    lo, hi = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
    wts = 0.5 * (hi - lo) * w
    return pts.ravel(), wts.ravel()


def _radial_moments(rho, rows, D, dt, n_moments):
    """int_0^rho_max K(rho_k, r) r^(2p) r dr, p < n_moments, for each row k."""
    pts, wts = _gauss_nodes(rho)
    K = _radial_kernel(rho[rows], pts, D, dt) * (pts * wts)
    return np.stack([K @ pts ** (2 * p) for p in range(n_moments)], axis=1)


def _check_resolution(grid, D, dt):
    width = math.sqrt(4.0 * D * dt)
    h = max(grid.rho[1] - grid.rho[0], float(np.min(np.diff(grid.z))))
    if h > width * (1 + 1e-12):
        raise KernelResolutionError(
            f"diffusion kernel under-resolved for D = {D:g} m^2/s: grid spacing {h:.4g} m "
            f"exceeds sqrt(4 D dt) = {width:.4g} m; use dt >= {h * h / (4.0 * D):.4g} s "
            "or a finer grid"
        )


def _balance(G, w, target, max_iter=500, tol=1e-15):
    """Symmetric scaling diag(d) G diag(d) whose w-weighted row sums equal ``target``.

    Keeping the kernel symmetric in its quadrature-free part means the
    w-weighted column sums equal the row sums, so exact row masses give
    exact mass conservation as well.
    """
    d = np.ones(len(w))
    for _ in range(max_iter):
        f = d * (G @ (w * d))
        r = np.where(f > 0, target / np.where(f > 0, f, 1.0), 1.0)
        d *= np.sqrt(r)
        if np.max(np.abs(r - 1.0)) < tol:
            break
    return d[:, None] * G * d[None, :]


def z_kernel(z, w_z, D, dt):
    a = 4.0 * D * dt
    G = np.exp(-np.subtract.outer(z, z) ** 2 / a) / math.sqrt(math.pi * a)
    sq = math.sqrt(a)
    exact = 0.5 * (erf((z[-1] - z) / sq) - erf((z[0] - z) / sq))
    return _balance(G, w_z, exact) * w_z


def _axis_refit(G, rho, measure, D, dt):
    """Re-fit the symmetric entries G[k, j] = G[j, k] with j < AXIS_COLUMNS so
    that every nearby row reproduces the exact radial moments p < AXIS_MOMENTS."""
    M, P = AXIS_COLUMNS, AXIS_MOMENTS
    sigma = math.sqrt(2.0 * D * dt)
    n_rows = max(int(np.count_nonzero(rho < rho[M] + AXIS_REACH * sigma)), M + 1)
    moments = _radial_moments(rho, np.arange(n_rows), D, dt, P)
    powers = (rho / rho[M])[None, :] ** (2 * np.arange(P))[:, None]
    moments = moments / (rho[M] ** (2 * np.arange(P)))[None, :]

    var = -np.ones((n_rows, rho.size), dtype=int)
    pairs = [(k, j) for j in range(M) for k in range(j, n_rows)]
    for i, (k, j) in enumerate(pairs):
        var[k, j] = i
        var[j, k] = i
    rows, rhs = [], []
    for r in range(n_rows):
        coef = G[r][None, :] * measure[None, :] * powers
        free = var[r] >= 0
        lever = coef[0, free].sum()
        if lever <= 1e-12 * moments[r, 0]:
            continue  # the re-fitted entries carry no weight in this row
        n0 = max(moments[r, 0], lever)
        for p in range(P):
            a = np.zeros(len(pairs))
            np.add.at(a, var[r, free], coef[p, free])
            rows.append(a / n0)
            rhs.append((moments[r, p] - coef[p, ~free].sum()) / n0)
    if not rows:
        return G
    sol = lsq_linear(
        np.vstack([_MOMENT_WEIGHT * np.array(rows), np.eye(len(pairs))]),
        np.concatenate([_MOMENT_WEIGHT * np.array(rhs), np.ones(len(pairs))]),
        bounds=(0.0, np.inf),
        method="bvls",
        tol=1e-14,
    )
    G = G.copy()
    for y, (k, j) in zip(sol.x, pairs):
        G[k, j] *= y
        G[j, k] = G[k, j]
    return G


def radial_kernel_matrix(rho, measure, D, dt, axis_correction=True):
    G = _radial_kernel(rho, rho, D, dt)
    exact_mass = _radial_moments(rho, np.arange(rho.size), D, dt, 1)[:, 0]
    if axis_correction:
        G = _axis_refit(G, rho, measure, D, dt)
    return _balance(G, measure, exact_mass) * measure


def precompute_kernels(grid: CylGrid, D: float, dt: float, axis_correction: bool = True) -> DiffusionKernels:
    if not (math.isfinite(D) and D > 0 and math.isfinite(dt) and dt > 0):
        raise ValueError("D and Δt must be positive")
    _check_resolution(grid, D, dt)
    kz = z_kernel(grid.z, grid.w_z, D, dt)
    krho = radial_kernel_matrix(grid.rho, grid.radial_measure, D, dt, axis_correction)
    return DiffusionKernels(grid=grid, D=float(D), dt=float(dt), kz=_flush(kz), krho=_flush(krho))


def _flush(K):
    K = K.copy()
    K[K < KERNEL_FLUSH * K.max(axis=1, keepdims=True)] = 0.0
    return K


def kernels_for(grid: CylGrid, species_params, dt: float) -> tuple:
    """One DiffusionKernels per species A, B, C (shared when coefficients coincide)."""
    cache = {}
    out = []
    for sp in SPECIES:
        D = species_params.diffusion(sp)
        if D not in cache:
            cache[D] = precompute_kernels(grid, D, dt)
        out.append(cache[D])
    return tuple(out)


def diffuse_array(c: np.ndarray, kernels: DiffusionKernels) -> np.ndarray:
    return kernels.krho @ (c @ kernels.kz.T)


def diffusion_step(field: ConcentrationField, kernels) -> ConcentrationField:
    """Propagate every species by one step.

    ``kernels`` is either a single DiffusionKernels used for all species or
    a sequence of three, one per species.
    """
    ks = (kernels,) * 3 if isinstance(kernels, DiffusionKernels) else tuple(kernels)
    for k in ks:
        if not k.grid.same_as(field.grid):
            raise ValueError("kernels were built on a different grid")
    out = np.stack([diffuse_array(field.values[i], ks[i]) for i in range(3)])
    return field.with_values(out)


def cylindrical_mass(field: ConcentrationField, species) -> float:
    """2 pi * sum_k sum_j C[k, j] m_k w_z[j] (molecules)."""
    g = field.grid
    c = field[Species(species)]
    return float(2.0 * math.pi * (g.radial_measure @ c @ g.w_z))


def point_source(grid: CylGrid, count: float, z0: float, D: float, t: float) -> np.ndarray:
    """Free-space Green's function N (4 pi D t)^-3/2 exp(-r^2 / 4Dt) at the nodes."""
    a = 4.0 * D * t
    r2 = grid.rho[:, None] ** 2 + (grid.z[None, :] - z0) ** 2
    return count / (math.pi * a) ** 1.5 * np.exp(-r2 / a)
