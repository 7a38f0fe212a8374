"""Domain types, scenario configuration and validation.

All quantities are SI: metres, seconds, molecules and molecules/m^3.  The
geometry is axisymmetric about the z-axis, so every source and the receiver
centre is given by its z coordinate alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class Species(str, Enum):
    A = "A"  # signalling molecule (analyte)
    B = "B"  # molecular probe
    C = "C"  # product

    @property
    def index(self) -> int:
        return "ABC".index(self.value)


SPECIES = (Species.A, Species.B, Species.C)


class ConfigError(ValueError):
    """Raised when a scenario violates one or more invariants.

    ``errors`` holds one human-readable message per failed constraint.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class SpeciesParams:
    d_a: float = 1e-9
    d_b: float = 5e-10
    d_c: float = 1e-10

    def diffusion(self, species: Species) -> float:
        return (self.d_a, self.d_b, self.d_c)[Species(species).index]


@dataclass(frozen=True)
class ReactionParams:
    kappa_f: float = 1e-22  # m^3 molecule^-1 s^-1
    kappa_b: float = 1e-26  # s^-1


@dataclass(frozen=True)
class GridSpec:
    z_max: float = 3e-4
    n_rho: int = 163
    n_z: int = 325
    stretch: float = 1.0


@dataclass(frozen=True, eq=False)
class CylGrid:
    """Axisymmetric (rho, z) lattice with trapezoidal quadrature weights."""

    rho: np.ndarray
    z: np.ndarray
    w_rho: np.ndarray
    w_z: np.ndarray

    def __post_init__(self):
        for name in ("rho", "z", "w_rho", "w_z"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "radial_measure", _radial_measure(self.rho))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rho.size, self.z.size)

    @property
    def z_max(self) -> float:
        return float(self.z[-1])

    def z_index(self, z: float) -> int:
        """Index of the z-node nearest ``z``; raises if farther than half a cell."""
        j = int(np.argmin(np.abs(self.z - z)))
        if abs(self.z[j] - z) > 0.5 * self.w_z[j] * (2.0 if 0 < j < self.z.size - 1 else 1.0) + 1e-15:
            raise ValueError(f"z = {z:g} m does not lie on the grid (nearest node {self.z[j]:g} m)")
        return j

    def same_as(self, other: "CylGrid") -> bool:
        return self is other or (
            self.shape == other.shape
            and np.array_equal(self.rho, other.rho)
            and np.array_equal(self.z, other.z)
        )


def _radial_measure(rho: np.ndarray) -> np.ndarray:
    """Integral of rho d(rho) over each node's dual cell.

    Equals rho_k * w_rho[k] away from the ends; the axis cell gets h^2/8
    instead of 0 so a deposit on the axis has a finite volume.
    """
    h = np.diff(rho)
    lo = np.concatenate([[rho[0]], rho[1:] - h / 2])
    hi = np.concatenate([rho[:-1] + h / 2, [rho[-1]]])
    return 0.5 * (hi**2 - lo**2)


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def _stretched_spacing(n_intervals: int, extent: float, stretch: float) -> np.ndarray:
    if stretch == 1.0:
        return np.full(n_intervals, extent / n_intervals)
    h = stretch ** np.arange(n_intervals)
    return h * (extent / h.sum())


def build_grid(z_max: float, n_rho: int, n_z: int, stretch: float = 1.0) -> CylGrid:
    """Build the (rho, z) grid.

    Radial nodes run from the axis to ``z_max`` with spacing growing
    geometrically by ``stretch``; z-nodes are symmetric about 0 with the
    finest spacing at z = 0.  ``n_z`` must be odd so z = 0 is a node.
    """
    errors = []
    if not (np.isfinite(z_max) and z_max > 0):
        errors.append("z_max must be positive")
    if n_rho < 5 or n_z < 5:
        errors.append("grid needs at least 5 nodes per axis")
    if n_z % 2 == 0:
        errors.append("n_z must be odd so that z = 0 is a node")
    if not stretch >= 1.0:
        errors.append("stretch must be >= 1")
    if errors:
        raise ConfigError(errors)

    hr = _stretched_spacing(n_rho - 1, z_max, stretch)
    rho = np.concatenate([[0.0], np.cumsum(hr)])
    rho[-1] = z_max
    hz = _stretched_spacing((n_z - 1) // 2, z_max, stretch)
    half = np.concatenate([[0.0], np.cumsum(hz)])
    half[-1] = z_max
    z = np.concatenate([-half[:0:-1], half])
    return CylGrid(rho=rho, z=z, w_rho=_trapezoid_weights(rho), w_z=_trapezoid_weights(z))


def grid_from_spec(spec: GridSpec) -> CylGrid:
    return build_grid(spec.z_max, spec.n_rho, spec.n_z, spec.stretch)


@dataclass(frozen=True, eq=False)
class ConcentrationField:
    """Concentrations of A, B, C on a shared grid, shape (3, n_rho, n_z)."""

    grid: CylGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        v = self.values
        if not (isinstance(v, np.ndarray) and v.dtype == float and not v.flags.writeable):
            v = np.array(v, dtype=float)
        if v.shape != (3, *self.grid.shape):
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: CylGrid, t: float = 0.0) -> "ConcentrationField":
        return cls(grid, np.zeros((3, *grid.shape)), t)

    def __getitem__(self, species) -> np.ndarray:
        return self.values[Species(species).index]

    def with_values(self, values, t: float | None = None, copy: bool = True) -> "ConcentrationField":
        """New field on the same grid.  With ``copy=False`` the caller hands
        over ``values`` and must not modify it afterwards."""
        if not copy and isinstance(values, np.ndarray) and values.dtype == float:
            values.setflags(write=False)
        return ConcentrationField(self.grid, values, self.t if t is None else t)


@dataclass(frozen=True)
class ReleaseEvent:
    species: Species
    time: float
    z: float
    count: float
    rho: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "species", Species(self.species))


class ProbeMode(str, Enum):
    NONE = "none"
    POINT = "point"
    UNIFORM = "uniform"
    STEADY_STATE = "steady_state"


@dataclass(frozen=True)
class ProbeDeployment:
    """How the B molecules enter the system.

    point: ``n_b`` molecules released at ``z`` at ``release_time`` (and at the
    same offset in every symbol interval when ``repeat`` is set).
    uniform: C_B(u, 0) = ``c_b0`` everywhere.
    steady_state: continuous emission of ``n_b`` molecules/s at ``z``, started
    from its 1/r steady-state profile.
    """

    mode: ProbeMode = ProbeMode.NONE
    z: float = 0.0
    n_b: float = 0.0
    release_time: float = 0.0
    c_b0: float = 0.0
    repeat: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", ProbeMode(self.mode))


@dataclass(frozen=True)
class ScenarioConfig:
    species: SpeciesParams = field(default_factory=SpeciesParams)
    reaction: ReactionParams = field(default_factory=ReactionParams)
    grid: GridSpec = field(default_factory=GridSpec)
    delta_t: float = 1e-2
    t_max: float = 10.0
    symbol_interval: float = 10.0
    n_a: float = 5e8
    tx_z: float = 5e-5
    rx_z: float = 0.0
    rx_radius: float = 2.5e-7
    probe: ProbeDeployment = field(default_factory=ProbeDeployment)
    extra_releases: tuple = ()

    def evolve(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    @property
    def steps_per_symbol(self) -> int:
        return int(round(self.symbol_interval / self.delta_t))


def _finite_positive(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and math.isfinite(x) and x > 0


def validate(config: ScenarioConfig) -> ScenarioConfig:
    """Return ``config`` unchanged if every invariant holds, else raise ConfigError."""
    errors = []
    sp = config.species
    for name in ("d_a", "d_b", "d_c"):
        if not _finite_positive(getattr(sp, name)):
            errors.append(f"{name} must be positive and finite")
    rx = config.reaction
    for name in ("kappa_f", "kappa_b"):
        v = getattr(rx, name)
        if not (math.isfinite(v) and v >= 0):
            errors.append(f"{name} must be non-negative")

    g = config.grid
    if not _finite_positive(g.z_max):
        errors.append("z_max must be positive")
    if g.n_rho < 5 or g.n_z < 5:
        errors.append("grid needs at least 5 nodes per axis")
    if g.n_z % 2 == 0:
        errors.append("n_z must be odd so that z = 0 is a node")
    if not g.stretch >= 1.0:
        errors.append("stretch must be >= 1")

    dt, T, tmax = config.delta_t, config.symbol_interval, config.t_max
    if not _finite_positive(dt):
        errors.append("Δt must be positive")
    elif not (_finite_positive(T) and _finite_positive(tmax) and dt <= T <= tmax):
        errors.append("require 0 < Δt <= T <= T_max")
    else:
        ratio = T / dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            errors.append("symbol interval must hold an integer number of steps")

    if not _finite_positive(config.rx_radius):
        errors.append("receiver radius must be positive")
    if not (math.isfinite(config.n_a) and config.n_a >= 0):
        errors.append("N_A must be non-negative")
    if _finite_positive(g.z_max):
        for name in ("tx_z", "rx_z"):
            if abs(getattr(config, name)) > g.z_max:
                errors.append(f"{name} lies outside the domain")
        if abs(config.rx_z) + config.rx_radius > g.z_max:
            errors.append("receiver extends past the domain")

    p = config.probe
    if p.mode in (ProbeMode.POINT, ProbeMode.STEADY_STATE):
        if not (math.isfinite(p.n_b) and p.n_b >= 0):
            errors.append("N_B must be non-negative")
        if _finite_positive(g.z_max) and abs(p.z) > g.z_max:
            errors.append("probe position lies outside the domain")
        if p.mode is ProbeMode.POINT and not (math.isfinite(p.release_time) and p.release_time >= 0):
            errors.append("probe release time must be non-negative")
    if p.mode is ProbeMode.UNIFORM and not (math.isfinite(p.c_b0) and p.c_b0 >= 0):
        errors.append("C_B0 must be non-negative")

    for ev in config.extra_releases:
        errors.extend(release_errors(ev))

    if errors:
        raise ConfigError(errors)
    return config


def release_errors(ev: ReleaseEvent) -> list[str]:
    errors = []
    if ev.species is Species.C and ev.count != 0:
        errors.append("C molecules are not released")
    if not (math.isfinite(ev.count) and ev.count >= 0):
        errors.append("release count must be non-negative")
    if ev.rho != 0:
        errors.append("releases must lie on the symmetry axis (rho = 0)")
    if not (math.isfinite(ev.time) and ev.time >= 0):
        errors.append("release time must be non-negative")
    return errors
