"""Time stepping: release injection, parallel diffusion/reaction splitting.

Each step starts from C(t), deposits the releases that fall in the step, and
combines the two sub-solutions computed from that same state:

    C(t + dt) = C_df + C_rc - C

A point release enters as a deposit in the release node's cell, so both
operators see it as a one-node spike.
"""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import (
    SPECIES,
    ConcentrationField,
    CylGrid,
    ProbeMode,
    ReleaseEvent,
    ScenarioConfig,
    Species,
    grid_from_spec,
    release_errors,
    validate,
)
from .diffusion import (
    DiffusionKernels,
    cylindrical_mass,
    diffuse_array,
    kernels_for,
)
from .reaction import react_arrays

CLAMP_BUDGET = 1e-4
# Concentrations below this (molecules/m^3) are set to zero after each step
# so that far-field tails never become subnormal floats.
FLUSH_LEVEL = 1e-200
_STEP_EPS = 1e-9


class SplittingError(ArithmeticError):
    """Raised when the recombination needs more clamping than the budget allows."""


def step_index(t: float, dt: float) -> int:
    """Index k of the step [k dt, (k+1) dt) that receives a release at time t."""
    return int(math.floor(t / dt + _STEP_EPS))


@dataclass(frozen=True)
class ReleaseSchedule:
    events: tuple = ()
    bits: tuple = ()
    symbol_interval: float = 0.0

    def __post_init__(self):
        evs = tuple(sorted(self.events, key=lambda e: (e.time, e.species.index, e.z)))
        object.__setattr__(self, "events", evs)
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))

    @classmethod
    def from_bits(cls, config: ScenarioConfig, bits) -> "ReleaseSchedule":
        """A releases for every 1 bit, plus probe point releases and extras."""
        bits = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("bits must be 0 or 1")
        T = config.symbol_interval
        events = [
            ReleaseEvent(Species.A, n * T, config.tx_z, config.n_a)
            for n, b in enumerate(bits)
            if b and config.n_a > 0
        ]
        p = config.probe
        if p.mode is ProbeMode.POINT and p.n_b > 0:
            offsets = range(max(len(bits), 1)) if p.repeat else (0,)
            events += [ReleaseEvent(Species.B, p.release_time + n * T, p.z, p.n_b) for n in offsets]
        events += list(config.extra_releases)
        return cls(tuple(events), bits, T)

    def in_step(self, k: int, dt: float) -> list:
        return [e for e in self.events if step_index(e.time, dt) == k]


@dataclass
class Trace:
    times: np.ndarray
    c_rx: np.ndarray  # shape (n, 3): A, B, C at the receiver centre
    q_bar: np.ndarray
    snapshots: dict = dc_field(default_factory=dict)

    def species(self, sp) -> np.ndarray:
        return self.c_rx[:, Species(sp).index]

    def to_csv(self, path_or_file) -> None:
        rows = np.column_stack([self.times, self.c_rx, self.q_bar])
        write_csv(path_or_file, ["t", "C_A_rx", "C_B_rx", "C_C_rx", "q_bar"], rows)


def write_csv(path_or_file, header, rows, footer=()):
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
        for line in footer:
            fh.write(f"# {line}\n")

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.9g" % float(x)


def _deposit_volume(grid: CylGrid, j: int) -> float:
    return 2.0 * math.pi * grid.radial_measure[0] * grid.w_z[j]


def _release_node(grid: CylGrid, event: ReleaseEvent) -> int:
    errs = release_errors(event)
    if errs:
        raise ValueError("; ".join(errs))
    return grid.z_index(event.z)


def inject_release(field: ConcentrationField, event: ReleaseEvent) -> ConcentrationField:
    """Deposit N_i molecules into the axis cell nearest the release point."""
    j = _release_node(field.grid, event)
    if event.count == 0:
        return field
    v = field.values.copy()
    v[event.species.index, 0, j] += event.count / _deposit_volume(field.grid, j)
    return field.with_values(v)


@dataclass
class ClampReport:
    """Running totals of mass removed by clamping negatives after recombination."""

    steps: int = 0
    clamped: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    worst_fraction: float = 0.0

    def record(self, clamped, mass):
        self.steps += 1
        self.clamped += clamped
        frac = float(np.max(clamped / np.maximum(mass, 1e-300)))
        self.worst_fraction = max(self.worst_fraction, frac)


def _reaction_active(v, params) -> bool:
    """False when the reaction flow is the identity on every node."""
    if params.kappa_b > 0 and v[2].any():
        return True
    return params.kappa_f > 0 and bool(np.any(v[0] * v[1]))


def split_step(field, kernels, params, releases=(), report: ClampReport | None = None,
               budget: float = CLAMP_BUDGET) -> ConcentrationField:
    """One step of the splitting rule; returns the field at t + dt."""
    if isinstance(kernels, DiffusionKernels):
        kernels = (kernels,) * 3
    grid = field.grid
    dt = kernels[0].dt
    for k in kernels:
        if not k.grid.same_as(grid) or k.dt != dt:
            raise ValueError("kernels do not match the field grid or each other's Δt")

    post = field.values.copy()
    for ev in releases:
        if ev.count == 0:
            continue
        j = _release_node(grid, ev)
        post[ev.species.index, 0, j] += ev.count / _deposit_volume(grid, j)

    df = np.zeros_like(post)
    for i in range(3):
        if post[i].any():
            df[i] = diffuse_array(post[i], kernels[i])
    if _reaction_active(post, params):
        a, b, cc = react_arrays(post[0], post[1], post[2], dt, params.kappa_f, params.kappa_b)
        new = df + np.stack([a, b, cc]) - post
    else:
        new = df

    neg = np.minimum(new, 0.0)
    if neg.any():
        w = 2.0 * math.pi * grid.radial_measure[:, None] * grid.w_z[None, :]
        clamped = -np.einsum("skj,kj->s", neg, w)
        np.maximum(new, 0.0, out=new)
        mass = np.einsum("skj,kj->s", new, w)
        total = mass.sum()
        if report is not None:
            report.record(clamped, mass)
        if budget is not None and clamped.sum() > budget * total:
            raise SplittingError(
                f"clamped {clamped.sum():.3g} molecules of {total:.3g} at t = {field.t + dt:.6g} s; "
                "Δt too coarse for the reaction rate"
            )
    elif report is not None:
        report.steps += 1
    new[new < FLUSH_LEVEL] = 0.0
    if not np.all(np.isfinite(new)):
        raise ArithmeticError(f"non-finite concentration at t = {field.t + dt:.6g} s")
    return field.with_values(new, t=field.t + dt, copy=False)


def steady_state_CB(u, u_b, n_b: float, d_b: float):
    """N_B / (4 pi D_B |u - u_B|) for 3D points (broadcasting over leading axes)."""
    r = np.linalg.norm(np.asarray(u, dtype=float) - np.asarray(u_b, dtype=float), axis=-1)
    if np.any(r == 0):
        raise ValueError("steady-state profile is singular at the probe position")
    out = n_b / (4.0 * math.pi * d_b * r)
    return float(out) if np.ndim(out) == 0 else out


def steady_state_field(grid: CylGrid, z_b: float, n_b: float, d_b: float) -> np.ndarray:
    """Steady-state C_B on the grid; the u_B node takes the value one axis cell away."""
    j = grid.z_index(z_b)
    r = np.sqrt(grid.rho[:, None] ** 2 + (grid.z[None, :] - grid.z[j]) ** 2)
    r[0, j] = grid.rho[1]
    return n_b / (4.0 * math.pi * d_b * r)


def initial_field(config: ScenarioConfig, grid: CylGrid) -> ConcentrationField:
    v = np.zeros((3, *grid.shape))
    p = config.probe
    if p.mode is ProbeMode.UNIFORM:
        v[1] = p.c_b0
    elif p.mode is ProbeMode.STEADY_STATE and p.n_b > 0:
        v[1] = steady_state_field(grid, p.z, p.n_b, config.species.d_b)
    return ConcentrationField(grid, v, 0.0)


def receiver_volume(config: ScenarioConfig) -> float:
    return 4.0 / 3.0 * math.pi * config.rx_radius**3


class Simulation:
    """Mutable stepping state for one scenario; ``fork`` gives an independent copy.

    ``observer(field) -> float`` replaces the default point-approximation
    receiver count of C when given; ``initial`` overrides the probe-derived
    starting field.
    """

    def __init__(self, config: ScenarioConfig, schedule: ReleaseSchedule, grid=None, kernels=None,
                 observer=None, budget: float = CLAMP_BUDGET, initial: ConcentrationField | None = None):
        self.config = validate(config)
        self.schedule = schedule
        self.grid = grid if grid is not None else grid_from_spec(config.grid)
        self.kernels = kernels if kernels is not None else kernels_for(self.grid, config.species, config.delta_t)
        self.observer = observer
        self.budget = budget
        self.report = ClampReport()
        if initial is not None and not initial.grid.same_as(self.grid):
            raise ValueError("initial field is on a different grid")
        self.field = initial if initial is not None else initial_field(config, self.grid)
        self.k = 0
        self.rx_index = self.grid.z_index(config.rx_z)
        for ev in schedule.events:
            _release_node(self.grid, ev)
        self._rows = []
        self._record()

    @property
    def dt(self) -> float:
        return self.config.delta_t

    def fork(self, schedule: ReleaseSchedule | None = None) -> "Simulation":
        other = copy.copy(self)
        other.report = copy.deepcopy(self.report)
        other._rows = list(self._rows)
        if schedule is not None:
            other.schedule = schedule
        return other

    def _continuous(self):
        p = self.config.probe
        if p.mode is ProbeMode.STEADY_STATE and p.n_b > 0:
            return [ReleaseEvent(Species.B, self.k * self.dt, p.z, p.n_b * self.dt)]
        return []

    def _record(self):
        f = self.field
        c = f.values[:, 0, self.rx_index]
        q = self.observer(f) if self.observer is not None else c[2] * receiver_volume(self.config)
        self._rows.append((self.k * self.dt, c[0], c[1], c[2], q))

    def step(self):
        releases = self.schedule.in_step(self.k, self.dt) + self._continuous()
        try:
            self.field = split_step(self.field, self.kernels, self.config.reaction, releases,
                                    self.report, self.budget)
        except ArithmeticError as exc:
            raise type(exc)(f"step {self.k}: {exc}") from None
        self.k += 1
        # keep the timestamp on the step lattice rather than an accumulated sum
        self.field = self.field.with_values(self.field.values, t=self.k * self.dt, copy=False)
        self._record()

    def advance_to(self, t_end: float):
        n = int(round(t_end / self.dt))
        while self.k < n:
            self.step()
        return self

    def trace(self) -> Trace:
        rows = np.array(self._rows, dtype=float)
        return Trace(times=rows[:, 0], c_rx=rows[:, 1:4], q_bar=rows[:, 4])


def run(config: ScenarioConfig, schedule: ReleaseSchedule, t_end: float | None = None,
        **kwargs) -> Trace:
    """Iterate the splitting step from t = 0 to ``t_end`` (default T_max)."""
    sim = Simulation(config, schedule, **kwargs)
    sim.advance_to(config.t_max if t_end is None else t_end)
    return sim.trace()


def special_case_concentrations(u, t: float, config: ScenarioConfig):
    """Closed-form (C_A, C_C) at 3D point(s) u for a constant probe field.

    Needs kappa_b = 0 and D_A = D_C; C_B is the uniform value or the
    steady-state profile evaluated at u.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    sp, rx = config.species, config.reaction
    if rx.kappa_b != 0:
        raise ValueError("closed form requires kappa_b = 0")
    if not math.isclose(sp.d_a, sp.d_c, rel_tol=1e-12):
        raise ValueError("closed form requires D_A = D_C")
    u = np.asarray(u, dtype=float)
    p = config.probe
    if p.mode is ProbeMode.UNIFORM:
        c_b = np.full(u.shape[:-1], p.c_b0)
    elif p.mode is ProbeMode.STEADY_STATE:
        c_b = steady_state_CB(u, (0.0, 0.0, p.z), p.n_b, sp.d_b)
    else:
        raise ValueError("closed form requires a uniform or steady-state probe")
    d2 = np.sum((u - np.array([0.0, 0.0, config.tx_z])) ** 2, axis=-1)
    a = 4.0 * sp.d_a * t
    total = config.n_a / (math.pi * a) ** 1.5 * np.exp(-d2 / a)
    c_a = total * np.exp(-rx.kappa_f * c_b * t)
    c_c = total - c_a
    if np.ndim(c_a) == 0:
        return float(c_a), float(c_c)
    return c_a, c_c


def species_masses(field: ConcentrationField) -> np.ndarray:
    return np.array([cylindrical_mass(field, sp) for sp in SPECIES])
