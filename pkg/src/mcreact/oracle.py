"""Independent references for the reaction step.

* ``ode_trajectory`` integrates the well-mixed rate equations with an
  adaptive eighth-order Runge-Kutta method (scipy's DOP853).
* ``ssa_trajectory`` is Gillespie's direct method for the same reaction in a
  volume V, propensities kf nA nB / V and kb nC.
* ``fig1_experiment`` runs the full splitting solver on a uniform mixture
  (equal diffusion coefficients, so diffusion is inert) and compares it with
  both references.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .core import (
    ConcentrationField,
    GridSpec,
    ReactionParams,
    ScenarioConfig,
    SpeciesParams,
    grid_from_spec,
)
from .numerics import RngStream
from .reaction import ReactionTriple
from .solver import ReleaseSchedule, Simulation, write_csv


@dataclass(frozen=True)
class WellMixedState:
    volume: float
    n_a: int
    n_b: int
    n_c: int
    t: float = 0.0

    def __post_init__(self):
        if not self.volume > 0:
            raise ValueError("volume must be positive")
        if min(self.n_a, self.n_b, self.n_c) < 0:
            raise ValueError("molecule counts must be non-negative")

    @classmethod
    def from_concentrations(cls, c: ReactionTriple, volume: float) -> "WellMixedState":
        return cls(volume, *(int(round(x * volume)) for x in c.as_tuple()))


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # shape (n_times, 3)


_BLOCK = 512


def ssa_trajectory(state: WellMixedState, params: ReactionParams, t_end: float, rng: RngStream,
                   times=None) -> Trajectory:
    """Exact stochastic trajectory of molecule counts sampled at ``times``."""
    times = np.linspace(0.0, t_end, 101) if times is None else np.asarray(times, dtype=float)
    kf_v = params.kappa_f / state.volume
    kb = params.kappa_b
    gen = rng.generator()
    na, nb, nc = state.n_a, state.n_b, state.n_c
    t = state.t
    out = np.empty((times.size, 3), dtype=np.int64)
    i = 0
    u = gen.random((_BLOCK, 2))
    ui = 0
    while i < times.size:
        af = kf_v * na * nb
        ab = kb * nc
        a0 = af + ab
        if a0 <= 0:
            out[i:] = (na, nb, nc)
            break
        if ui == _BLOCK:
            u = gen.random((_BLOCK, 2))
            ui = 0
        r1, r2 = u[ui]
        ui += 1
        t_next = t - math.log1p(-r1) / a0
        while i < times.size and times[i] < t_next:
            out[i] = (na, nb, nc)
            i += 1
        if r2 * a0 < af:
            na, nb, nc = na - 1, nb - 1, nc + 1
        else:
            na, nb, nc = na + 1, nb + 1, nc - 1
        t = t_next
    return Trajectory(times, out)


@dataclass
class Ensemble:
    times: np.ndarray
    mean: np.ndarray  # concentrations, (n_times, 3)
    stderr: np.ndarray
    n: int


def ssa_ensemble(state: WellMixedState, params: ReactionParams, t_end: float, n_traj: int,
                 rng: RngStream, times=None, workers: int = 1) -> Ensemble:
    """Mean and standard error of concentrations over independent trajectories."""
    job = lambda k: ssa_trajectory(state, params, t_end, rng.substream(k), times).values
    if workers > 1:
        with ThreadPoolExecutor(int(workers)) as ex:
            runs = list(ex.map(job, range(n_traj)))
    else:
        runs = [job(k) for k in range(n_traj)]
    x = np.stack(runs).astype(float) / state.volume
    t = np.linspace(0.0, t_end, 101) if times is None else np.asarray(times, dtype=float)
    return Ensemble(t, x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(n_traj), n_traj)


def _rates(params, scale):
    kf, kb = params.kappa_f * scale, params.kappa_b

    def f(_t, y):
        r = kf * y[0] * y[1] - kb * y[2]
        return [-r, -r, r]

    return f


def ode_solution(c0: ReactionTriple, params: ReactionParams, t_end: float, rtol: float = 1e-10):
    """Dense-output solution in scaled variables; returns (solution, scale)."""
    scale = max(c0.as_tuple()) or 1.0
    y0 = np.array(c0.as_tuple()) / scale
    sol = solve_ivp(_rates(params, scale), (0.0, t_end), y0, method="DOP853", rtol=rtol,
                    atol=rtol * 1e-6, dense_output=True)
    if not sol.success:
        raise ArithmeticError(f"ODE integration failed: {sol.message}")
    return sol, scale


def ode_trajectory(c0: ReactionTriple, params: ReactionParams, t_end: float, times=None,
                   rtol: float = 1e-10) -> Trajectory:
    times = np.linspace(0.0, t_end, 101) if times is None else np.asarray(times, dtype=float)
    sol, scale = ode_solution(c0, params, t_end, rtol)
    return Trajectory(times, sol.sol(times).T * scale)


def half_life(c0: ReactionTriple, params: ReactionParams, t_max: float = None) -> float:
    """Time at which c_A falls to half its initial value (from the ODE oracle)."""
    guess = math.log(2) / max(params.kappa_f * c0.c_b, 1e-300)
    t_max = t_max or 20.0 * guess
    sol, scale = ode_solution(c0, params, t_max)
    target = 0.5 * c0.c_a / scale
    g = lambda t: sol.sol(t)[0] - target
    if g(t_max) > 0:
        raise ValueError("c_A does not halve within the integration window")
    return brentq(g, 0.0, t_max, xtol=1e-14, rtol=1e-13)


def predicted_half_life(kappa_f: float, c_b0: float) -> float:
    return math.log(2) / (kappa_f * c_b0)


# ------------------------------------------------- uniform-mixture setup

FIG1_CONCENTRATION = 6e13
FIG1_REACTION = ReactionParams(kappa_f=1e-14, kappa_b=1e-18)


def fig1_config() -> ScenarioConfig:
    """Uniform mixture with equal diffusion coefficients.

    The domain is widened to 1 mm so that edge losses cannot reach the
    centre node within the run; spacing still resolves the step kernel.
    """
    d = 1e-9
    return ScenarioConfig(
        species=SpeciesParams(d, d, d),
        reaction=FIG1_REACTION,
        grid=GridSpec(z_max=1e-3, n_rho=163, n_z=325),
        t_max=10.0,
        symbol_interval=10.0,
        n_a=0.0,
    )


@dataclass
class Fig1Report:
    times: np.ndarray
    solver: np.ndarray
    ode: np.ndarray
    ssa: Ensemble

    @property
    def max_rel_deviation(self) -> float:
        """Solver vs ODE, relative to the initial concentration scale per species."""
        scale = np.maximum(np.abs(self.ode).max(axis=0), 1e-300)
        return float(np.max(np.abs(self.solver - self.ode) / scale))

    @property
    def z_scores(self) -> np.ndarray:
        se = np.where(self.ssa.stderr > 0, self.ssa.stderr, np.inf)
        z = (self.ssa.mean - self.ode) / se
        return np.where(self.ssa.stderr > 0, z, np.where(self.ssa.mean == self.ode, 0.0, np.inf))

    def to_csv(self, path_or_file) -> None:
        header = ["t"]
        cols = [self.times]
        for i, s in enumerate("ABC"):
            header += [f"c_{s}_solver", f"c_{s}_ode", f"c_{s}_ssa_mean", f"c_{s}_ssa_se"]
            cols += [self.solver[:, i], self.ode[:, i], self.ssa.mean[:, i], self.ssa.stderr[:, i]]
        footer = (
            f"max_rel_dev_solver_ode={self.max_rel_deviation:.9g} "
            f"max_abs_z_ssa={float(np.max(np.abs(self.z_scores))):.9g} "
            f"trajectories={self.ssa.n}",
        )
        write_csv(path_or_file, header, np.column_stack(cols), footer)


def fig1_experiment(config: ScenarioConfig | None = None, c0: float = FIG1_CONCENTRATION,
                    volume: float = 1e-11, n_traj: int = 1000, rng: RngStream | None = None,
                    n_out: int = 51, workers: int = 1) -> Fig1Report:
    config = config or fig1_config()
    sp = config.species
    if not (sp.d_a == sp.d_b == sp.d_c):
        raise ValueError("the uniform-mixture comparison needs D_A = D_B = D_C")
    grid = grid_from_spec(config.grid)
    v = np.zeros((3, *grid.shape))
    v[0] = v[1] = c0
    sim = Simulation(config, ReleaseSchedule(), grid=grid,
                     initial=ConcentrationField(grid, v, 0.0))
    sim.advance_to(config.t_max)
    tr = sim.trace()
    times = np.linspace(0.0, config.t_max, n_out)
    idx = np.rint(times / config.delta_t).astype(int)
    solver = tr.c_rx[idx]

    start = ReactionTriple(c0, c0, 0.0)
    ode = ode_trajectory(start, config.reaction, config.t_max, times).values
    state = WellMixedState.from_concentrations(start, volume)
    ssa = ssa_ensemble(state, config.reaction, config.t_max, n_traj, rng or RngStream(0, 1),
                       times, workers)
    return Fig1Report(times, solver, ode, ssa)
