"""Receiver statistics, threshold detection and bit error rates.

The decision statistic is the number q of detected molecules inside the
receiver sphere at the sampling instant, modelled as Poisson with mean
q_bar.  q_bar depends on the current bit and the previous L bits; the table
of those means is built by running the nonlinear solver for every pattern.
Patterns share prefixes, so the runs are organised as a trie: each prefix is
simulated once and forked for both continuations.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from itertools import product
from types import MappingProxyType

import numpy as np
from numpy.polynomial.legendre import leggauss

from .core import ConcentrationField, ScenarioConfig, Species, grid_from_spec, validate
from .diffusion import kernels_for
from .numerics import RngStream, poisson_cdf, poisson_sample
from .solver import ReleaseSchedule, Simulation, write_csv

MC_CHUNK = 1 << 16


class ReceiverMode(str, Enum):
    POINT = "point"
    QUADRATURE = "quadrature"


@dataclass(frozen=True)
class DetectionSetup:
    rx_z: float = 0.0
    rx_radius: float = 2.5e-7
    t_s: float | None = None  # None: pick the peak of the isolated response
    memory: int = 2
    gamma: int = 0
    mode: ReceiverMode = ReceiverMode.POINT
    species: Species = Species.C

    def __post_init__(self):
        object.__setattr__(self, "mode", ReceiverMode(self.mode))
        object.__setattr__(self, "species", Species(self.species))
        if self.memory < 0:
            raise ValueError("ISI memory L must be >= 0")
        if self.gamma < 0:
            raise ValueError("threshold must be >= 0")
        if not self.rx_radius > 0:
            raise ValueError("receiver radius must be positive")
        if self.t_s is not None and not self.t_s > 0:
            raise ValueError("sampling time must be positive")

    @classmethod
    def from_config(cls, config: ScenarioConfig, **kw) -> "DetectionSetup":
        return cls(rx_z=config.rx_z, rx_radius=config.rx_radius, **kw)


# ---------------------------------------------------------------- receiver

def _bilinear(grid, c, rho, z):
    k = np.clip(np.searchsorted(grid.rho, rho, side="right") - 1, 0, grid.rho.size - 2)
    j = np.clip(np.searchsorted(grid.z, z, side="right") - 1, 0, grid.z.size - 2)
    fr = (rho - grid.rho[k]) / (grid.rho[k + 1] - grid.rho[k])
    fz = (z - grid.z[j]) / (grid.z[j + 1] - grid.z[j])
    return ((1 - fr) * (1 - fz) * c[k, j] + fr * (1 - fz) * c[k + 1, j]
            + (1 - fr) * fz * c[k, j + 1] + fr * fz * c[k + 1, j + 1])


def _sphere_rule(n_r=8, n_theta=16):
    xs, ws = leggauss(n_r)
    xt, wt = leggauss(n_theta)
    s = 0.5 * (xs + 1)  # in units of the radius
    th = 0.5 * math.pi * (xt + 1)
    S, TH = np.meshgrid(s, th, indexing="ij")
    W = np.outer(0.5 * ws, 0.5 * math.pi * wt) * S**2 * np.sin(TH)
    return S.ravel(), TH.ravel(), W.ravel()


_SPHERE = _sphere_rule()


def receiver_mean(field: ConcentrationField, setup: DetectionSetup) -> float:
    """Expected molecule count of the detected species inside the receiver."""
    g = field.grid
    r, z0 = setup.rx_radius, setup.rx_z
    if abs(z0) + r > g.z_max or r > g.rho[-1]:
        raise ValueError("receiver extends past the domain")
    c = field[setup.species]
    if setup.mode is ReceiverMode.POINT:
        return float(c[0, g.z_index(z0)] * 4.0 / 3.0 * math.pi * r**3)
    s, th, w = _SPHERE
    vals = _bilinear(g, c, r * s * np.sin(th), z0 + r * s * np.cos(th))
    return float(2.0 * math.pi * r**3 * (w @ vals))


# ------------------------------------------------------------ ISI table

@dataclass(frozen=True)
class IsiTable:
    memory: int
    t_s: float
    means: MappingProxyType  # pattern (s_{n-L}, ..., s_n) -> q_bar

    def __post_init__(self):
        m = {tuple(int(b) for b in k): float(v) for k, v in dict(self.means).items()}
        expected = set(product((0, 1), repeat=self.memory + 1))
        if set(m) != expected:
            raise ValueError(f"ISI table needs all {len(expected)} patterns")
        if any(v < 0 or not math.isfinite(v) for v in m.values()):
            raise ValueError("q_bar must be finite and non-negative")
        object.__setattr__(self, "means", MappingProxyType(dict(sorted(m.items()))))

    @property
    def patterns(self):
        return tuple(self.means)

    def conditional(self, bit: int) -> np.ndarray:
        return np.array([v for k, v in self.means.items() if k[-1] == bit])

    @property
    def max_mean(self) -> float:
        return max(self.means.values())


class _Trie:
    """Simulations indexed by bit prefix; each prefix is run exactly once."""

    def __init__(self, config: ScenarioConfig, workers: int = 1):
        self.config = config
        self.T = config.symbol_interval
        self.grid = grid_from_spec(config.grid)
        self.kernels = kernels_for(self.grid, config.species, config.delta_t)
        self.workers = max(1, int(workers))
        self.nodes = {}

    def root(self) -> Simulation:
        if () not in self.nodes:
            self.nodes[()] = Simulation(self.config, ReleaseSchedule.from_bits(self.config, ()),
                                        grid=self.grid, kernels=self.kernels)
        return self.nodes[()]

    def extend(self, prefix, t_end=None) -> Simulation:
        prefix = tuple(prefix)
        if prefix in self.nodes and t_end is None:
            return self.nodes[prefix]
        parent = self.root() if len(prefix) <= 1 else self.extend(prefix[:-1])
        if len(prefix) == 0:
            return parent
        sim = parent.fork(ReleaseSchedule.from_bits(self.config, prefix))
        sim.advance_to((len(prefix) - 1) * self.T + (self.T if t_end is None else t_end))
        if t_end is None:
            self.nodes[prefix] = sim
        return sim

    def level(self, prefixes, t_end=None):
        prefixes = [tuple(p) for p in prefixes]
        if self.workers == 1 or len(prefixes) == 1:
            return [self.extend(p, t_end) for p in prefixes]
        with ThreadPoolExecutor(self.workers) as ex:
            return list(ex.map(lambda p: self.extend(p, t_end), prefixes))


def _peak_time(times, values, T):
    sel = (times > 0) & (times <= T * (1 + 1e-12))
    v = values[sel]
    if v.size == 0 or not np.max(v) > 0:
        raise ValueError("no product formed: the isolated response is identically zero")
    return float(times[sel][int(np.argmax(v))])


def sampling_time(config: ScenarioConfig, setup: DetectionSetup, trie: _Trie | None = None) -> float:
    """Step time of the maximum of the isolated single-bit response at u_Rx."""
    trie = trie or _Trie(validate(config))
    first = trie.extend((1,))
    return _peak_time(*_trace_arrays(first, setup), config.symbol_interval)


def _trace_arrays(sim, setup):
    tr = sim.trace()
    return tr.times, tr.species(setup.species)


def build_isi_table(config: ScenarioConfig, setup: DetectionSetup, workers: int = 1,
                    trie: _Trie | None = None) -> IsiTable:
    """q_bar for every (L+1)-bit pattern, each from a full nonlinear run."""
    validate(config)
    trie = trie or _Trie(config, workers)
    T, L = config.symbol_interval, setup.memory
    t_s = setup.t_s if setup.t_s is not None else sampling_time(config, setup, trie)
    if not 0 < t_s <= T * (1 + 1e-12):
        raise ValueError("sampling time must lie in (0, T]")
    for m in range(1, L + 1):
        trie.level(product((0, 1), repeat=m))
    finals = [p for p in product((0, 1), repeat=L + 1) if any(p)]
    sims = trie.level(finals, t_end=t_s)
    means = {p: receiver_mean(s.field, setup) for p, s in zip(finals, sims)}
    means[(0,) * (L + 1)] = 0.0
    return IsiTable(memory=L, t_s=t_s, means=means)


# ------------------------------------------------------------------- BER

def detect(q: int, gamma: int) -> int:
    """Threshold rule: 0 if q <= gamma else 1."""
    if q < 0 or gamma < 0:
        raise ValueError("q and gamma must be non-negative")
    return 0 if q <= gamma else 1


def ber_analytical(table: IsiTable, gamma: int) -> float:
    p1 = float(np.mean(poisson_cdf(int(gamma), table.conditional(1))))
    p0 = float(np.mean(poisson_cdf(int(gamma), table.conditional(0))))
    return 0.5 * (p1 + 1.0 - p0)


@dataclass(frozen=True)
class BerResult:
    gamma: int
    ber_analytical: float
    ber_mc: float | None = None
    trials: int = 0
    errors: int = 0

    @property
    def mc_stderr(self) -> float | None:
        """Binomial standard error of the Monte-Carlo estimate."""
        if not self.trials:
            return None
        p = self.ber_mc
        return math.sqrt(p * (1 - p) / self.trials)

    def consistency_sigma(self) -> float:
        """Standard error implied by the analytical BER for this trial count."""
        p = self.ber_analytical
        return math.sqrt(p * (1 - p) / self.trials)


def _mc_chunk(table, gammas, n, stream):
    gen = stream.generator()
    patterns = table.patterns
    idx = gen.integers(0, len(patterns), size=n)
    gmax = int(max(gammas))
    hist = np.zeros((2, gmax + 2), dtype=np.int64)
    for i, pat in enumerate(patterns):
        cnt = int(np.count_nonzero(idx == i))
        if cnt == 0:
            continue
        q = poisson_sample(table.means[pat], size=cnt, rng=gen)
        hist[pat[-1]] += np.bincount(np.minimum(q, gmax + 1), minlength=gmax + 2)
    return hist


def ber_monte_carlo(table: IsiTable, gamma, trials: int, rng: RngStream, workers: int = 1):
    """Monte-Carlo BER at one threshold (int) or a sequence of thresholds.

    All thresholds are scored on the same draws.  Trials are split into
    fixed chunks with their own substreams, so the counts do not depend on
    ``workers``.
    """
    trials = int(trials)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    single = np.ndim(gamma) == 0
    gammas = [int(gamma)] if single else [int(g) for g in gamma]
    n_chunks = -(-trials // MC_CHUNK)
    sizes = [min(MC_CHUNK, trials - i * MC_CHUNK) for i in range(n_chunks)]
    job = lambda i: _mc_chunk(table, gammas, sizes[i], rng.substream(i))
    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(int(workers)) as ex:
            hists = list(ex.map(job, range(n_chunks)))
    else:
        hists = [job(i) for i in range(n_chunks)]
    hist = np.sum(hists, axis=0)
    cum = np.cumsum(hist, axis=1)
    n0 = int(hist[0].sum())
    out = []
    for g in gammas:
        errors = int(cum[1, g] + (n0 - cum[0, g]))
        out.append(BerResult(g, ber_analytical(table, g), errors / trials, trials, errors))
    return out[0] if single else out


@dataclass(frozen=True)
class SweepResult:
    results: tuple
    gamma_star: int
    ber_star: float

    def to_csv(self, path_or_file) -> None:
        rows = [(r.gamma, r.ber_analytical, r.ber_mc, r.mc_stderr) for r in self.results]
        write_csv(path_or_file, ["gamma", "ber_analytical", "ber_mc", "mc_stderr"], rows,
                  footer=(f"gamma_star={self.gamma_star} ber_star={self.ber_star:.9g}",))


def default_gamma_range(table: IsiTable):
    return range(0, int(math.ceil(3.0 * table.max_mean)) + 1)


def threshold_sweep(table: IsiTable, gamma_range=None, trials: int = 0, rng: RngStream | None = None,
                    workers: int = 1) -> SweepResult:
    """Analytical (and optionally Monte-Carlo) BER over a threshold range."""
    gammas = sorted(int(g) for g in (default_gamma_range(table) if gamma_range is None else gamma_range))
    if not gammas:
        raise ValueError("empty threshold range")
    if trials:
        results = ber_monte_carlo(table, gammas, trials, rng or RngStream(), workers)
    else:
        results = [BerResult(g, ber_analytical(table, g)) for g in gammas]
    best = min(results, key=lambda r: (r.ber_analytical, r.gamma))
    return SweepResult(tuple(results), best.gamma, best.ber_analytical)
