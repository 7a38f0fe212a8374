import math

import numpy as np
import pytest

from mcreact.core import (
    ConcentrationField,
    GridSpec,
    ProbeDeployment,
    ProbeMode,
    ReactionParams,
    ScenarioConfig,
    Species,
    SpeciesParams,
    build_grid,
)
from mcreact.detection import (
    DetectionSetup,
    IsiTable,
    ber_analytical,
    ber_monte_carlo,
    build_isi_table,
    detect,
    receiver_mean,
    sampling_time,
    threshold_sweep,
)
from mcreact.numerics import RngStream

SMALL = GridSpec(z_max=1e-4, n_rho=55, n_z=109)
V_RX = 4.0 / 3.0 * math.pi * (2.5e-7) ** 3


def probe_config(**kw):
    base = dict(grid=SMALL, t_max=2.0, symbol_interval=2.0, species=SpeciesParams(d_b=1.1e-10),
                probe=ProbeDeployment(ProbeMode.POINT, z=0.0, n_b=2.4e9, repeat=True))
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.fixture(scope="module")
def grid():
    return build_grid(1e-4, 55, 109)


@pytest.mark.parametrize("mode", ["point", "quadrature"])
def test_receiver_uniform_and_zero(grid, mode):
    setup = DetectionSetup(mode=mode)
    v = np.zeros((3, *grid.shape))
    assert receiver_mean(ConcentrationField(grid, v), setup) == 0.0
    v[2] = 4e20
    assert receiver_mean(ConcentrationField(grid, v), setup) == pytest.approx(4e20 * V_RX, rel=1e-12)


def test_receiver_linear_field(grid):
    v = np.zeros((3, *grid.shape))
    v[2] = 1e20 + 3e26 * grid.z[None, :]
    f = ConcentrationField(grid, v)
    for mode in ("point", "quadrature"):
        got = receiver_mean(f, DetectionSetup(mode=mode))
        assert got == pytest.approx(1e20 * V_RX, rel=5e-3)


def test_receiver_quadrature_against_monte_carlo(grid):
    # c = c0 + a rho + b z is reproduced exactly by bilinear interpolation, so
    # the only error left is the sphere rule; the oracle is a plain 3D
    # Monte-Carlo volume integral
    r0, c0, a, b = 2.5e-7, 1e20, 2e26, 5e25
    v = np.zeros((3, *grid.shape))
    v[2] = c0 + a * grid.rho[:, None] + b * grid.z[None, :]
    got = receiver_mean(ConcentrationField(grid, v), DetectionSetup(mode="quadrature"))
    p = np.random.default_rng(0).uniform(-r0, r0, size=(4_000_000, 3))
    p = p[np.sum(p**2, 1) <= r0 * r0]
    vals = c0 + a * np.hypot(p[:, 0], p[:, 1]) + b * p[:, 2]
    ref = V_RX * vals.mean()
    se = V_RX * vals.std() / math.sqrt(vals.size)
    assert abs(got - ref) < 4 * se
    assert got == pytest.approx(ref, rel=5e-3)


def test_receiver_outside_domain(grid):
    with pytest.raises(ValueError):
        receiver_mean(ConcentrationField.zeros(grid), DetectionSetup(rx_z=1e-4))


def test_no_product_without_reaction():
    cfg = probe_config(reaction=ReactionParams(0.0, 0.0))
    with pytest.raises(ValueError, match="no product formed"):
        sampling_time(cfg, DetectionSetup.from_config(cfg))


def test_sampling_time_inside_interval():
    cfg = probe_config()
    t_s = sampling_time(cfg, DetectionSetup.from_config(cfg))
    assert 0 < t_s < cfg.symbol_interval


@pytest.mark.parametrize("d_b", [5e-10, 1.1e-10])
def test_sampling_time_step_refinement(d_b):
    grid = GridSpec(z_max=1e-4, n_rho=75, n_z=149)
    ts = []
    for dt in (1e-2, 5e-3):
        cfg = probe_config(grid=grid, delta_t=dt, species=SpeciesParams(d_b=d_b))
        ts.append(sampling_time(cfg, DetectionSetup.from_config(cfg)))
    assert abs(ts[1] - ts[0]) <= 1e-2 + 1e-12


@pytest.fixture(scope="module")
def small_table():
    cfg = probe_config()
    return build_isi_table(cfg, DetectionSetup.from_config(cfg, memory=1))


def test_isi_table_structure(small_table):
    assert small_table.patterns == ((0, 0), (0, 1), (1, 0), (1, 1))
    assert small_table.means[(0, 0)] == 0.0
    assert small_table.means[(0, 1)] >= small_table.means[(0, 0)]
    assert small_table.means[(1, 1)] > small_table.means[(0, 1)]


def test_isi_table_matches_direct_runs(small_table):
    from mcreact.solver import ReleaseSchedule, Simulation
    cfg = probe_config()
    sim = Simulation(cfg, ReleaseSchedule.from_bits(cfg, (1, 1)))
    sim.advance_to(cfg.symbol_interval + small_table.t_s)
    q = receiver_mean(sim.field, DetectionSetup.from_config(cfg))
    assert q == small_table.means[(1, 1)]


def test_memoryless_table():
    cfg = probe_config(n_a=5e8)
    tab = build_isi_table(cfg, DetectionSetup.from_config(cfg, memory=0, t_s=0.5))
    assert len(tab.means) == 2 and tab.t_s == 0.5


def test_table_requires_all_patterns():
    with pytest.raises(ValueError):
        IsiTable(1, 1.0, {(0, 0): 0.0, (0, 1): 1.0})


def test_detect_rule():
    assert detect(5, 5) == 0
    assert detect(6, 5) == 1
    assert detect(0, 0) == 0


def memoryless(q1, q0=0.0):
    return IsiTable(0, 1.0, {(0,): q0, (1,): q1})


def test_ber_examples():
    assert ber_analytical(memoryless(10.0), 0) == pytest.approx(0.5 * math.exp(-10), rel=1e-12)
    assert ber_analytical(memoryless(10.0), 0) == pytest.approx(2.27e-5, rel=1e-3)
    assert ber_analytical(memoryless(10.0, 1.0), 10_000) == pytest.approx(0.5)


def test_monte_carlo_degenerate_channel():
    tab = IsiTable(1, 1.0, {(0, 0): 0.0, (0, 1): 0.0, (1, 0): 0.0, (1, 1): 0.0})
    r = ber_monte_carlo(tab, 0, 100_000, RngStream(3))
    assert abs(r.ber_mc - 0.5) <= 3 * r.mc_stderr


def test_monte_carlo_is_deterministic_and_worker_invariant():
    tab = memoryless(12.0, 2.0)
    a = ber_monte_carlo(tab, [0, 3, 6], 300_000, RngStream(9))
    b = ber_monte_carlo(tab, [0, 3, 6], 300_000, RngStream(9))
    c = ber_monte_carlo(tab, [0, 3, 6], 300_000, RngStream(9), workers=3)
    assert [r.errors for r in a] == [r.errors for r in b] == [r.errors for r in c]


def test_monte_carlo_agrees_with_analytical():
    tab = IsiTable(1, 1.0, {(0, 0): 0.5, (0, 1): 20.0, (1, 0): 4.0, (1, 1): 25.0})
    for r in ber_monte_carlo(tab, list(range(0, 30, 3)), 10**6, RngStream(11)):
        assert abs(r.ber_mc - r.ber_analytical) <= 4 * max(r.consistency_sigma(), 1e-12)


def test_sweep_interior_optimum_and_single_entry():
    tab = memoryless(40.0, 2.0)
    sw = threshold_sweep(tab)
    bers = [r.ber_analytical for r in sw.results]
    assert sw.ber_star < bers[0] and sw.ber_star < bers[-1]
    assert sw.ber_star == min(bers)
    one = threshold_sweep(tab, [0])
    assert len(one.results) == 1 and one.gamma_star == 0


def test_sweep_invariant_to_key_order():
    m = {(0, 0): 0.5, (0, 1): 20.0, (1, 0): 4.0, (1, 1): 25.0}
    a = threshold_sweep(IsiTable(1, 1.0, m), trials=10_000, rng=RngStream(1))
    b = threshold_sweep(IsiTable(1, 1.0, dict(reversed(list(m.items())))), trials=10_000, rng=RngStream(1))
    assert a == b


def test_setup_validation():
    with pytest.raises(ValueError):
        DetectionSetup(memory=-1)
    assert DetectionSetup(species="A").species is Species.A


def test_point_and_quadrature_agree_on_baseline_geometry():
    from mcreact.diffusion import point_source

    g = build_grid(3e-4, 163, 325)
    t = (5e-5) ** 2 / (6 * 1e-9)
    v = np.zeros((3, *g.shape))
    v[0] = point_source(g, 5e8, 5e-5, 1e-9, t)
    f = ConcentrationField(g, v)
    pt = receiver_mean(f, DetectionSetup(mode="point", species=Species.A))
    quad = receiver_mean(f, DetectionSetup(mode="quadrature", species=Species.A))
    assert quad == pytest.approx(pt, rel=0.01)
