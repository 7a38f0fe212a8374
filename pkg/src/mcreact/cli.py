"""Command-line front end.

    mcreact simulate --config t1.cfg --out trace.csv
    mcreact fig1 --out fig1.csv
    mcreact fig2 --config t1.cfg --out fig2.csv
    mcreact ber --config t1.cfg --seed 7 --out ber.csv
    mcreact sweep --config t1.cfg --trials 1e6 --out sweep.csv
    mcreact oracle-compare --out oracle.csv

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import contextlib
import io
import math
import sys
from dataclasses import dataclass, replace

import numpy as np

from .configfile import Experiment, load_experiment
from .core import ConfigError, ProbeDeployment, ProbeMode, ReactionParams, Species
from .detection import DetectionSetup, build_isi_table, default_gamma_range, threshold_sweep
from .diffusion import KernelResolutionError
from .numerics import RngStream
from .oracle import fig1_config, fig1_experiment, half_life, ode_trajectory, predicted_half_life
from .reaction import ReactionTriple, react_arrays
from .solver import ReleaseSchedule, run, write_csv

COMMANDS = ("simulate", "fig1", "fig2", "ber", "sweep", "oracle-compare")
NEEDS_CONFIG = {"simulate", "fig2", "ber", "sweep"}

FIG2_CASES = ((1.1e-10, 2.4e9), (1.1e-10, 2.4e10), (5e-10, 2.4e9), (5e-10, 2.4e10))


@dataclass(frozen=True)
class ExperimentSpec:
    command: str
    config: str | None = None
    out: str | None = None
    seed: int = 0
    trials: int = 1_000_000
    overrides: tuple = ()
    workers: int = 1


def _trials(text: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(v) and v >= 1 and v == int(v)):
        raise argparse.ArgumentTypeError("trials must be a positive integer")
    return int(v)


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _workers(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("workers must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario file (INI sections)")
    common.add_argument("--out", metavar="PATH", help="output CSV (default: standard output)")
    common.add_argument("--seed", type=_seed, default=0, help="random seed (default 0)")
    common.add_argument("--trials", type=_trials, default=1_000_000,
                        help="Monte-Carlo transmissions (default 1e6)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. delta_t=5e-3 or probe.n_b=2.4e10")
    common.add_argument("--workers", type=_workers, default=1, help="worker threads (default 1)")
    parser = argparse.ArgumentParser(prog="mcreact", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "simulate": "run one scenario and write the receiver trace",
        "fig1": "uniform-mixture check against the ODE and SSA oracles",
        "fig2": "receiver traces for direct detection and four probe cases",
        "ber": "BER at the configured threshold (analytical and Monte-Carlo)",
        "sweep": "BER over the threshold range (analytical and Monte-Carlo)",
        "oracle-compare": "closed-form reaction step vs adaptive ODE integration",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def parse_args(argv) -> ExperimentSpec:
    parser = build_parser()
    ns = parser.parse_args(list(argv))
    if ns.command in NEEDS_CONFIG and not ns.config:
        parser.error(f"{ns.command} requires --config")
    return ExperimentSpec(ns.command, ns.config, ns.out, ns.seed, ns.trials, tuple(ns.overrides),
                          ns.workers)


def _setup(exp: Experiment) -> DetectionSetup:
    d, sc = exp.detection, exp.scenario
    return DetectionSetup(rx_z=sc.rx_z, rx_radius=sc.rx_radius, t_s=d.t_s, memory=d.memory,
                          gamma=d.gamma, mode=d.receiver_mode, species=Species(d.detect_species))


def _cmd_simulate(spec, out):
    exp = load_experiment(spec.config, spec.overrides)
    cfg = exp.scenario
    t_end = max(cfg.t_max, len(exp.bits) * cfg.symbol_interval) if exp.bits else cfg.t_max
    run(cfg, ReleaseSchedule.from_bits(cfg, exp.bits), t_end=t_end).to_csv(out)


def _cmd_fig1(spec, out):
    from .configfile import Experiment as _E
    exp = load_experiment(spec.config, spec.overrides, base=_E(scenario=fig1_config()))
    fig1_experiment(exp.scenario, rng=RngStream(spec.seed, 1), workers=spec.workers).to_csv(out)


def _cmd_fig2(spec, out):
    exp = load_experiment(spec.config, spec.overrides)
    base = exp.scenario
    direct = base.evolve(probe=ProbeDeployment())
    traces = [run(direct, ReleaseSchedule.from_bits(direct, (1,)))]
    header = ["t", "C_A_direct"]
    for d_b, n_b in FIG2_CASES:
        cfg = base.evolve(species=replace(base.species, d_b=d_b),
                          probe=ProbeDeployment(ProbeMode.POINT, z=base.rx_z, n_b=n_b))
        traces.append(run(cfg, ReleaseSchedule.from_bits(cfg, (1,))))
        header.append(f"C_C_DB{d_b:g}_NB{n_b:g}")
    cols = [traces[0].times, traces[0].species(Species.A)] + [t.species(Species.C) for t in traces[1:]]
    write_csv(out, header, np.column_stack(cols))


def _ber_common(spec):
    exp = load_experiment(spec.config, spec.overrides)
    table = build_isi_table(exp.scenario, _setup(exp), workers=spec.workers)
    return exp, table


def _table_footer(table):
    return f"t_s={table.t_s:.9g} " + " ".join(
        f"q{''.join(map(str, k))}={v:.9g}" for k, v in table.means.items())


def _cmd_ber(spec, out):
    exp, table = _ber_common(spec)
    rng = RngStream(spec.seed, 2)
    one = threshold_sweep(table, [exp.detection.gamma], spec.trials, rng, spec.workers)
    full = threshold_sweep(table, default_gamma_range(table))
    rows = [(r.gamma, r.ber_analytical, r.ber_mc, r.mc_stderr) for r in one.results]
    write_csv(out, ["gamma", "ber_analytical", "ber_mc", "mc_stderr"], rows,
              footer=(f"gamma_star={full.gamma_star} ber_star={full.ber_star:.9g}",
                      _table_footer(table)))


def _cmd_sweep(spec, out):
    exp, table = _ber_common(spec)
    gmax = exp.detection.gamma_max
    gammas = default_gamma_range(table) if gmax is None else range(0, gmax + 1)
    sweep = threshold_sweep(table, gammas, spec.trials, RngStream(spec.seed, 2), spec.workers)
    rows = [(r.gamma, r.ber_analytical, r.ber_mc, r.mc_stderr) for r in sweep.results]
    write_csv(out, ["gamma", "ber_analytical", "ber_mc", "mc_stderr"], rows,
              footer=(f"gamma_star={sweep.gamma_star} ber_star={sweep.ber_star:.9g}",
                      _table_footer(table)))


def oracle_cases(seed: int, n: int = 200):
    """Random (state, params, horizon) cases over the validated parameter box."""
    gen = RngStream(seed, 3).generator()
    for _ in range(n):
        kf = 10 ** gen.uniform(-16, -12)
        kb = 0.0 if gen.random() < 0.2 else 10 ** gen.uniform(-6, -2)
        c = 10 ** gen.uniform(10, 15, size=3)
        t_end = 10 ** gen.uniform(-1, 2)
        yield ReactionTriple(*c), ReactionParams(kf, kb), float(t_end)


def compare_to_ode(state, params, t_end, n_steps=20):
    times = np.linspace(0.0, t_end, n_steps + 1)
    ref = ode_trajectory(state, params, t_end, times).values
    x = np.array(state.as_tuple())
    out = [x]
    for _ in range(n_steps):
        x = np.array(react_arrays(*x, t_end / n_steps, params.kappa_f, params.kappa_b)).ravel()
        out.append(x)
    got = np.array(out)
    scale = np.maximum(np.abs(ref).max(axis=0), 1e-300)
    return float(np.max(np.abs(got - ref) / scale))


def semigroup_defect(state, params, t_end):
    """Relative gap between one step of t_end and two steps of t_end / 2."""
    x = state.as_tuple()
    one = np.array(react_arrays(*x, t_end, params.kappa_f, params.kappa_b)).ravel()
    half = react_arrays(*x, 0.5 * t_end, params.kappa_f, params.kappa_b)
    two = np.array(react_arrays(*half, 0.5 * t_end, params.kappa_f, params.kappa_b)).ravel()
    return float(np.max(np.abs(one - two)) / max(np.max(np.abs(one)), 1e-300))


def _cmd_oracle(spec, out):
    rows = []
    for i, (state, params, t_end) in enumerate(oracle_cases(spec.seed)):
        dev = compare_to_ode(state, params, t_end)
        sg = semigroup_defect(state, params, t_end)
        rows.append((i, params.kappa_f, params.kappa_b, *state.as_tuple(), t_end, dev, sg))
    hl_state = ReactionTriple(6e17, 6e21, 0.0)
    rx = ReactionParams(1e-22, 0.0)
    hl = half_life(hl_state, rx)
    pred = predicted_half_life(rx.kappa_f, hl_state.c_b)
    write_csv(out, ["case", "kappa_f", "kappa_b", "c_a0", "c_b0", "c_c0", "t_end", "max_rel_dev",
                    "semigroup_defect"], rows,
              footer=(f"max_rel_dev={max(r[-2] for r in rows):.9g} "
                      f"max_semigroup_defect={max(r[-1] for r in rows):.9g}",
                      f"half_life_ode={hl:.9g} half_life_formula={pred:.9g}"))


HANDLERS = {
    "simulate": _cmd_simulate,
    "fig1": _cmd_fig1,
    "fig2": _cmd_fig2,
    "ber": _cmd_ber,
    "sweep": _cmd_sweep,
    "oracle-compare": _cmd_oracle,
}


def run_experiment(spec: ExperimentSpec) -> int:
    buf = io.StringIO()
    try:
        HANDLERS[spec.command](spec, buf)
    except (ConfigError, KernelResolutionError) as exc:
        print(f"mcreact: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError) as exc:
        print(f"mcreact: {spec.command} failed: {exc}", file=sys.stderr)
        return 1
    data = buf.getvalue()
    if spec.out in (None, "-"):
        sys.stdout.write(data)
        sys.stdout.flush()
    else:
        try:
            with open(spec.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(data)
        except OSError as exc:
            print(f"mcreact: cannot write {spec.out}: {exc.strerror}", file=sys.stderr)
            return 1
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        spec = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    with contextlib.suppress(BrokenPipeError):
        return run_experiment(spec)
    return 1


if __name__ == "__main__":
    sys.exit(main())
