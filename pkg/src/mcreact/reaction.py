"""Exact pointwise flow of A + B <-> C over one time step.

With diffusion switched off the two conserved quantities c11 = a - b and
c12 = a + c reduce the system to a Riccati equation for a,

    da/dt = -kf * (a - r+) * (a - r-),

whose roots r+ >= r- are real.  ``reaction_step`` evaluates the closed-form
solution written around the stable root r+, which is algebraically the same
as the textbook expression built from c2, c3, c4 but free of the
cancellations that expression suffers when kf * c3 >> kb or c11 -> 0.  The
textbook expression is kept in ``closed_form_literal`` for cross-checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConcentrationField, ReactionParams

DEGENERACY_TOL = 1e-8
NEGATIVE_TOL = 1e-9


class ReactionError(ArithmeticError):
    """Non-finite result or conservation failure in the reaction update."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


@dataclass(frozen=True)
class ReactionTriple:
    c_a: float
    c_b: float
    c_c: float

    def __post_init__(self):
        for name in ("c_a", "c_b", "c_c"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v!r}")

    def as_tuple(self):
        return (self.c_a, self.c_b, self.c_c)


def react_arrays(a, b, c, dt: float, kappa_f: float, kappa_b: float):
    """Vectorised reaction flow; returns new (a, b, c) arrays.

    Raises ReactionError (with the flat index of the first offending entry)
    on non-finite output or a negative value beyond rounding level.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if dt < 0:
        raise ValueError("Δt must be non-negative")
    kf, kb = float(kappa_f), float(kappa_b)
    if (kf == 0.0 and kb == 0.0) or dt == 0.0:
        return a.copy(), b.copy(), c.copy()

    c11 = a - b
    c12 = a + c
    if kf == 0.0:
        gain = -c * np.expm1(-kb * dt)
        a_new, b_new, c_new = a + gain, b + gain, c - gain
    else:
        q = kf * c11 - kb
        g = (4.0 * kf * kb) * c12
        # both terms under the root are squares, so there is no cancellation
        c2 = np.sqrt(q * q + g)
        # r+ = (q + c2) / 2kf; for q < 0 use the conjugate g / (c2 - q)
        with np.errstate(divide="ignore", invalid="ignore"):
            r_plus = np.where(q >= 0, q + c2, g / (c2 - q)) / (2.0 * kf)
        x0 = a - r_plus
        s = c2 * dt
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.where(s > 0, np.expm1(-s) / -s, 1.0)
        a_new = r_plus + x0 * np.exp(-s) / (1.0 + x0 * (kf * dt) * phi)
        if kb == 0.0:
            scale = np.maximum(np.maximum(a, b), 1.0)
            degenerate = np.abs(c11) <= DEGENERACY_TOL * scale
            if np.any(degenerate):
                # equal-reactant limit: a(t) = a / (1 + kf t a)
                a_new = np.where(degenerate, a / (1.0 + kf * dt * a), a_new)
        b_new = a_new - c11
        c_new = c12 - a_new

    return _finish(a_new, b_new, c_new, lambda: np.maximum(c12, b + c))


def _finish(a_new, b_new, c_new, scale):
    out = np.stack(np.broadcast_arrays(a_new, b_new, c_new))
    lowest = out.min(axis=0)
    if not (np.isfinite(lowest).all() and np.isfinite(out.max())):
        bad = ~np.isfinite(out).all(axis=0)
        raise ReactionError("non-finite value in reaction update", int(np.flatnonzero(bad)[0]))
    if lowest.min() < 0:
        neg = lowest < -NEGATIVE_TOL * scale()
        if neg.any():
            raise ReactionError(
                "reaction update violated conservation (negative concentration)",
                int(np.flatnonzero(neg)[0]),
            )
        np.maximum(out, 0.0, out=out)
    return out[0], out[1], out[2]


def reaction_step(state: ReactionTriple, dt: float, params: ReactionParams) -> ReactionTriple:
    """Advance one node's (c_A, c_B, c_C) by ``dt`` under the reaction alone."""
    try:
        a, b, c = react_arrays(state.c_a, state.c_b, state.c_c, dt, params.kappa_f, params.kappa_b)
    except ReactionError as exc:
        raise ReactionError(f"{exc} at state {state.as_tuple()}") from None
    return ReactionTriple(float(a), float(b), float(c))


def closed_form_literal(state: ReactionTriple, dt: float, params: ReactionParams) -> ReactionTriple:
    """The closed form in its c2/c3/c4 parametrisation, without stabilisation.

    Requires kappa_f > 0.  Accurate only when the cancellations in c4 are
    mild; used by tests as an independent restatement of the formula.
    """
    kf, kb = params.kappa_f, params.kappa_b
    if kf <= 0:
        raise ValueError("closed_form_literal needs kappa_f > 0")
    a0, b0, _ = state.as_tuple()
    c11 = a0 - b0
    c12 = a0 + state.c_c
    c2 = np.sqrt((-kf * c11 + kb) ** 2 + 4.0 * kf * kb * c12)
    c3 = a0 + b0
    c4 = (c2 - kf * c3 - kb) / (c2 + kf * c3 + kb)
    e = c4 * np.exp(-c2 * dt)
    a = (c2 + kf * c11 - kb - (c2 - kf * c11 + kb) * e) / (2.0 * kf * (1.0 + e))
    b = (c2 - kf * c11 - kb - (c2 + kf * c11 + kb) * e) / (2.0 * kf * (1.0 + e))
    return ReactionTriple(max(float(a), 0.0), max(float(b), 0.0), max(float(c12 - a), 0.0))


def reaction_field_step(field: ConcentrationField, dt: float, params: ReactionParams) -> ConcentrationField:
    """Apply the reaction flow node by node; the timestamp is left unchanged."""
    v = field.values
    try:
        a, b, c = react_arrays(v[0], v[1], v[2], dt, params.kappa_f, params.kappa_b)
    except ReactionError as exc:
        if exc.index is None:
            raise
        k, j = np.unravel_index(exc.index, field.grid.shape)
        rho, z = field.grid.rho[k], field.grid.z[j]
        raise ReactionError(
            f"{exc} at node (rho={rho:.6g} m, z={z:.6g} m), state "
            f"({v[0][k, j]:.6g}, {v[1][k, j]:.6g}, {v[2][k, j]:.6g})",
            exc.index,
        ) from None
    return field.with_values(np.stack([a, b, c]))
