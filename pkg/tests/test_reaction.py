import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcreact.core import ReactionParams, build_grid, ConcentrationField
from mcreact.oracle import ode_trajectory
from mcreact.reaction import (
    ReactionError,
    ReactionTriple,
    closed_form_literal,
    react_arrays,
    reaction_field_step,
    reaction_step,
)

conc = st.floats(1e10, 1e15)
kf_st = st.floats(1e-16, 1e-12)
kb_st = st.one_of(st.just(0.0), st.floats(1e-6, 1e-2))
dt_st = st.floats(1e-3, 10.0)


def test_no_reaction_is_identity():
    s = ReactionTriple(1e13, 2e13, 3e13)
    assert reaction_step(s, 5.0, ReactionParams(0.0, 0.0)) == s


def test_half_conversion_time():
    # c_A = c_B = 6e13, kappa_f = 1e-14: a(t) = a0 / (1 + kf a0 t) halves at t = 1/0.6 s
    out = reaction_step(ReactionTriple(6e13, 6e13, 0.0), 1 / 0.6, ReactionParams(1e-14, 0.0))
    assert out.c_a == pytest.approx(3e13, rel=1e-12)
    assert out.c_b == pytest.approx(3e13, rel=1e-12)
    assert out.c_c == pytest.approx(3e13, rel=1e-12)


def test_backward_from_product_only():
    s = ReactionTriple(0.0, 5e13, 1e13)
    p = ReactionParams(1e-14, 1e-3)
    out = reaction_step(s, 100.0, p)
    assert out.c_a > 0
    assert out.c_b + out.c_c == 6e13
    ref = ode_trajectory(s, p, 100.0, [0.0, 100.0]).values[-1]
    assert np.allclose(out.as_tuple(), ref, rtol=1e-8, atol=0)


def test_pure_decay():
    out = reaction_step(ReactionTriple(0.0, 0.0, 1e13), 2.0, ReactionParams(0.0, 0.5))
    assert out.c_c == pytest.approx(1e13 * np.exp(-1.0), rel=1e-14)
    assert out.c_a == pytest.approx(1e13 * (1 - np.exp(-1.0)), rel=1e-14)


def test_agrees_with_literal_form():
    s = ReactionTriple(3e13, 5e13, 1e12)
    p = ReactionParams(1e-14, 1e-3)
    a = reaction_step(s, 0.7, p)
    b = closed_form_literal(s, 0.7, p)
    assert np.allclose(a.as_tuple(), b.as_tuple(), rtol=1e-10)


def test_negative_state_rejected():
    with pytest.raises(ValueError):
        ReactionTriple(-1.0, 0.0, 0.0)


def test_error_carries_index():
    err = ReactionError("x", 3)
    assert err.index == 3


@settings(max_examples=200, deadline=None)
@given(conc, conc, conc, kf_st, kb_st, dt_st)
def test_conservation(a, b, c, kf, kb, dt):
    out = reaction_step(ReactionTriple(a, b, c), dt, ReactionParams(kf, kb))
    assert min(out.as_tuple()) >= 0
    assert out.c_a + out.c_c == pytest.approx(a + c, rel=1e-12)
    assert out.c_b + out.c_c == pytest.approx(b + c, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(conc, conc, conc, kf_st, kb_st, dt_st, st.floats(0.05, 0.95))
def test_semigroup(a, b, c, kf, kb, dt, frac):
    p = ReactionParams(kf, kb)
    s = ReactionTriple(a, b, c)
    one = np.array(reaction_step(s, dt, p).as_tuple())
    two = np.array(reaction_step(reaction_step(s, frac * dt, p), (1 - frac) * dt, p).as_tuple())
    assert np.max(np.abs(one - two)) <= 1e-10 * np.max(np.abs(one))


@settings(max_examples=60, deadline=None)
@given(conc, conc, conc, kf_st, kb_st, st.floats(0.1, 50.0))
def test_matches_ode_oracle(a, b, c, kf, kb, t):
    s = ReactionTriple(a, b, c)
    p = ReactionParams(kf, kb)
    ref = ode_trajectory(s, p, t, [0.0, t]).values[-1]
    got = np.array(reaction_step(s, t, p).as_tuple())
    scale = max(ref.max(), 1.0)
    assert np.max(np.abs(got - ref)) <= 1e-7 * scale


def test_field_step_matches_scalar_nodewise():
    g = build_grid(1e-4, 9, 11)
    rng = np.random.default_rng(5)
    v = 10 ** rng.uniform(10, 15, size=(3, 9, 11))
    v[:, 2, 3] = 0.0
    p = ReactionParams(1e-14, 1e-3)
    out = reaction_field_step(ConcentrationField(g, v, 1.5), 0.3, p)
    assert out.t == 1.5
    for k in range(9):
        for j in range(11):
            ref = reaction_step(ReactionTriple(*v[:, k, j]), 0.3, p).as_tuple()
            assert np.allclose(out.values[:, k, j], ref, rtol=1e-13, atol=0)


def test_uniform_field_and_missing_partner():
    g = build_grid(1e-4, 9, 11)
    v = np.empty((3, 9, 11))
    v[0], v[1], v[2] = 2e13, 3e13, 1e12
    p = ReactionParams(1e-14, 0.0)
    out = reaction_field_step(ConcentrationField(g, v), 1.0, p)
    ref = reaction_step(ReactionTriple(2e13, 3e13, 1e12), 1.0, p).as_tuple()
    assert np.allclose(out.values.reshape(3, -1).T, ref, rtol=1e-14)
    v[1] = 0.0
    same = reaction_field_step(ConcentrationField(g, v), 1.0, p)
    assert np.array_equal(same.values, v)


def test_react_arrays_rejects_negative_step():
    with pytest.raises(ValueError):
        react_arrays(1.0, 1.0, 1.0, -1.0, 1e-14, 0.0)
