import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from mlgspt import model
from mlgspt.errors import SingularGraph
from mlgspt.model import DEFAULT, ParamSet

from conftest import rel_err

H = 1e-5


def test_gating_trivial_points():
    g = model.gating(-1.2)
    assert g.m_inf == 0.5
    g = model.gating(12.0)
    assert g.w_inf == 0.5 and g.tau_w == 1.0
    assert model.gating(-20.0).s_inf == pytest.approx(0.5, abs=1e-15)


def test_gating_ranges():
    V = np.random.default_rng(0).uniform(-120, 140, 10**6)
    g = model.gating(V)
    for name in ("m_inf", "w_inf", "alpha"):
        x = getattr(g, name)
        assert np.all((x >= 0) & (x <= 1))
    assert np.all((g.s_inf >= 0) & (g.s_inf < 1))
    assert np.all((g.tau_w > 0) & (g.tau_w <= 1))


def test_paramset_validation_and_roundtrip():
    with pytest.raises(ValueError):
        ParamSet(C1=0.0)
    with pytest.raises(ValueError):
        ParamSet(g_syn=-1.0)
    with pytest.raises(ValueError):
        ParamSet.from_dict({"bogus": 1.0})
    p = ParamSet(g_syn=4.4, C1=3.0)
    assert ParamSet.from_dict(p.to_dict()) == p


def test_timescales():
    assert DEFAULT.eps == pytest.approx(0.1) and DEFAULT.delta == pytest.approx(0.053)
    assert ParamSet(C1=16.0).eps == pytest.approx(0.2)
    assert ParamSet(phi2=0.003).delta == pytest.approx(0.159)
    ts = model.timescale_params()
    # literal formulas come out swapped; reported for diagnostics only
    assert ts["eps_formula"] == pytest.approx(0.053, abs=1e-3)
    assert ts["delta_formula"] == pytest.approx(0.1, abs=1e-3)


def test_rhs_dimensional_term_by_term():
    p = DEFAULT
    V1, w1, V2, w2 = -40.0, 0.1, -30.0, 0.1
    m = lambda V: 0.5 * (1 + math.tanh((V + 1.2) / 18))
    winf = lambda V: 0.5 * (1 + math.tanh((V - 12) / 17.4))
    a = 1 / (1 + math.exp(-(V2 + 20) / 10))
    s = a / (a + 0.5)
    dV1 = (0 - 4 * m(V1) * (V1 - 120) - 8 * w1 * (V1 + 84) - 2 * (V1 + 60)
           - 4.3 * s * (V1 - 30)) / 8
    dw1 = 0.01 * (winf(V1) - w1) * math.cosh((V1 - 12) / 34.8)
    dV2 = (60 - 4 * m(V2) * (V2 - 120) - 8 * w2 * (V2 + 84) - 2 * (V2 + 60)) / 100
    dw2 = 0.001 * (winf(V2) - w2) * math.cosh((V2 - 12) / 34.8)
    got = model.rhs_dimensional([V1, w1, V2, w2], p)
    np.testing.assert_allclose(got, [dV1, dw1, dV2, dw2], rtol=1e-13)


def test_rhs_zero_at_uncoupled_equilibrium():
    p = ParamSet(g_syn=0.0)
    # bisection on the V1-nullcline / w1-nullcline intersection
    V = brentq(lambda v: float(model.f1(v, model.w_inf(v, p), 0.0, p)), -80, -55)
    d = model.rhs_dimensional([V, float(model.w_inf(V, p)), 0.0, 0.1], p)
    assert abs(d[0]) < 1e-10 and abs(d[1]) < 1e-15


def test_w_inf_state_freezes_w1():
    for V in (-50.0, 0.0, 30.0):
        d = model.rhs_dimensional([V, float(model.w_inf(V)), -20.0, 0.2])
        assert d[1] == 0.0


def test_frames():
    s = [-40.0, 0.1, -30.0, 0.1]
    p = DEFAULT
    slow = model.rhs_nondim(s, p, "slow")
    fast = model.rhs_nondim(s, p, "fast")
    sup = model.rhs_nondim(s, p, "superslow")
    np.testing.assert_allclose(slow, fast / p.eps, rtol=1e-15)
    np.testing.assert_allclose(sup, slow / p.delta, rtol=1e-15)
    assert fast[3] == pytest.approx(p.eps * p.delta * model.g2(-30.0, 0.1, p), rel=1e-15)
    # slow frame is the dimensional field in units of T_S
    np.testing.assert_allclose(slow / model.T_S, model.rhs_dimensional(s, p), rtol=1e-13)
    with pytest.raises(ValueError):
        model.rhs_nondim(s, p, "medium")


def test_graph_F1_hand_value():
    gr = model.graph_F1(-1.2, 0.0, ParamSet(g_syn=0.0))
    assert gr.F1 == pytest.approx(124.8 / 662.4, rel=1e-14)


def test_graph_identities_dense():
    p = ParamSet(g_syn=4.4)
    V1 = np.linspace(-83.0, 140.0, 2001)
    for V2 in (-60.0, -20.0, 0.0, 35.0):
        w1 = model.graph_F1(V1, V2, p).F1
        r = model.f1(V1, w1, V2, p)
        assert np.max(np.abs(r)) < 1e-12
    V2 = np.linspace(-83.0, 140.0, 2001)
    assert np.max(np.abs(model.f2(V2, model.graph_F2(V2, p), p))) < 1e-12


def test_graph_floor():
    with pytest.raises(SingularGraph):
        model.graph_F1(-84.0, 0.0)
    with pytest.raises(SingularGraph):
        model.graph_F2(-84.0 + 1e-8)


def test_scalar_and_array_paths_agree():
    p = ParamSet(g_syn=4.4)
    a = model.graph_F1(-20.0, 10.0, p)
    b = model.graph_F1(np.array([-20.0]), np.array([10.0]), p)
    for x, y in zip(a, b):
        assert float(x) == float(y[0])


@settings(max_examples=60, deadline=None)
@given(V1=st.floats(-80.0, 140.0), V2=st.floats(-80.0, 100.0), g=st.floats(0.0, 6.0))
def test_graph_F1_partials_fd(V1, V2, g):
    p = ParamSet(g_syn=g)
    gr = model.graph_F1(V1, V2, p)
    F = lambda a, b: model.graph_F1(a, b, p)
    fd = {
        "F1V1": (F(V1 + H, V2).F1 - F(V1 - H, V2).F1) / (2 * H),
        "F1V2": (F(V1, V2 + H).F1 - F(V1, V2 - H).F1) / (2 * H),
        "F1V1V1": (F(V1 + H, V2).F1V1 - F(V1 - H, V2).F1V1) / (2 * H),
        "F1V1V2": (F(V1, V2 + H).F1V1 - F(V1, V2 - H).F1V1) / (2 * H),
        "F1V2V2": (F(V1, V2 + H).F1V2 - F(V1, V2 - H).F1V2) / (2 * H),
    }
    for name, v in fd.items():
        a = getattr(gr, name)
        scale = max(abs(a), 1e-6 * max(abs(gr.F1V1), abs(gr.F1), 1e-3))
        assert abs(a - v) <= 1e-6 * scale + 1e-10, name


def test_graph_F2_derivative_and_two_folds():
    V = np.linspace(-60.0, 40.0, 20001)
    F2, dF2 = model.graph_F2_d(V)
    fd = (model.graph_F2(V + H) - model.graph_F2(V - H)) / (2 * H)
    assert np.max(np.abs(dF2 - fd) / np.maximum(np.abs(dF2), 1e-3)) < 1e-6
    assert np.count_nonzero(np.diff(np.sign(dF2))) == 2


def _fd_jac(fun, x, h=H):
    x = np.asarray(x, float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.array(cols).T


@pytest.mark.parametrize("pt", [(-30.0, 0.05, -40.0, 0.1), (5.0, 0.3, 20.0, 0.35),
                                (20.0, 0.2, 50.0, 0.1)])
def test_jac_slow_layer(pt):
    p = ParamSet(g_syn=4.3)
    J = model.jac_slow_layer(pt, p)
    assert J[2, 0] == 0.0 and J[2, 1] == 0.0
    fun = lambda x: model.rhs_nondim([x[0], x[1], x[2], pt[3]], p)[:3]
    Jfd = _fd_jac(fun, pt[:3], h=1e-6)
    # relative to each row's magnitude; isolated tiny entries carry FD roundoff
    row = np.max(np.abs(J), axis=1, keepdims=True)
    assert np.max(np.abs(J - Jfd) / np.maximum(row, 1e-12)) < 1e-6
    ev = np.sort_complex(np.linalg.eigvals(J))
    blk = np.linalg.eigvals(J[:2, :2])
    want = np.sort_complex(np.append(blk, J[2, 2]))
    np.testing.assert_allclose(ev, want, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("pt", [(6.6, 9.0, 0.35), (-28.0, -42.0, 0.09), (20.0, 30.0, 0.4)])
@pytest.mark.parametrize("delta", [0.0, 0.053])
def test_jac_desing(pt, delta):
    p = ParamSet(g_syn=4.4)
    J = model.jac_desing(pt, p, delta)
    Jfd = _fd_jac(lambda x: model.desing_rhs(x, p, delta), pt, h=1e-6)
    scale = np.maximum(np.abs(J), 1e-6 * np.max(np.abs(J)))
    assert np.max(np.abs(J - Jfd) / scale) < 1e-5
    if delta == 0.0:
        assert np.all(J[2] == 0.0)
        assert model.desing_rhs(pt, p, 0.0)[2] == 0.0


def test_partials_fd():
    p = ParamSet(g_syn=4.3)
    s = np.array([-20.0, 0.2, 10.0, 0.3])
    d = model.partials(*s, p)
    comps = {"f1": (model.f1, (0, 1, 2)), "g1": (model.g1, (0, 1)),
             "f2": (model.f2, (2, 3)), "g2": (model.g2, (2, 3))}
    names = {"f1": ("f1V1", "f1w1", "f1V2"), "g1": ("g1V1", "g1w1"),
             "f2": ("f2V2", "f2w2"), "g2": ("g2V2", "g2w2")}
    for c, (fun, idx) in comps.items():
        for name, k in zip(names[c], idx):
            e = np.zeros(4)
            e[k] = 1e-6
            args = lambda y: [y[i] for i in idx]
            fd = (fun(*args(s + e), p) - fun(*args(s - e), p)) / 2e-6
            assert rel_err(getattr(d, name), fd, 1e-6) < 1e-6, name
